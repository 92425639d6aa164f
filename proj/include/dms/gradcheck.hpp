#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dms/network_spec.hpp"

namespace dms {

/// Worst finite-difference disagreement for one parameter block or layer.
struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double worst() const;
  bool passed(double tolerance) const { return worst() < tolerance; }
  std::string to_text() const;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// vanishing gradients from turning round-off into large ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences on every layer kernel at 64-bit on random inputs.
GradcheckReport check_layers(std::uint64_t seed);

struct NetworkCheckOptions {
  int height = 6;
  int width = 6;
  int batch = 1;
  // Perturbs the analytic gradient; negative control for the harness.
  bool corrupt_backward = false;
};

/// Central differences over every parameter and the input of a full network
/// at 64-bit, loss = sum(G * logits) for a fixed random G.
GradcheckReport check_network(const NetworkSpec& spec, std::uint64_t seed, const NetworkCheckOptions& options = {});

}  // namespace dms
