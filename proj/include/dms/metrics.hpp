#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dms {

/// C x C tallies indexed (reference, predicted). Void pixels are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t row_total(std::size_t c) const;
  std::uint64_t col_total(std::size_t c) const;
  bool empty() const { return total() == 0; }

  /// Increments (label, prediction) once per pixel whose mask entry is zero.
  void accumulate(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions,
                  std::span<const std::uint8_t> void_mask);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

// Each metric is absent (nullopt) when undefined, e.g. on an empty matrix.
std::optional<double> overall_accuracy(const ConfusionMatrix& m);
/// Mean per-class recall over classes present in the reference.
std::optional<double> average_accuracy(const ConfusionMatrix& m);
std::optional<double> kappa(const ConfusionMatrix& m);
/// Per-class F1; nullopt for classes absent from both reference and prediction.
std::vector<std::optional<double>> f1_per_class(const ConfusionMatrix& m);
std::optional<double> mean_f1(const ConfusionMatrix& m);

struct MetricsReport {
  ConfusionMatrix matrix;
  std::optional<double> overall_accuracy;
  std::optional<double> average_accuracy;
  std::optional<double> kappa;
  std::vector<std::optional<double>> f1;
  std::optional<double> mean_f1;
};

MetricsReport summarize(const ConfusionMatrix& m);

/// `size,oa,aa,kappa,mean_f1,f1_0,...` header and row; absent values are empty.
std::string metrics_csv_header(std::size_t classes);
std::string metrics_csv_row(const MetricsReport& r, int size);
std::string metrics_text(const MetricsReport& r);

}  // namespace dms
