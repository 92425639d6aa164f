#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dms/engine.hpp"
#include "dms/network_spec.hpp"
#include "dms/tensor.hpp"

namespace dms {

/// Builds one of the four architectures. `widths` overrides the default
/// per-conv output channel counts (6 entries, or 8 for Dilated8Pooling).
NetworkSpec build_network(Architecture arch, int in_channels, int num_classes,
                          std::optional<std::vector<int>> widths = std::nullopt);

std::vector<int> default_widths(Architecture arch);

std::size_t param_count(const NetworkSpec& spec);

/// One ConvParams per conv layer in spec order; the classifier is last.
template <typename T>
struct Params {
  std::vector<ConvParams<T>> convs;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& c : convs) n += c.count();
    return n;
  }
  bool operator==(const Params& o) const {
    if (convs.size() != o.convs.size()) return false;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      if (!(convs[i].weights == o.convs[i].weights) || convs[i].bias != o.convs[i].bias ||
          convs[i].rate != o.convs[i].rate) {
        return false;
      }
    }
    return true;
  }

  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    for (const auto& c : convs) {
      ConvParams<U> p;
      p.weights = c.weights.template cast<U>();
      p.bias.assign(c.bias.begin(), c.bias.end());
      p.rate = c.rate;
      out.convs.push_back(std::move(p));
    }
    return out;
  }
};

/// All-zero parameters with the right shapes.
template <typename T>
Params<T> zero_params(const NetworkSpec& spec);

/// Zero bias, Gaussian weights with std sqrt(2 / fan_in).
template <typename T>
Params<T> init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Intermediate tensors kept by forward for the backward pass.
template <typename T>
struct ForwardCache {
  Shape input_shape;
  std::vector<Tensor<T>> conv_inputs;  // per conv, including the classifier
  std::vector<Tensor<T>> pre_activations;  // per dilated conv
  std::vector<PoolRecord> pools;  // per pooling layer
};

template <typename T>
Tensor<T> forward(const NetworkSpec& spec, const Params<T>& params, const Tensor<T>& batch,
                  ForwardCache<T>* cache = nullptr);

template <typename T>
struct Gradients {
  std::vector<ConvGrads<T>> convs;  // parameter gradients, classifier last
  Tensor<T> input;  // d loss / d batch, empty unless requested
};

template <typename T>
Gradients<T> backward(const NetworkSpec& spec, const Params<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, bool need_input_grad = false);

template <typename T>
void sgd_update(Params<T>& params, const Gradients<T>& grads, double learning_rate, double weight_decay);

/// Weight file: "DSW1", u32 header words, then f32 parameters, all little-endian.
void save_params(const std::filesystem::path& path, const NetworkSpec& spec, const Params<float>& params);
/// Reads the spec echoed in the header along with the parameters.
std::pair<NetworkSpec, Params<float>> load_params(const std::filesystem::path& path);

}  // namespace dms
