#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dms/network_spec.hpp"
#include "dms/tensor.hpp"

namespace dms {

/// Zero "same" padding for one axis of a dilated kernel. The leading side gets
/// the rounded-down half, the trailing side the remainder.
struct AxisPadding {
  int lead = 0;
  int trail = 0;
};

inline int effective_extent(int kernel, int rate) { return (kernel - 1) * rate + 1; }

inline AxisPadding same_padding(int kernel, int rate) {
  const int total = (kernel - 1) * rate;
  return {total / 2, total - total / 2};
}

/// Weights (out, in, kH, kW), bias (out) and dilation rate. Stride is always 1.
template <typename T>
struct ConvParams {
  Tensor<T> weights;
  std::vector<T> bias;
  int rate = 1;

  std::size_t out_channels() const { return weights.shape().n; }
  std::size_t in_channels() const { return weights.shape().c; }
  std::size_t kernel_h() const { return weights.shape().h; }
  std::size_t kernel_w() const { return weights.shape().w; }
  std::size_t count() const { return weights.size() + bias.size(); }
};

template <typename T>
ConvParams<T> make_conv_params(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                               int rate);

template <typename T>
struct ConvGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
Tensor<T> conv2d_dilated_forward(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
ConvGrads<T> conv2d_dilated_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                                     const ConvParams<T>& params, bool need_input_grad = true);

/// Argmax bookkeeping from a pooling forward pass: flat in-plane index of the
/// winning input element for every output element.
struct PoolRecord {
  Shape input_shape;
  std::vector<std::int32_t> argmax;
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  PoolRecord record;
};

template <typename T>
PoolResult<T> maxpool_same_forward(const Tensor<T>& input, int window);

template <typename T>
Tensor<T> maxpool_same_backward(const Tensor<T>& grad_out, const PoolRecord& record);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs);

/// Splits grad_out along channels at the offsets implied by `channels`.
template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::span<const std::size_t> channels);

template <typename T>
struct CrossEntropyResult {
  double loss = 0.0;
  Tensor<T> grad_logits;
  double accuracy = 1.0;
  std::size_t valid_pixels = 0;
  bool all_void = false;
};

/// Mean softmax cross-entropy over non-void pixels. `labels` and `void_mask`
/// are (N, H, W) row-major; a nonzero mask entry marks a void pixel.
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                            std::span<const std::uint8_t> void_mask);

/// p <- p - lr * (g + weight_decay * p)
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double learning_rate, double weight_decay);

/// Weights are decayed, biases are not.
template <typename T>
void sgd_step(ConvParams<T>& params, const ConvGrads<T>& grads, double learning_rate, double weight_decay);

/// 1 + sum over conv layers of (k-1)*r, plus (window-1) per pooling layer.
int receptive_field(const NetworkSpec& spec);

}  // namespace dms
