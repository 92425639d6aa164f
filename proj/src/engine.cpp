#include "dms/engine.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dms {

namespace {

// Valid output range [lo, hi) along an axis of length n for tap offset d, so
// that 0 <= i + d < n.
struct Range {
  std::size_t lo;
  std::size_t hi;
};

inline Range valid_range(std::ptrdiff_t n, std::ptrdiff_t d) {
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - d);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Fixed-order partial sums so float builds vectorize without reassociation flags.
template <typename T>
T dot(const T* a, const T* b, std::size_t len) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail = 0;
  for (; i < len; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

template <typename T>
void axpy(T* y, const T* x, T a, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) y[i] += a * x[i];
}


}  // namespace

template <typename T>
ConvParams<T> make_conv_params(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, int rate) {
  if (rate < 1) throw ShapeError("dilation rate must be >= 1, got " + std::to_string(rate));
  ConvParams<T> p;
  p.weights = Tensor<T>(Shape{out_channels, in_channels, kernel, kernel});
  p.bias.assign(out_channels, T{});
  p.rate = rate;
  return p;
}

template <typename T>
Tensor<T> conv2d_dilated_forward(const Tensor<T>& input, const ConvParams<T>& params) {
  const Shape& s = input.shape();
  if (params.rate < 1) throw ShapeError("dilation rate must be >= 1");
  if (s.c != params.in_channels()) {
    throw ShapeError("conv input shape " + s.str() + " incompatible with weight shape " +
                     params.weights.shape().str());
  }
  const std::size_t oc_n = params.out_channels();
  const std::size_t kh = params.kernel_h();
  const std::size_t kw = params.kernel_w();
  const AxisPadding py = same_padding(static_cast<int>(kh), params.rate);
  const AxisPadding px = same_padding(static_cast<int>(kw), params.rate);
  const auto H = static_cast<std::ptrdiff_t>(s.h);
  const auto W = static_cast<std::ptrdiff_t>(s.w);

  Tensor<T> out(Shape{s.n, oc_n, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      T* dst = out.plane(n, oc);
      std::fill(dst, dst + s.plane(), params.bias[oc]);
      for (std::size_t ic = 0; ic < s.c; ++ic) {
        const T* src = input.plane(n, ic);
        const T* wk = params.weights.plane(oc, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * params.rate - py.lead;
          const Range ry = valid_range(H, dy);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * params.rate - px.lead;
            const Range rx = valid_range(W, dx);
            if (rx.hi == rx.lo) continue;
            const T wv = wk[ky * kw + kx];
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              axpy(dst + y * s.w + rx.lo, src + (y + dy) * s.w + rx.lo + dx, wv, rx.hi - rx.lo);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_dilated_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                                     const ConvParams<T>& params, bool need_input_grad) {
  if (saved_input.empty()) throw ShapeError("conv backward: missing saved input");
  const Shape& s = saved_input.shape();
  if (s.c != params.in_channels()) {
    throw ShapeError("conv saved input shape " + s.str() + " incompatible with weight shape " +
                     params.weights.shape().str());
  }
  const Shape expected{s.n, params.out_channels(), s.h, s.w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv backward: grad_out shape " + grad_out.shape().str() +
                     " differs from forward output shape " + expected.str());
  }
  const std::size_t oc_n = params.out_channels();
  const std::size_t kh = params.kernel_h();
  const std::size_t kw = params.kernel_w();
  const AxisPadding py = same_padding(static_cast<int>(kh), params.rate);
  const AxisPadding px = same_padding(static_cast<int>(kw), params.rate);
  const auto H = static_cast<std::ptrdiff_t>(s.h);
  const auto W = static_cast<std::ptrdiff_t>(s.w);

  ConvGrads<T> g;
  g.weights = Tensor<T>(params.weights.shape());
  g.bias.assign(oc_n, T{});
  if (need_input_grad) g.input = Tensor<T>(s);

  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      const T* go = grad_out.plane(n, oc);
      T bsum = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) bsum += go[i];
      g.bias[oc] += bsum;
      for (std::size_t ic = 0; ic < s.c; ++ic) {
        const T* src = saved_input.plane(n, ic);
        T* gw = g.weights.plane(oc, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * params.rate - py.lead;
          const Range ry = valid_range(H, dy);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * params.rate - px.lead;
            const Range rx = valid_range(W, dx);
            if (rx.hi == rx.lo) continue;
            T acc = 0;
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              acc += dot(go + y * s.w + rx.lo, src + (y + dy) * s.w + rx.lo + dx, rx.hi - rx.lo);
            }
            gw[ky * kw + kx] += acc;
          }
        }
      }
    }
    if (!need_input_grad) continue;
    for (std::size_t ic = 0; ic < s.c; ++ic) {
      T* gi = g.input.plane(n, ic);
      for (std::size_t oc = 0; oc < oc_n; ++oc) {
        const T* go = grad_out.plane(n, oc);
        const T* wk = params.weights.plane(oc, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * params.rate - py.lead;
          const Range ry = valid_range(H, dy);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * params.rate - px.lead;
            const Range rx = valid_range(W, dx);
            if (rx.hi == rx.lo) continue;
            const T wv = wk[ky * kw + kx];
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              axpy(gi + (y + dy) * s.w + rx.lo + dx, go + y * s.w + rx.lo, wv, rx.hi - rx.lo);
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
PoolResult<T> maxpool_same_forward(const Tensor<T>& input, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ShapeError("pooling window must be a positive odd integer, got " + std::to_string(window));
  }
  const Shape& s = input.shape();
  const int half = window / 2;
  const auto H = static_cast<int>(s.h);
  const auto W = static_cast<int>(s.w);
  PoolResult<T> r;
  r.output = Tensor<T>(s);
  r.record.input_shape = s;
  r.record.argmax.resize(s.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = r.output.plane(n, c);
      std::int32_t* idx = r.record.argmax.data() + (n * s.c + c) * s.plane();
      for (int y = 0; y < H; ++y) {
        const int y0 = std::max(0, y - half);
        const int y1 = std::min(H, y + half + 1);
        for (int x = 0; x < W; ++x) {
          const int x0 = std::max(0, x - half);
          const int x1 = std::min(W, x + half + 1);
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t arg = -1;
          for (int yy = y0; yy < y1; ++yy) {
            for (int xx = x0; xx < x1; ++xx) {
              const T v = src[yy * W + xx];
              // strict comparison keeps the first maximum in row-major order
              if (v > best || arg < 0) {
                best = v;
                arg = yy * W + xx;
              }
            }
          }
          dst[y * W + x] = best;
          idx[y * W + x] = arg;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_same_backward(const Tensor<T>& grad_out, const PoolRecord& record) {
  const Shape& s = record.input_shape;
  if (grad_out.shape() != s || record.argmax.size() != s.numel()) {
    throw ShapeError("pool backward: stale argmax record for input shape " + s.str() +
                     " and grad_out shape " + grad_out.shape().str());
  }
  const auto plane = static_cast<std::int32_t>(s.plane());
  Tensor<T> gi(s);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* go = grad_out.data() + p * s.plane();
    const std::int32_t* idx = record.argmax.data() + p * s.plane();
    T* dst = gi.data() + p * s.plane();
    for (std::int32_t i = 0; i < plane; ++i) {
      if (idx[i] < 0 || idx[i] >= plane) throw ShapeError("pool backward: argmax index out of range");
      dst[idx[i]] += go[i];
    }
  }
  return gi;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* src = input.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input) {
  if (grad_out.shape() != saved_input.shape()) {
    throw ShapeError("relu backward: grad_out " + grad_out.shape().str() + " vs input " +
                     saved_input.shape().str());
  }
  Tensor<T> gi(grad_out.shape());
  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = saved_input[i] > T{0} ? grad_out[i] : T{0};
  return gi;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat: shape " + s.str() + " does not match " + first.str());
    }
    channels += s.c;
  }
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t offset = 0;
    for (const auto& t : inputs) {
      const std::size_t len = t.shape().c * first.plane();
      std::copy(t.plane(n, 0), t.plane(n, 0) + len, out.plane(n, offset));
      offset += t.shape().c;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::span<const std::size_t> channels) {
  const Shape& s = grad_out.shape();
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != s.c) {
    throw ShapeError("concat backward: channel split sums to " + std::to_string(total) + ", grad has " +
                     std::to_string(s.c));
  }
  std::vector<Tensor<T>> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const T* src = grad_out.plane(n, offset);
      std::copy(src, src + channels[k] * s.plane(), parts[k].plane(n, 0));
      offset += channels[k];
    }
  }
  return parts;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                            std::span<const std::uint8_t> void_mask) {
  const Shape& s = logits.shape();
  const std::size_t pixels = s.n * s.plane();
  if (labels.size() != pixels || void_mask.size() != pixels) {
    throw ShapeError("cross entropy: label map size " + std::to_string(labels.size()) +
                     " / mask size " + std::to_string(void_mask.size()) + " vs logits " + s.str());
  }
  CrossEntropyResult<T> r;
  r.grad_logits = Tensor<T>(s);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < pixels; ++i) valid += void_mask[i] ? 0 : 1;
  r.valid_pixels = valid;
  if (valid == 0) {
    r.all_void = true;
    return r;
  }
  const T inv = T{1} / static_cast<T>(valid);
  std::vector<double> prob(s.c);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      const std::size_t pix = n * s.plane() + p;
      if (void_mask[pix]) continue;
      const std::size_t label = labels[pix];
      if (label >= s.c) {
        throw ShapeError("cross entropy: label " + std::to_string(label) + " outside [0," +
                         std::to_string(s.c) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = logits.plane(n, c)[p];
        if (v > mx) {
          mx = v;
          arg = c;
        }
      }
      double z = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        prob[c] = std::exp(static_cast<double>(logits.plane(n, c)[p]) - mx);
        z += prob[c];
      }
      const double logz = std::log(z) + mx;
      loss += logz - static_cast<double>(logits.plane(n, label)[p]);
      for (std::size_t c = 0; c < s.c; ++c) {
        const double sm = prob[c] / z;
        r.grad_logits.plane(n, c)[p] = static_cast<T>(sm - (c == label ? 1.0 : 0.0)) * inv;
      }
      correct += arg == label ? 1 : 0;
    }
  }
  r.loss = loss / static_cast<double>(valid);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(valid);
  return r;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double learning_rate, double weight_decay) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  const T lr = static_cast<T>(learning_rate);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * (grads[i] + wd * params[i]);
}

template <typename T>
void sgd_step(ConvParams<T>& params, const ConvGrads<T>& grads, double learning_rate, double weight_decay) {
  sgd_step<T>(params.weights.values(), grads.weights.values(), learning_rate, weight_decay);
  sgd_step<T>(std::span<T>(params.bias), std::span<const T>(grads.bias), learning_rate, 0.0);
}

int receptive_field(const NetworkSpec& spec) {
  int rf = 1;
  for (const auto& layer : spec.layers) {
    if (layer.kind == LayerKind::DilatedConv) {
      rf += (layer.kernel - 1) * layer.rate;
    } else {
      rf += layer.kernel - 1;
    }
  }
  return rf;
}

#define DMS_INSTANTIATE(T)                                                                                 \
  template ConvParams<T> make_conv_params<T>(std::size_t, std::size_t, std::size_t, int);                 \
  template Tensor<T> conv2d_dilated_forward<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  template ConvGrads<T> conv2d_dilated_backward<T>(const Tensor<T>&, const Tensor<T>&,                    \
                                                   const ConvParams<T>&, bool);                          \
  template PoolResult<T> maxpool_same_forward<T>(const Tensor<T>&, int);                                  \
  template Tensor<T> maxpool_same_backward<T>(const Tensor<T>&, const PoolRecord&);                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                           \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                                      \
  template std::vector<Tensor<T>> concat_backward<T>(const Tensor<T>&, std::span<const std::size_t>);     \
  template CrossEntropyResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const std::uint8_t>, \
                                                          std::span<const std::uint8_t>);                 \
  template void sgd_step<T>(std::span<T>, std::span<const T>, double, double);                            \
  template void sgd_step<T>(ConvParams<T>&, const ConvGrads<T>&, double, double);

DMS_INSTANTIATE(float)
DMS_INSTANTIATE(double)

#undef DMS_INSTANTIATE

}  // namespace dms
