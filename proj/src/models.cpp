#include "dms/models.hpp"

#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "dms/errors.hpp"
#include "dms/rng.hpp"

namespace dms {

namespace {

constexpr int kPoolWindow = 3;

struct ConvShape {
  int kernel;
  int rate;
};

// 5x5 at rates 1-2, 4x4 at rates 3-4, 3x3 from rate 5 up.
std::vector<ConvShape> conv_shapes(Architecture arch) {
  std::vector<ConvShape> shapes = {{5, 1}, {5, 2}, {4, 3}, {4, 4}, {3, 5}, {3, 6}};
  if (arch == Architecture::Dilated8Pooling) {
    shapes.push_back({3, 7});
    shapes.push_back({3, 8});
  }
  return shapes;
}

bool has_pooling(Architecture arch) {
  return arch == Architecture::Dilated6Pooling || arch == Architecture::Dilated8Pooling;
}

}  // namespace

std::vector<int> default_widths(Architecture arch) {
  switch (arch) {
    case Architecture::Dilated6:
    case Architecture::Dilated6Pooling:
      return {64, 64, 128, 128, 256, 256};
    case Architecture::DenseDilated6:
      return {32, 32, 64, 64, 128, 128};
    case Architecture::Dilated8Pooling:
      return {64, 64, 128, 128, 192, 192, 224, 224};
  }
  return {};
}

NetworkSpec build_network(Architecture arch, int in_channels, int num_classes,
                          std::optional<std::vector<int>> widths) {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (num_classes < 1 || num_classes > 255) throw ConfigError("num_classes must be in [1, 255]");
  const auto shapes = conv_shapes(arch);
  const std::vector<int> w = widths.value_or(default_widths(arch));
  if (w.size() != shapes.size()) {
    throw ConfigError(std::string(architecture_name(arch)) + " needs " + std::to_string(shapes.size()) +
                      " widths, got " + std::to_string(w.size()));
  }
  NetworkSpec spec;
  spec.arch = arch;
  spec.in_channels = in_channels;
  spec.num_classes = num_classes;
  spec.dense_classifier = arch == Architecture::DenseDilated6;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (w[i] < 1) throw ConfigError("conv width must be >= 1");
    spec.layers.push_back(
        {LayerKind::DilatedConv, shapes[i].kernel, shapes[i].rate, w[i], arch == Architecture::DenseDilated6});
    if (has_pooling(arch)) spec.layers.push_back({LayerKind::MaxPool, kPoolWindow, 1, 0, false});
  }
  return spec;
}

std::size_t param_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  std::size_t conv = 0;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::DilatedConv) continue;
    const auto in = static_cast<std::size_t>(spec.conv_input_channels(conv++));
    total += static_cast<std::size_t>(l.width) * (in * l.kernel * l.kernel + 1);
  }
  const auto in = static_cast<std::size_t>(spec.conv_input_channels(conv));
  total += static_cast<std::size_t>(spec.num_classes) * (in + 1);
  return total;
}

template <typename T>
Params<T> zero_params(const NetworkSpec& spec) {
  Params<T> p;
  std::size_t conv = 0;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::DilatedConv) continue;
    p.convs.push_back(make_conv_params<T>(static_cast<std::size_t>(l.width),
                                          static_cast<std::size_t>(spec.conv_input_channels(conv++)),
                                          static_cast<std::size_t>(l.kernel), l.rate));
  }
  p.convs.push_back(make_conv_params<T>(static_cast<std::size_t>(spec.num_classes),
                                        static_cast<std::size_t>(spec.conv_input_channels(conv)), 1, 1));
  return p;
}

template <typename T>
Params<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  Params<T> p = zero_params<T>(spec);
  Rng rng(seed);
  for (auto& c : p.convs) {
    const double fan_in = static_cast<double>(c.in_channels() * c.kernel_h() * c.kernel_w());
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : c.weights.values()) v = static_cast<T>(stddev * rng.normal());
  }
  return p;
}

template <typename T>
Tensor<T> forward(const NetworkSpec& spec, const Params<T>& params, const Tensor<T>& batch,
                  ForwardCache<T>* cache) {
  if (batch.shape().c != static_cast<std::size_t>(spec.in_channels)) {
    throw ShapeError("network expects " + std::to_string(spec.in_channels) + " input channels, batch has shape " +
                     batch.shape().str());
  }
  if (params.convs.size() != spec.conv_count() + 1) throw ShapeError("parameter set does not match network");
  if (cache) *cache = ForwardCache<T>{batch.shape(), {}, {}, {}};

  const bool dense = spec.dense_classifier;
  std::vector<Tensor<T>> sources;
  if (dense) sources.push_back(batch);
  Tensor<T> current = batch;
  std::size_t conv = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::DilatedConv) {
      Tensor<T> in = l.dense_input ? concat_channels<T>(sources) : std::move(current);
      Tensor<T> pre = conv2d_dilated_forward(in, params.convs[conv++]);
      current = relu(pre);
      if (dense) sources.push_back(current);
      if (cache) {
        cache->conv_inputs.push_back(std::move(in));
        cache->pre_activations.push_back(std::move(pre));
      }
    } else {
      auto pooled = maxpool_same_forward(current, l.kernel);
      current = std::move(pooled.output);
      if (dense) sources.back() = current;
      if (cache) cache->pools.push_back(std::move(pooled.record));
    }
  }
  Tensor<T> in = spec.dense_classifier ? concat_channels<T>(sources) : std::move(current);
  Tensor<T> logits = conv2d_dilated_forward(in, params.convs[conv]);
  if (cache) cache->conv_inputs.push_back(std::move(in));
  return logits;
}

template <typename T>
Gradients<T> backward(const NetworkSpec& spec, const Params<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, bool need_input_grad) {
  const std::size_t n_conv = spec.conv_count();
  if (cache.conv_inputs.size() != n_conv + 1) throw ShapeError("backward: forward cache is missing or stale");
  Gradients<T> g;
  g.convs.resize(n_conv + 1);

  // Channel layout of every dense concatenation: network input then conv outputs.
  std::vector<std::size_t> source_channels = {static_cast<std::size_t>(spec.in_channels)};
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::DilatedConv) source_channels.push_back(static_cast<std::size_t>(l.width));
  }

  const bool dense = spec.dense_classifier;
  // dense: accumulated gradient per source feature map (fan-out sum)
  std::vector<Tensor<T>> source_grads;
  if (dense) {
    for (std::size_t k = 0; k <= n_conv; ++k) {
      const Shape& in = cache.input_shape;
      source_grads.emplace_back(Shape{in.n, source_channels[k], in.h, in.w});
    }
  }
  auto scatter = [&](const Tensor<T>& grad_concat, std::size_t n_sources) {
    auto parts = concat_backward<T>(grad_concat, std::span(source_channels).first(n_sources));
    for (std::size_t k = 0; k < n_sources; ++k) {
      T* dst = source_grads[k].data();
      const T* src = parts[k].data();
      for (std::size_t i = 0; i < parts[k].size(); ++i) dst[i] += src[i];
    }
  };

  const bool first_needs_input = need_input_grad;
  Tensor<T> current;
  {
    const bool want_input = n_conv > 0 || first_needs_input;
    g.convs[n_conv] = conv2d_dilated_backward(grad_logits, cache.conv_inputs[n_conv], params.convs[n_conv], want_input);
    if (dense) {
      scatter(g.convs[n_conv].input, n_conv + 1);
    } else {
      current = std::move(g.convs[n_conv].input);
    }
    g.convs[n_conv].input = Tensor<T>();
  }

  std::size_t conv = n_conv;
  std::size_t pool = cache.pools.size();
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    if (it->kind == LayerKind::MaxPool) {
      current = maxpool_same_backward(current, cache.pools[--pool]);
      continue;
    }
    --conv;
    const Tensor<T>& grad_out = dense ? source_grads[conv + 1] : current;
    Tensor<T> grad_pre = relu_backward(grad_out, cache.pre_activations[conv]);
    const bool want_input = conv > 0 || first_needs_input;
    g.convs[conv] = conv2d_dilated_backward(grad_pre, cache.conv_inputs[conv], params.convs[conv], want_input);
    if (want_input) {
      if (it->dense_input) {
        scatter(g.convs[conv].input, conv + 1);
      } else {
        current = std::move(g.convs[conv].input);
      }
    }
    g.convs[conv].input = Tensor<T>();
  }
  if (need_input_grad) g.input = dense ? std::move(source_grads[0]) : std::move(current);
  return g;
}

template <typename T>
void sgd_update(Params<T>& params, const Gradients<T>& grads, double learning_rate, double weight_decay) {
  if (grads.convs.size() != params.convs.size()) throw ShapeError("sgd: gradient set does not match parameters");
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    sgd_step(params.convs[i], grads.convs[i], learning_rate, weight_decay);
  }
}

namespace {

void write_header(std::ostream& os, const NetworkSpec& spec) {
  os.write("DSW1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(spec.arch));
  detail::put_u32(os, static_cast<std::uint32_t>(spec.in_channels));
  detail::put_u32(os, static_cast<std::uint32_t>(spec.num_classes));
  detail::put_u32(os, static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    // pooling layers are stored with width 0
    detail::put_u32(os, static_cast<std::uint32_t>(l.kernel));
    detail::put_u32(os, static_cast<std::uint32_t>(l.rate));
    detail::put_u32(os, l.kind == LayerKind::DilatedConv ? static_cast<std::uint32_t>(l.width) : 0U);
  }
}

}  // namespace

void save_params(const std::filesystem::path& path, const NetworkSpec& spec, const Params<float>& params) {
  if (params.count() != param_count(spec)) throw ShapeError("save_params: parameters do not match spec");
  auto os = detail::open_out(path);
  write_header(os, spec);
  for (const auto& c : params.convs) {
    for (float v : c.weights.values()) detail::put_f32(os, v);
    for (float v : c.bias) detail::put_f32(os, v);
  }
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

std::pair<NetworkSpec, Params<float>> load_params(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  detail::Reader r(is, path.string());
  r.magic("DSW1");
  const auto arch_code = r.u32("architecture tag");
  if (arch_code > 3) {
    throw DataError(path.string() + ": unknown architecture tag " + std::to_string(arch_code) + " at offset 4");
  }
  const auto arch = static_cast<Architecture>(arch_code);
  const auto in_channels = static_cast<int>(r.u32("in_channels"));
  const auto num_classes = static_cast<int>(r.u32("num_classes"));
  const auto n_layers = r.u32("layer count");
  if (n_layers > 64) throw DataError(path.string() + ": implausible layer count " + std::to_string(n_layers));
  std::vector<int> widths;
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    l.kernel = static_cast<int>(r.u32("layer kernel"));
    l.rate = static_cast<int>(r.u32("layer rate"));
    l.width = static_cast<int>(r.u32("layer width"));
    l.kind = l.width == 0 ? LayerKind::MaxPool : LayerKind::DilatedConv;
    if (l.kind == LayerKind::DilatedConv) widths.push_back(l.width);
    layers.push_back(l);
  }
  NetworkSpec spec;
  try {
    spec = build_network(arch, in_channels, num_classes, widths);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": header does not describe a valid network: " + e.what());
  }
  if (spec.layers.size() != layers.size()) throw DataError(path.string() + ": layer list does not match architecture");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = spec.layers[i];
    const auto& b = layers[i];
    if (a.kind != b.kind || a.kernel != b.kernel || (a.kind == LayerKind::DilatedConv && a.rate != b.rate)) {
      throw DataError(path.string() + ": layer " + std::to_string(i) + " does not match architecture");
    }
  }
  Params<float> params = zero_params<float>(spec);
  for (auto& c : params.convs) {
    for (float& v : c.weights.values()) v = r.f32("weights");
    for (float& v : c.bias) v = r.f32("bias");
  }
  r.expect_end();
  return {spec, std::move(params)};
}

#define DMS_INSTANTIATE(T)                                                                                  \
  template Params<T> zero_params<T>(const NetworkSpec&);                                                   \
  template Params<T> init_params<T>(const NetworkSpec&, std::uint64_t);                                    \
  template Tensor<T> forward<T>(const NetworkSpec&, const Params<T>&, const Tensor<T>&, ForwardCache<T>*); \
  template Gradients<T> backward<T>(const NetworkSpec&, const Params<T>&, const ForwardCache<T>&,         \
                                    const Tensor<T>&, bool);                                               \
  template void sgd_update<T>(Params<T>&, const Gradients<T>&, double, double);

DMS_INSTANTIATE(float)
DMS_INSTANTIATE(double)

#undef DMS_INSTANTIATE

}  // namespace dms
