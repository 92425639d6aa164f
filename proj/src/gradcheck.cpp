#include "dms/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "dms/engine.hpp"
#include "dms/models.hpp"
#include "dms/rng.hpp"

namespace dms {

namespace {

constexpr double kStep = 1e-6;

struct Probe {
  double numeric;
  bool kink;
};

// Central difference of f around x[i], flagging points where the one-sided
// slopes disagree (relu at zero, pooling ties switching).
Probe central_difference(double& x, const std::function<double()>& f) {
  const double x0 = x;
  const double f0 = f();
  x = x0 + kStep;
  const double fp = f();
  x = x0 - kStep;
  const double fm = f();
  x = x0;
  const double forward = (fp - f0) / kStep;
  const double backward = (f0 - fm) / kStep;
  const double scale = std::max({1.0, std::abs(forward), std::abs(backward)});
  return {(fp - fm) / (2 * kStep), std::abs(forward - backward) > 1e-4 * scale};
}

void check_block(GradcheckEntry& e, std::span<double> values, std::span<const double> analytic,
                 const std::function<double()>& f, double floor = 1e-6) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Probe p = central_difference(values[i], f);
    if (p.kink) {
      ++e.skipped_kinks;
      continue;
    }
    e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], p.numeric, floor));
    ++e.checked;
  }
}

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& g) {
  return std::inner_product(y.values().begin(), y.values().end(), g.values().begin(), 0.0);
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-24s max_rel_error %.3e  checked %zu  skipped %zu\n", e.name.c_str(),
                  e.max_rel_error, e.checked, e.skipped_kinks);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "worst %.3e\n", worst());
  out += buf;
  return out;
}

GradcheckReport check_layers(std::uint64_t seed) {
  Rng rng(seed);
  GradcheckReport report;

  {
    GradcheckEntry e{"conv2d_dilated"};
    Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
    auto p = make_conv_params<double>(4, 3, 3, 2);
    for (auto& v : p.weights.values()) v = rng.normal();
    for (auto& v : p.bias) v = rng.normal();
    const Tensor<double> g = random_tensor({2, 4, 8, 8}, rng);
    const auto grads = conv2d_dilated_backward(g, x, p);
    auto f = [&] { return weighted_sum(conv2d_dilated_forward(x, p), g); };
    check_block(e, x.values(), grads.input.values(), f);
    check_block(e, p.weights.values(), grads.weights.values(), f);
    check_block(e, p.bias, grads.bias, f);
    report.entries.push_back(e);
  }
  {
    GradcheckEntry e{"maxpool_same"};
    // distinct values so every window has a unique maximum
    Tensor<double> x({2, 2, 7, 7});
    std::vector<double> vals(x.size());
    std::iota(vals.begin(), vals.end(), 0.0);
    for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.uniform_int(i)]);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = vals[i] * 0.01;
    const Tensor<double> g = random_tensor(x.shape(), rng);
    const auto fwd = maxpool_same_forward(x, 3);
    const auto gi = maxpool_same_backward(g, fwd.record);
    auto f = [&] { return weighted_sum(maxpool_same_forward(x, 3).output, g); };
    check_block(e, x.values(), gi.values(), f);
    report.entries.push_back(e);
  }
  {
    GradcheckEntry e{"relu"};
    Tensor<double> x = random_tensor({1, 3, 6, 6}, rng);
    for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
    const Tensor<double> g = random_tensor(x.shape(), rng);
    const auto gi = relu_backward(g, x);
    auto f = [&] { return weighted_sum(relu(x), g); };
    check_block(e, x.values(), gi.values(), f);
    report.entries.push_back(e);
  }
  {
    GradcheckEntry e{"concat_channels"};
    std::vector<Tensor<double>> parts = {random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)};
    const Tensor<double> g = random_tensor({2, 5, 4, 4}, rng);
    const std::size_t channels[] = {2, 3};
    const auto split = concat_backward<double>(g, channels);
    auto f = [&] { return weighted_sum(concat_channels<double>(parts), g); };
    for (std::size_t k = 0; k < parts.size(); ++k) check_block(e, parts[k].values(), split[k].values(), f);
    report.entries.push_back(e);
  }
  {
    GradcheckEntry e{"softmax_cross_entropy"};
    Tensor<double> logits = random_tensor({2, 3, 4, 4}, rng);
    std::vector<std::uint8_t> labels(2 * 16);
    std::vector<std::uint8_t> mask(2 * 16);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
      mask[i] = rng.uniform() < 0.2 ? 1 : 0;
    }
    const auto r = softmax_cross_entropy<double>(logits, labels, mask);
    auto f = [&] { return softmax_cross_entropy<double>(logits, labels, mask).loss; };
    check_block(e, logits.values(), r.grad_logits.values(), f);
    report.entries.push_back(e);
  }
  return report;
}

GradcheckReport check_network(const NetworkSpec& spec, std::uint64_t seed, const NetworkCheckOptions& options) {
  Rng rng(seed);
  Params<double> params = init_params<double>(spec, seed);
  for (auto& c : params.convs) {
    for (auto& b : c.bias) b = 0.1 * rng.normal();
  }
  const Shape in_shape{static_cast<std::size_t>(options.batch), static_cast<std::size_t>(spec.in_channels),
                       static_cast<std::size_t>(options.height), static_cast<std::size_t>(options.width)};
  Tensor<double> x = random_tensor(in_shape, rng);
  const Tensor<double> g = random_tensor({in_shape.n, static_cast<std::size_t>(spec.num_classes), in_shape.h, in_shape.w}, rng);

  ForwardCache<double> cache;
  forward(spec, params, x, &cache);
  Gradients<double> grads = backward(spec, params, cache, g, true);
  if (options.corrupt_backward) {
    for (auto& v : grads.convs.front().weights.values()) v *= 1.01;
  }
  auto f = [&] { return weighted_sum(forward(spec, params, x), g); };

  GradcheckReport report;
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    const bool classifier = i + 1 == params.convs.size();
    GradcheckEntry e{classifier ? std::string("classifier") : "conv" + std::to_string(i + 1)};
    check_block(e, params.convs[i].weights.values(), grads.convs[i].weights.values(), f);
    check_block(e, params.convs[i].bias, grads.convs[i].bias, f);
    report.entries.push_back(e);
  }
  GradcheckEntry e{"input"};
  check_block(e, x.values(), grads.input.values(), f);
  report.entries.push_back(e);
  return report;
}

}  // namespace dms
