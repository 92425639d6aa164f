#include "dms/metrics.hpp"

#include <cstdio>

#include "dms/errors.hpp"

namespace dms {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t p = 0; p < classes_; ++p) t += at(c, p);
  return t;
}

std::uint64_t ConfusionMatrix::col_total(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t r = 0; r < classes_; ++r) t += at(r, c);
  return t;
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions,
                                 std::span<const std::uint8_t> void_mask) {
  if (labels.size() != predictions.size() || labels.size() != void_mask.size()) {
    throw ShapeError("confusion matrix: map sizes differ (" + std::to_string(labels.size()) + ", " +
                     std::to_string(predictions.size()) + ", " + std::to_string(void_mask.size()) + ")");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (void_mask[i]) continue;
    if (labels[i] >= classes_ || predictions[i] >= classes_) {
      throw ShapeError("confusion matrix: class index out of range at pixel " + std::to_string(i));
    }
    ++at(labels[i], predictions[i]);
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::optional<double> overall_accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) return std::nullopt;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < m.classes(); ++c) diag += m.at(c, c);
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::optional<double> average_accuracy(const ConfusionMatrix& m) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const auto row = m.row_total(c);
    if (row == 0) continue;
    sum += static_cast<double>(m.at(c, c)) / static_cast<double>(row);
    ++present;
  }
  if (present == 0) return std::nullopt;
  return sum / static_cast<double>(present);
}

std::optional<double> kappa(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) return std::nullopt;
  const double n = static_cast<double>(total);
  std::uint64_t diag = 0;
  double chance = 0.0;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    diag += m.at(c, c);
    chance += static_cast<double>(m.row_total(c)) * static_cast<double>(m.col_total(c));
  }
  const double po = static_cast<double>(diag) / n;
  const double pe = chance / (n * n);
  if (pe >= 1.0) return std::nullopt;
  return (po - pe) / (1.0 - pe);
}

std::vector<std::optional<double>> f1_per_class(const ConfusionMatrix& m) {
  std::vector<std::optional<double>> f1(m.classes());
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const auto row = m.row_total(c);
    const auto col = m.col_total(c);
    if (row == 0 && col == 0) continue;
    const double tp = static_cast<double>(m.at(c, c));
    const double p = col > 0 ? tp / static_cast<double>(col) : 0.0;
    const double r = row > 0 ? tp / static_cast<double>(row) : 0.0;
    f1[c] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return f1;
}

std::optional<double> mean_f1(const ConfusionMatrix& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : f1_per_class(m)) {
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

MetricsReport summarize(const ConfusionMatrix& m) {
  return {m, overall_accuracy(m), average_accuracy(m), kappa(m), f1_per_class(m), mean_f1(m)};
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::string metrics_csv_header(std::size_t classes) {
  std::string h = "size,oa,aa,kappa,mean_f1";
  for (std::size_t c = 0; c < classes; ++c) h += ",f1_" + std::to_string(c);
  return h;
}

std::string metrics_csv_row(const MetricsReport& r, int size) {
  std::string row = std::to_string(size) + "," + fmt(r.overall_accuracy) + "," + fmt(r.average_accuracy) + "," +
                    fmt(r.kappa) + "," + fmt(r.mean_f1);
  for (const auto& f : r.f1) row += "," + fmt(f);
  return row;
}

std::string metrics_text(const MetricsReport& r) {
  auto show = [](const std::optional<double>& v) { return v ? fmt(v) : std::string("n/a"); };
  std::string out = "pixels " + std::to_string(r.matrix.total()) + "\n";
  out += "overall_accuracy " + show(r.overall_accuracy) + "\n";
  out += "average_accuracy " + show(r.average_accuracy) + "\n";
  out += "kappa " + show(r.kappa) + "\n";
  out += "mean_f1 " + show(r.mean_f1) + "\n";
  for (std::size_t c = 0; c < r.f1.size(); ++c) out += "f1_" + std::to_string(c) + " " + show(r.f1[c]) + "\n";
  return out;
}

}  // namespace dms
