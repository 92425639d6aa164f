#include "dms/scheduler.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dms/errors.hpp"

namespace dms {

std::string_view distribution_name(DistributionMode mode) {
  switch (mode) {
    case DistributionMode::UniformRange:
      return "uniform";
    case DistributionMode::UniformFixed:
      return "uniform_fixed";
    case DistributionMode::Multinomial:
      return "multinomial";
  }
  return "unknown";
}

DistributionMode parse_distribution(std::string_view name) {
  if (name == "uniform") return DistributionMode::UniformRange;
  if (name == "uniform_fixed") return DistributionMode::UniformFixed;
  if (name == "multinomial") return DistributionMode::Multinomial;
  throw ConfigError("unknown distribution '" + std::string(name) + "'");
}

PatchSizeDistribution::PatchSizeDistribution(DistributionMode mode, std::vector<int> sizes,
                                             std::vector<std::uint32_t> weights, std::vector<int> emphasized)
    : mode_(mode), sizes_(std::move(sizes)), weights_(std::move(weights)), emphasized_(std::move(emphasized)) {
  if (sizes_.empty()) throw ConfigError("patch size distribution has no candidates");
  for (int s : sizes_) {
    if (s < 1) throw ConfigError("patch sizes must be >= 1, got " + std::to_string(s));
  }
  for (auto w : weights_) total_weight_ += w;
}

PatchSizeDistribution PatchSizeDistribution::uniform_range(int lo, int hi) {
  if (lo > hi) throw ConfigError("empty size range " + std::to_string(lo) + ".." + std::to_string(hi));
  std::vector<int> sizes;
  for (int s = lo; s <= hi; ++s) sizes.push_back(s);
  std::vector<std::uint32_t> weights(sizes.size(), 1);
  return {DistributionMode::UniformRange, std::move(sizes), std::move(weights), {}};
}

PatchSizeDistribution PatchSizeDistribution::uniform_fixed(std::vector<int> sizes) {
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  std::vector<std::uint32_t> weights(sizes.size(), 1);
  return {DistributionMode::UniformFixed, std::move(sizes), std::move(weights), {}};
}

PatchSizeDistribution PatchSizeDistribution::multinomial(int lo, int hi, std::vector<int> emphasized) {
  if (lo > hi) throw ConfigError("empty size range " + std::to_string(lo) + ".." + std::to_string(hi));
  std::sort(emphasized.begin(), emphasized.end());
  emphasized.erase(std::unique(emphasized.begin(), emphasized.end()), emphasized.end());
  for (int e : emphasized) {
    if (e < lo || e > hi) {
      throw ConfigError("emphasized size " + std::to_string(e) + " outside range " + std::to_string(lo) + ".." +
                        std::to_string(hi));
    }
  }
  std::vector<int> sizes;
  std::vector<std::uint32_t> weights;
  for (int s = lo; s <= hi; ++s) {
    sizes.push_back(s);
    weights.push_back(std::binary_search(emphasized.begin(), emphasized.end(), s) ? 2U : 1U);
  }
  return {DistributionMode::Multinomial, std::move(sizes), std::move(weights), std::move(emphasized)};
}

std::vector<double> PatchSizeDistribution::probabilities() const {
  std::vector<double> p;
  p.reserve(weights_.size());
  for (auto w : weights_) p.push_back(static_cast<double>(w) / static_cast<double>(total_weight_));
  return p;
}

double PatchSizeDistribution::probability(int size) const {
  const auto it = std::lower_bound(sizes_.begin(), sizes_.end(), size);
  if (it == sizes_.end() || *it != size) return 0.0;
  return static_cast<double>(weights_[static_cast<std::size_t>(it - sizes_.begin())]) /
         static_cast<double>(total_weight_);
}

bool PatchSizeDistribution::contains(int size) const {
  return std::binary_search(sizes_.begin(), sizes_.end(), size);
}

int PatchSizeDistribution::sample(Rng& rng) const {
  std::uint64_t ticket = rng.uniform_int(total_weight_);
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (ticket < weights_[i]) return sizes_[i];
    ticket -= weights_[i];
  }
  return sizes_.back();
}

std::string_view score_mode_name(ScoreMode mode) { return mode == ScoreMode::Accuracy ? "accuracy" : "loss"; }

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "accuracy") return ScoreMode::Accuracy;
  if (name == "loss") return ScoreMode::Loss;
  throw ConfigError("unknown score mode '" + std::string(name) + "'");
}

ScoreTable::ScoreTable(const std::vector<int>& candidates, ScoreMode mode) : mode_(mode) {
  for (int s : candidates) entries_[s] = Entry{};
}

std::uint64_t ScoreTable::total_updates() const {
  std::uint64_t n = 0;
  for (const auto& [size, e] : entries_) n += e.count;
  return n;
}

void ScoreTable::update(int size, double batch_stat) {
  auto it = entries_.find(size);
  if (it == entries_.end()) throw std::invalid_argument("score update for non-candidate size " + std::to_string(size));
  it->second.cumulative += batch_stat;
  it->second.count += 1;
}

std::map<int, double> ScoreTable::mean_scores() const {
  std::map<int, double> means;
  for (const auto& [size, e] : entries_) {
    if (e.count > 0) means[size] = e.cumulative / static_cast<double>(e.count);
  }
  return means;
}

int ScoreTable::best_size() const {
  const auto means = mean_scores();
  if (means.empty()) throw std::logic_error("best_size: no patch size has been scored");
  // ascending iteration with strict comparison keeps the smallest size on ties
  auto best = means.begin();
  for (auto it = std::next(means.begin()); it != means.end(); ++it) {
    const bool better = mode_ == ScoreMode::Accuracy ? it->second > best->second : it->second < best->second;
    if (better) best = it;
  }
  return best->first;
}

std::string ScoreTable::to_text() const {
  std::string out;
  char buf[128];
  for (const auto& [size, e] : entries_) {
    std::snprintf(buf, sizeof buf, "%d %.17g %llu %s\n", size, e.cumulative,
                  static_cast<unsigned long long>(e.count), std::string(score_mode_name(mode_)).c_str());
    out += buf;
  }
  return out;
}

ScoreTable ScoreTable::from_text(std::string_view text) {
  ScoreTable t;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  bool mode_set = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int size = 0;
    std::string cumulative;
    unsigned long long count = 0;
    std::string mode;
    if (!(ls >> size >> cumulative >> count >> mode)) {
      throw DataError("score table line " + std::to_string(lineno) + ": expected 'size cumulative count mode'");
    }
    const ScoreMode m = mode == "accuracy" ? ScoreMode::Accuracy
                        : mode == "loss"   ? ScoreMode::Loss
                                           : throw DataError("score table line " + std::to_string(lineno) +
                                                             ": unknown mode '" + mode + "'");
    if (mode_set && m != t.mode_) throw DataError("score table line " + std::to_string(lineno) + ": mixed modes");
    t.mode_ = m;
    mode_set = true;
    char* end = nullptr;
    const double cum = std::strtod(cumulative.c_str(), &end);
    if (end == cumulative.c_str() || *end != '\0') {
      throw DataError("score table line " + std::to_string(lineno) + ": bad cumulative score");
    }
    t.entries_[size] = Entry{cum, count};
  }
  if (t.entries_.empty()) throw DataError("score table is empty");
  return t;
}

void ScoreTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << to_text();
}

ScoreTable ScoreTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open score table '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace dms
