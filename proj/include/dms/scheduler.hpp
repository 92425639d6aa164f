#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dms/rng.hpp"

namespace dms {

enum class DistributionMode { UniformRange, UniformFixed, Multinomial };

std::string_view distribution_name(DistributionMode mode);
DistributionMode parse_distribution(std::string_view name);

/// Sampling law over candidate patch sizes. All weights are small integers:
/// 1 per candidate, 2 for emphasized sizes of a multinomial.
class PatchSizeDistribution {
 public:
  /// Every integer in [lo, hi] with equal probability.
  static PatchSizeDistribution uniform_range(int lo, int hi);
  /// Equal probability over an explicit set of sizes.
  static PatchSizeDistribution uniform_fixed(std::vector<int> sizes);
  /// Every integer in [lo, hi]; emphasized sizes carry twice the weight.
  static PatchSizeDistribution multinomial(int lo, int hi, std::vector<int> emphasized);

  DistributionMode mode() const { return mode_; }
  const std::vector<int>& candidates() const { return sizes_; }
  const std::vector<int>& emphasized() const { return emphasized_; }
  std::vector<double> probabilities() const;
  double probability(int size) const;
  bool contains(int size) const;

  int sample(Rng& rng) const;

 private:
  PatchSizeDistribution(DistributionMode mode, std::vector<int> sizes, std::vector<std::uint32_t> weights,
                        std::vector<int> emphasized);

  DistributionMode mode_;
  std::vector<int> sizes_;  // ascending
  std::vector<std::uint32_t> weights_;
  std::uint64_t total_weight_ = 0;
  std::vector<int> emphasized_;
};

enum class ScoreMode { Accuracy, Loss };

std::string_view score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(std::string_view name);

/// Per-size cumulative batch statistic and selection count.
class ScoreTable {
 public:
  struct Entry {
    double cumulative = 0.0;
    std::uint64_t count = 0;
    bool operator==(const Entry&) const = default;
  };

  ScoreTable() = default;
  ScoreTable(const std::vector<int>& candidates, ScoreMode mode);

  ScoreMode mode() const { return mode_; }
  const std::map<int, Entry>& entries() const { return entries_; }
  std::uint64_t total_updates() const;

  void update(int size, double batch_stat);
  /// cumulative / count for every size drawn at least once.
  std::map<int, double> mean_scores() const;
  /// Highest mean (accuracy) or lowest mean (loss); ties go to the smaller size.
  int best_size() const;

  /// One line per size: `size cumulative count mode`.
  std::string to_text() const;
  static ScoreTable from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ScoreTable load(const std::filesystem::path& path);

  bool operator==(const ScoreTable&) const = default;

 private:
  ScoreMode mode_ = ScoreMode::Accuracy;
  std::map<int, Entry> entries_;
};

}  // namespace dms
