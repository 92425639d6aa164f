#include <filesystem>
#include <map>

#include "doctest.h"
#include "dms/errors.hpp"
#include "dms/scheduler.hpp"
#include "oracles.hpp"

using namespace dms;

namespace {

std::map<int, double> frequencies(const PatchSizeDistribution& d, int draws, std::uint64_t seed) {
  Rng rng(seed);
  std::map<int, double> f;
  for (int i = 0; i < draws; ++i) f[d.sample(rng)] += 1.0 / draws;
  return f;
}

void chi2_check(const PatchSizeDistribution& d, int draws, std::uint64_t seed) {
  Rng rng(seed);
  std::map<int, double> counts;
  for (int i = 0; i < draws; ++i) counts[d.sample(rng)] += 1;
  std::vector<double> obs, exp;
  const auto probs = d.probabilities();
  for (std::size_t i = 0; i < d.candidates().size(); ++i) {
    obs.push_back(counts[d.candidates()[i]]);
    exp.push_back(probs[i] * draws);
  }
  const int dof = static_cast<int>(obs.size()) - 1;
  if (dof == 0) return;
  CHECK(oracle::chi2_stat(obs, exp) < oracle::chi2_critical_001(dof));
}

}  // namespace

TEST_CASE("distribution construction") {
  const auto u = PatchSizeDistribution::uniform_range(25, 50);
  CHECK(u.candidates().size() == 26);
  CHECK(u.probability(30) == doctest::Approx(1.0 / 26));
  CHECK(u.probability(51) == 0.0);
  const auto f = PatchSizeDistribution::uniform_fixed({50, 25, 25});
  CHECK(f.candidates() == std::vector<int>{25, 50});
  const auto m = PatchSizeDistribution::multinomial(25, 50, {25, 50});
  CHECK(m.probability(25) == doctest::Approx(2.0 / 28));
  CHECK(m.probability(30) == doctest::Approx(1.0 / 28));
  double total = 0;
  for (double p : m.probabilities()) total += p;
  CHECK(total == doctest::Approx(1.0));

  CHECK_THROWS_AS(PatchSizeDistribution::uniform_fixed({}), ConfigError);
  CHECK_THROWS_AS(PatchSizeDistribution::uniform_fixed({0, 5}), ConfigError);
  CHECK_THROWS_AS(PatchSizeDistribution::uniform_range(10, 5), ConfigError);
  CHECK_THROWS_AS(PatchSizeDistribution::multinomial(25, 50, {60}), ConfigError);
  CHECK(parse_distribution("uniform_fixed") == DistributionMode::UniformFixed);
  CHECK_THROWS_AS(parse_distribution("gaussian"), ConfigError);
}

TEST_CASE("sampling frequencies") {
  const auto f = frequencies(PatchSizeDistribution::uniform_fixed({25, 50}), 10000, 1);
  CHECK(f.at(25) >= 0.47);
  CHECK(f.at(25) <= 0.53);
  CHECK(f.at(50) >= 0.47);
  CHECK(f.at(50) <= 0.53);

  const auto m = frequencies(PatchSizeDistribution::multinomial(25, 50, {25, 50}), 100000, 2);
  double interior = 0;
  for (int s = 26; s < 50; ++s) interior += m.at(s) / 24;
  for (int s : {25, 50}) {
    CHECK(m.at(s) / interior >= 1.8);
    CHECK(m.at(s) / interior <= 2.2);
  }

  Rng rng(3);
  const auto one = PatchSizeDistribution::uniform_fixed({32});
  for (int i = 0; i < 100; ++i) CHECK(one.sample(rng) == 32);
}

TEST_CASE("chi-squared goodness of fit for every mode") {
  chi2_check(PatchSizeDistribution::uniform_range(7, 70), 100000, 4);
  chi2_check(PatchSizeDistribution::uniform_fixed({7, 14, 21, 28, 35, 42, 49, 56, 63, 70}), 100000, 5);
  chi2_check(PatchSizeDistribution::multinomial(25, 50, {25, 50}), 100000, 6);
  chi2_check(PatchSizeDistribution::multinomial(7, 70, {7, 35, 70}), 100000, 7);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  const auto d = PatchSizeDistribution::uniform_range(7, 70);
  Rng a(9), b(9);
  for (int i = 0; i < 1000; ++i) CHECK(d.sample(a) == d.sample(b));
}

TEST_CASE("score updates") {
  ScoreTable t({25, 50}, ScoreMode::Accuracy);
  t.update(25, 0.8);
  CHECK(t.entries().at(25).cumulative == doctest::Approx(0.8));
  CHECK(t.entries().at(25).count == 1);
  t.update(25, 0.9);
  CHECK(t.entries().at(25).cumulative == doctest::Approx(1.7));
  CHECK(t.entries().at(25).count == 2);
  CHECK(t.entries().at(50).count == 0);
  CHECK(t.entries().at(50).cumulative == 0.0);
  const auto means = t.mean_scores();
  CHECK(means.size() == 1);
  CHECK(means.at(25) == doctest::Approx(0.85));
  CHECK(means.count(50) == 0);
  t.update(50, 0.1);
  CHECK(t.entries().at(25).cumulative == doctest::Approx(1.7));
  CHECK(t.total_updates() == 3);
  CHECK_THROWS_AS(t.update(30, 0.5), std::invalid_argument);
}

TEST_CASE("best size") {
  ScoreTable acc({25, 50}, ScoreMode::Accuracy);
  CHECK_THROWS_AS(acc.best_size(), std::logic_error);
  acc.update(25, 0.85);
  acc.update(50, 0.70);
  CHECK(acc.best_size() == 25);

  ScoreTable loss({25, 50}, ScoreMode::Loss);
  loss.update(25, 0.30);
  loss.update(50, 0.20);
  CHECK(loss.best_size() == 50);

  ScoreTable tie({25, 50}, ScoreMode::Accuracy);
  tie.update(50, 0.8);
  tie.update(25, 0.8);
  CHECK(tie.best_size() == 25);

  ScoreTable tie_loss({25, 50}, ScoreMode::Loss);
  tie_loss.update(50, 0.3);
  tie_loss.update(25, 0.3);
  CHECK(tie_loss.best_size() == 25);
}

TEST_CASE("replay of a logged update history reproduces the table") {
  Rng rng(10);
  const std::vector<int> sizes = {7, 14, 21, 28, 35};
  for (int trial = 0; trial < 20; ++trial) {
    ScoreTable t(sizes, trial % 2 ? ScoreMode::Loss : ScoreMode::Accuracy);
    std::vector<std::pair<int, double>> log;
    const int n = 1 + static_cast<int>(rng.uniform_int(200));
    for (int i = 0; i < n; ++i) {
      const int s = sizes[rng.uniform_int(sizes.size())];
      const double v = rng.uniform();
      t.update(s, v);
      log.emplace_back(s, v);
    }
    // independent recomputation
    std::map<int, std::pair<double, int>> acc;
    for (const auto& [s, v] : log) acc[s].first += v, acc[s].second += 1;
    const auto means = t.mean_scores();
    CHECK(means.size() == acc.size());
    for (const auto& [s, p] : acc) CHECK(means.at(s) == p.first / p.second);
    std::uint64_t total = 0;
    for (const auto& [s, e] : t.entries()) total += e.count;
    CHECK(total == log.size());

    ScoreTable replay(sizes, t.mode());
    for (const auto& [s, v] : log) replay.update(s, v);
    CHECK(replay == t);

    // common positive rescaling leaves the winner unchanged
    ScoreTable scaled(sizes, t.mode());
    for (const auto& [s, v] : log) scaled.update(s, v * 3.7);
    CHECK(scaled.best_size() == t.best_size());
  }
}

TEST_CASE("score table text round-trip") {
  ScoreTable t({16, 32, 48}, ScoreMode::Loss);
  t.update(16, 0.1 + 0.2);
  t.update(32, 1.0 / 3.0);
  const auto back = ScoreTable::from_text(t.to_text());
  CHECK(back == t);
  CHECK(t.to_text().find("16 0.30000000000000004 1 loss") != std::string::npos);

  const auto path = std::filesystem::temp_directory_path() / "dms_scores_test.txt";
  t.save(path);
  CHECK(ScoreTable::load(path) == t);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(ScoreTable::from_text("16 abc 1 loss\n"), DataError);
  CHECK_THROWS_AS(ScoreTable::from_text(""), DataError);
  CHECK_THROWS_AS(ScoreTable::from_text("16 0.5 1 loss\n32 0.5 1 accuracy\n"), DataError);
}
