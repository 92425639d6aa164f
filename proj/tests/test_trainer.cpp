#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "dms/errors.hpp"
#include "dms/synth.hpp"
#include "dms/trainer.hpp"
#include "oracles.hpp"

using namespace dms;
namespace fs = std::filesystem;

namespace {

NetworkSpec tiny_spec(int bands = 3, int classes = 2, int width = 2) {
  return build_network(Architecture::Dilated6, bands, classes, std::vector<int>(6, width));
}

std::vector<RasterScene> small_synth(int scenes = 2, int size = 64, std::uint64_t seed = 1) {
  SynthOptions o;
  o.scenes = scenes;
  o.height = o.width = size;
  o.seed = seed;
  return synth_scenes(o);
}

TrainConfig quick_config(long iterations, std::vector<int> sizes = {8, 12}) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch_size = 2;
  c.learning_rate = 0.02;
  c.distribution = PatchSizeDistribution::uniform_fixed(std::move(sizes));
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("staircase learning rate") {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.decay_factor = 0.5;
  c.decay_steps = 50000;
  CHECK(lr_at(c, 0) == 0.01);
  CHECK(lr_at(c, 49999) == 0.01);
  CHECK(lr_at(c, 50000) == doctest::Approx(0.005));
  CHECK(lr_at(c, 100000) == doctest::Approx(0.0025));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.decay_factor = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.decay_factor = 1.0;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.batch_size = 1;
  c.iterations = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero iterations leaves parameters untouched") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth();
  const auto cfg = quick_config(0);
  const auto state = train(cfg, spec, scenes);
  CHECK(state.params == init_params<float>(spec, cfg.seed));
  CHECK(state.scores.total_updates() == 0);
  CHECK(state.scores.mean_scores().empty());
  CHECK(state.history.empty());
}

TEST_CASE("seed-fixed runs repeat exactly") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth();
  const auto cfg = quick_config(100);
  const auto a = train(cfg, spec, scenes);
  const auto b = train(cfg, spec, scenes);
  CHECK(a.history == b.history);
  CHECK(a.params == b.params);
  CHECK(a.scores == b.scores);
  CHECK(a.scores.total_updates() == 100);
  auto other = cfg;
  other.seed = 6;
  CHECK_FALSE(train(other, spec, scenes).history == a.history);
}

TEST_CASE("each step records its size and updates exactly one score") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth();
  auto cfg = quick_config(40, {6, 9, 14});
  TrainState state = initial_state(cfg, spec);
  std::map<int, std::uint64_t> drawn;
  TrainHooks hooks;
  hooks.on_step = [&](const HistoryRow& r) { ++drawn[r.size]; };
  train(cfg, spec, scenes, state, hooks);
  CHECK(state.history.size() == 40);
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    CHECK(state.history[i].step == static_cast<long>(i));
    CHECK(state.history[i].lr == lr_at(cfg, static_cast<long>(i)));
  }
  for (const auto& [size, entry] : state.scores.entries()) CHECK(entry.count == drawn[size]);
}

TEST_CASE("drawn sizes follow the configured distribution") {
  // a 1-channel network on 4-pixel patches keeps 10 000 steps cheap
  const auto spec = tiny_spec(3, 2, 1);
  const auto scenes = small_synth(1, 16);
  TrainConfig cfg = quick_config(10000);
  cfg.batch_size = 1;
  cfg.distribution = PatchSizeDistribution::multinomial(3, 6, {3});
  const auto state = train(cfg, spec, scenes);
  std::vector<double> obs(4, 0.0), exp;
  for (const auto& r : state.history) obs[static_cast<std::size_t>(r.size - 3)] += 1;
  for (double p : cfg.distribution.probabilities()) exp.push_back(p * 10000);
  CHECK(oracle::chi2_stat(obs, exp) < oracle::chi2_critical_001(3));
}

TEST_CASE("checkpoint resume reproduces an uninterrupted run") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth();
  const auto dir = fs::temp_directory_path() / "dms_trainer_ckpt";
  fs::remove_all(dir);
  auto cfg = quick_config(60);
  const auto full = train(cfg, spec, scenes);

  cfg.iterations = 25;
  const auto half = train(cfg, spec, scenes);
  save_checkpoint(dir, spec, half);
  auto [spec2, resumed] = load_checkpoint(dir);
  CHECK(resumed.step == 25);
  CHECK(resumed.params == half.params);
  CHECK(resumed.sampler == half.sampler);
  CHECK(resumed.history.size() == 25);
  cfg.iterations = 60;
  train(cfg, spec2, scenes, resumed);
  CHECK(resumed.params == full.params);
  CHECK(resumed.scores == full.scores);
  REQUIRE(resumed.history.size() == full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    CHECK(resumed.history[i].size == full.history[i].size);
    CHECK(history_csv_row(resumed.history[i]) == history_csv_row(full.history[i]));
  }
  fs::remove_all(dir);
}

TEST_CASE("periodic checkpoints fire on schedule") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth();
  auto cfg = quick_config(30);
  cfg.checkpoint_every = 10;
  std::vector<long> at;
  TrainState state = initial_state(cfg, spec);
  TrainHooks hooks;
  hooks.checkpoint = [&](const TrainState& s) { at.push_back(s.step); };
  train(cfg, spec, scenes, state, hooks);
  CHECK(at == std::vector<long>{10, 20, 30});
}

TEST_CASE("a diverging run stops with a numeric error") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth(1);
  auto cfg = quick_config(200);
  cfg.learning_rate = 1e12;
  TrainState state = initial_state(cfg, spec);
  CHECK_THROWS_AS(train(cfg, spec, scenes, state), NumericError);
  CHECK(state.step < 200);
  CHECK(state.history.size() == static_cast<std::size_t>(state.step));
}

TEST_CASE("training data preconditions") {
  const auto spec = tiny_spec();
  CHECK_THROWS_AS(train(quick_config(5), spec, std::vector<RasterScene>{}), DataError);
  auto scenes = small_synth(1);
  std::fill(scenes[0].void_mask.begin(), scenes[0].void_mask.end(), 1);
  CHECK_THROWS_AS(train(quick_config(5), spec, scenes), DataError);
}

TEST_CASE("all-void batches skip the update and the score") {
  const auto spec = tiny_spec();
  auto scenes = small_synth(1, 64);
  // left half void
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 40; ++x) scenes[0].void_mask[y * 64 + x] = 1;
  const auto state = train(quick_config(200, {4}), spec, scenes);
  std::size_t void_rows = 0;
  for (const auto& r : state.history) void_rows += r.loss == 0.0 && r.accuracy == 1.0;
  CHECK(void_rows > 0);
  CHECK(state.scores.total_updates() == 200 - void_rows);
  CHECK(state.history.size() == 200);
}

TEST_CASE("validation is reported but never scored") {
  const auto spec = tiny_spec();
  const auto scenes = small_synth(2);
  const auto val = small_synth(1, 48, 9);
  auto cfg = quick_config(20);
  cfg.validate_every = 10;
  TrainState with_val = initial_state(cfg, spec);
  int calls = 0;
  TrainHooks hooks;
  hooks.on_validation = [&](long, int size, const MetricsReport& r) {
    ++calls;
    CHECK(cfg.distribution.contains(size));
    CHECK(r.overall_accuracy.has_value());
  };
  train(cfg, spec, scenes, with_val, hooks, val);
  CHECK(calls == 2);
  CHECK(with_val.scores == train(cfg, spec, scenes).scores);
}

TEST_CASE("evaluate") {
  const auto spec = tiny_spec(3, 2);
  auto params = zero_params<float>(spec);
  params.convs.back().bias = {1.0f, 0.0f};
  auto scenes = small_synth(1, 40);
  std::fill(scenes[0].labels.begin(), scenes[0].labels.end(), 0);
  const auto r = evaluate(spec, params, scenes, 16);
  CHECK(*r.overall_accuracy == 1.0);
  CHECK(r.matrix.total() == 1600);

  auto void_scene = scenes;
  std::fill(void_scene[0].void_mask.begin(), void_scene[0].void_mask.end(), 1);
  const auto e = evaluate(spec, params, void_scene, 16);
  CHECK(e.matrix.empty());
  CHECK_FALSE(e.overall_accuracy);
  CHECK_FALSE(e.kappa);
}

TEST_CASE("history csv") {
  const std::vector<HistoryRow> rows = {{0, 16, 0.693147, 0.5, 0.01}, {1, 32, 0.5, 0.75, 0.01}};
  CHECK(history_csv_header() == "step,size,loss,accuracy,lr");
  CHECK(history_csv_row(rows[0]) == "0,16,0.693147,0.5,0.01");
  const auto path = fs::temp_directory_path() / "dms_history.csv";
  write_history_csv(path, rows);
  CHECK(read_history_csv(path) == rows);
  fs::remove(path);
}

TEST_CASE("patches too small to see a class stripe score lower") {
  // core stripes are 24 rows wide, so 8-pixel patches often see no class evidence
  SynthOptions o;
  o.scenes = 3;
  o.height = o.width = 96;
  o.seed = 2;
  const auto scenes = synth_scenes(o);
  const auto spec = build_network(Architecture::Dilated6, 3, 2, std::vector<int>(6, 6));
  TrainConfig cfg;
  cfg.iterations = 1200;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.distribution = PatchSizeDistribution::uniform_fixed({8, 32});
  cfg.seed = 3;
  const auto state = train(cfg, spec, scenes);
  const auto means = state.scores.mean_scores();
  CHECK(means.at(32) > means.at(8));
  CHECK(state.scores.best_size() == 32);
}
