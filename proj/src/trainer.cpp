#include "dms/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dms/errors.hpp"
#include "dms/infer.hpp"

namespace dms {

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay must be in (0, 1]");
  if (decay_steps < 1) throw ConfigError("decay_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

double lr_at(const TrainConfig& config, long step) {
  const long stage = step / config.decay_steps;
  return config.learning_rate * std::pow(config.decay_factor, static_cast<double>(stage));
}

TrainState initial_state(const TrainConfig& config, const NetworkSpec& spec) {
  TrainState s;
  s.params = init_params<float>(spec, config.seed);
  s.scores = ScoreTable(config.distribution.candidates(), config.score_mode);
  s.sampler = Rng::derive(config.seed, ~std::uint64_t{0});
  return s;
}

void train(const TrainConfig& config, const NetworkSpec& spec, std::span<const RasterScene> scenes,
           TrainState& state, const TrainHooks& hooks, std::span<const RasterScene> validation) {
  config.validate();
  if (scenes.empty()) throw DataError("training needs at least one scene");
  std::size_t labelled = 0;
  for (const auto& s : scenes) labelled += s.labels.size() - s.void_count();
  if (labelled == 0) throw DataError("training scenes contain no labelled pixels");

  for (long step = state.step; step < config.iterations; ++step) {
    const int size = config.distribution.sample(state.sampler);
    Rng batch_rng = Rng::derive(config.seed, static_cast<std::uint64_t>(step));
    const PatchBatch batch = extract_batch(scenes, size, config.batch_size, batch_rng, config.class_balance);

    ForwardCache<float> cache;
    const Tensor<float> logits = forward(spec, state.params, batch.inputs, &cache);
    const auto xent = softmax_cross_entropy<float>(logits, batch.labels, batch.void_mask);
    if (!std::isfinite(xent.loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (patch size " + std::to_string(size) +
                         ")");
    }
    const double lr = lr_at(config, step);
    if (!xent.all_void) {
      const Gradients<float> grads = backward(spec, state.params, cache, xent.grad_logits);
      sgd_update(state.params, grads, lr, config.weight_decay);
      if (step >= config.score_warmup) {
        state.scores.update(size, config.score_mode == ScoreMode::Accuracy ? xent.accuracy : xent.loss);
      }
    }
    HistoryRow row{step, size, xent.loss, xent.accuracy, lr};
    state.history.push_back(row);
    state.step = step + 1;
    if (hooks.on_step) hooks.on_step(row);
    if (hooks.checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      hooks.checkpoint(state);
    }
    if (config.validate_every > 0 && !validation.empty() && state.step % config.validate_every == 0) {
      const int val_size = state.scores.total_updates() > 0 ? state.scores.best_size() : size;
      const MetricsReport report = evaluate(spec, state.params, validation, val_size);
      if (hooks.on_validation) hooks.on_validation(state.step, val_size, report);
    }
  }
}

TrainState train(const TrainConfig& config, const NetworkSpec& spec, std::span<const RasterScene> scenes) {
  TrainState state = initial_state(config, spec);
  train(config, spec, scenes, state);
  return state;
}

MetricsReport evaluate(const NetworkSpec& spec, const Params<float>& params, std::span<const RasterScene> scenes,
                       int size, double overlap) {
  ConfusionMatrix m(static_cast<std::size_t>(spec.num_classes));
  for (const auto& scene : scenes) {
    if (scene.void_count() == scene.labels.size()) continue;
    const Prediction p = predict_scene(spec, params, scene, size, overlap);
    m.accumulate(scene.labels, p.classes, scene.void_mask);
  }
  return summarize(m);
}

std::string history_csv_header() { return "step,size,loss,accuracy,lr"; }

std::string history_csv_row(const HistoryRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%d,%.9g,%.9g,%.9g", row.step, row.size, row.loss, row.accuracy, row.lr);
  return buf;
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << history_csv_header() << '\n';
  for (const auto& r : rows) os << history_csv_row(r) << '\n';
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != history_csv_header()) throw DataError(path.string() + ": bad header");
  std::vector<HistoryRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    HistoryRow r;
    if (std::sscanf(line.c_str(), "%ld,%d,%lf,%lf,%lf", &r.step, &r.size, &r.loss, &r.accuracy, &r.lr) != 5) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + " is not a history row");
    }
    rows.push_back(r);
  }
  return rows;
}

void save_checkpoint(const std::filesystem::path& dir, const NetworkSpec& spec, const TrainState& state) {
  std::filesystem::create_directories(dir);
  save_params(dir / "weights.dsw", spec, state.params);
  state.scores.save(dir / "scores.txt");
  std::ofstream os(dir / "rng.txt", std::ios::trunc);
  if (!os) throw DataError("cannot write '" + (dir / "rng.txt").string() + "'");
  os << "step " << state.step << '\n' << state.sampler.state() << '\n';
  write_history_csv(dir / "history.csv", state.history);
}

std::pair<NetworkSpec, TrainState> load_checkpoint(const std::filesystem::path& dir) {
  auto [spec, params] = load_params(dir / "weights.dsw");
  TrainState state;
  state.params = std::move(params);
  state.scores = ScoreTable::load(dir / "scores.txt");
  std::ifstream is(dir / "rng.txt");
  if (!is) throw DataError("cannot open '" + (dir / "rng.txt").string() + "'");
  std::string tag;
  long step = -1;
  is >> tag >> step;
  if (tag != "step" || step < 0) throw DataError((dir / "rng.txt").string() + ": missing step line");
  std::string rest;
  std::getline(is, rest);
  std::getline(is, rest);
  state.sampler.set_state(rest);
  state.step = step;
  if (std::filesystem::exists(dir / "history.csv")) state.history = read_history_csv(dir / "history.csv");
  if (state.history.size() != static_cast<std::size_t>(step)) {
    throw DataError(dir.string() + ": history has " + std::to_string(state.history.size()) + " rows, expected " +
                    std::to_string(step));
  }
  return {std::move(spec), std::move(state)};
}

}  // namespace dms
