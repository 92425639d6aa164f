#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dms/data.hpp"
#include "dms/metrics.hpp"
#include "dms/models.hpp"
#include "dms/scheduler.hpp"

namespace dms {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  long iterations = 1000;
  double decay_factor = 0.5;
  long decay_steps = 50000;
  int batch_size = 16;
  PatchSizeDistribution distribution = PatchSizeDistribution::uniform_fixed({25, 50});
  ScoreMode score_mode = ScoreMode::Accuracy;
  std::uint64_t seed = 1;
  long checkpoint_every = 0;
  long validate_every = 0;
  bool class_balance = false;
  // batches before this step train the network but leave the score table alone
  long score_warmup = 0;

  void validate() const;
};

/// Staircase exponential decay: base * factor^floor(step / decay_steps).
double lr_at(const TrainConfig& config, long step);

struct HistoryRow {
  long step = 0;
  int size = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

struct TrainState {
  long step = 0;
  Params<float> params;
  ScoreTable scores;
  Rng sampler;
  std::vector<HistoryRow> history;
};

TrainState initial_state(const TrainConfig& config, const NetworkSpec& spec);

struct TrainHooks {
  std::function<void(const TrainState&)> checkpoint;
  std::function<void(const HistoryRow&)> on_step;
  std::function<void(long step, int size, const MetricsReport&)> on_validation;
};

/// Runs steps state.step .. config.iterations-1. Each step draws a patch size,
/// extracts a batch of that size, takes one SGD step and adds the batch
/// accuracy (or loss) to that size's score. A non-finite loss throws
/// NumericError before the parameters are touched.
void train(const TrainConfig& config, const NetworkSpec& spec, std::span<const RasterScene> scenes,
           TrainState& state, const TrainHooks& hooks = {}, std::span<const RasterScene> validation = {});

TrainState train(const TrainConfig& config, const NetworkSpec& spec, std::span<const RasterScene> scenes);

/// Confusion-matrix metrics of tiled prediction at `size` over non-void pixels.
MetricsReport evaluate(const NetworkSpec& spec, const Params<float>& params, std::span<const RasterScene> scenes,
                       int size, double overlap = 0.0);

std::string history_csv_header();
std::string history_csv_row(const HistoryRow& row);
void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows);
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

/// weights.dsw + scores.txt + rng.txt (step and size-sampler state) + history.csv.
void save_checkpoint(const std::filesystem::path& dir, const NetworkSpec& spec, const TrainState& state);
std::pair<NetworkSpec, TrainState> load_checkpoint(const std::filesystem::path& dir);

}  // namespace dms
