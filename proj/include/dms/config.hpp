#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dms/trainer.hpp"

namespace dms {

struct SceneRef {
  std::filesystem::path image;
  std::optional<std::filesystem::path> labels;
};

/// Parsed run configuration. Text form is `key = value` lines, optionally
/// grouped under [data], [model], [scheduler] and [trainer]; `#` starts a
/// comment. Scene lists are comma-separated `image[:labels]` entries, resolved
/// against the directory of the config file.
struct RunConfig {
  // [data]
  std::vector<SceneRef> train_scenes;
  std::vector<SceneRef> val_scenes;
  int bands = 3;
  int classes = 2;
  bool class_balance = false;
  bool normalize = true;
  std::string palette = "default";
  // [model]
  std::string model = "Dilated6";
  std::optional<std::vector<int>> widths;
  // [scheduler]
  std::optional<std::string> dist;
  std::optional<std::vector<int>> sizes;
  std::optional<std::pair<int, int>> size_range;
  std::vector<int> emphasized;
  std::string score = "accuracy";
  long score_warmup = 0;
  // [trainer]
  double lr = 0.01;
  double weight_decay = 0.001;
  long iterations = 1000;
  double decay = 0.5;
  long decay_steps = 50000;
  int batch = 16;
  std::uint64_t seed = 1;
  long checkpoint_every = 0;
  long validate_every = 0;
  double overlap = 0.0;
};

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text that parses back to the same configuration.
std::string echo_config(const RunConfig& config);

PatchSizeDistribution make_distribution(const RunConfig& config);
TrainConfig make_train_config(const RunConfig& config);
NetworkSpec make_network_spec(const RunConfig& config);

std::vector<int> parse_int_list(std::string_view text, std::string_view key);
/// Accepts `lo..hi`.
std::pair<int, int> parse_range(std::string_view text, std::string_view key);
std::vector<SceneRef> parse_scene_list(std::string_view text, const std::filesystem::path& base_dir);

}  // namespace dms
