#include "dms/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dms/errors.hpp"
#include "dms/models.hpp"

namespace dms {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::map<std::string, std::string, std::less<>>& key_sections() {
  static const std::map<std::string, std::string, std::less<>> keys = {
      {"train_scenes", "data"}, {"val_scenes", "data"},       {"bands", "data"},
      {"classes", "data"},      {"class_balance", "data"},    {"normalize", "data"},
      {"palette", "data"},      {"model", "model"},           {"widths", "model"},
      {"dist", "scheduler"},    {"sizes", "scheduler"},       {"size_range", "scheduler"},
      {"emphasized", "scheduler"}, {"score", "scheduler"},    {"score_warmup", "scheduler"},
      {"lr", "trainer"},        {"weight_decay", "trainer"},  {"iterations", "trainer"},
      {"decay", "trainer"},     {"decay_steps", "trainer"},   {"batch", "trainer"},
      {"seed", "trainer"},      {"checkpoint_every", "trainer"}, {"validate_every", "trainer"},
      {"overlap", "trainer"},
  };
  return keys;
}

template <typename Int>
Int parse_integer(std::string_view text, std::string_view key) {
  text = trim(text);
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view text, std::string_view key) {
  const std::string s(trim(text));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(std::string_view text, std::string_view key) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true/false, got '" + std::string(text) + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<int>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + std::to_string(v[i]);
  return out;
}

std::string scene_list_text(const std::vector<SceneRef>& scenes) {
  std::string out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (i) out += ", ";
    out += std::filesystem::absolute(scenes[i].image).lexically_normal().string();
    if (scenes[i].labels) out += ":" + std::filesystem::absolute(*scenes[i].labels).lexically_normal().string();
  }
  return out;
}

}  // namespace

std::vector<int> parse_int_list(std::string_view text, std::string_view key) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(parse_integer<int>(item, key));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("key '" + std::string(key) + "': empty list");
  return out;
}

std::pair<int, int> parse_range(std::string_view text, std::string_view key) {
  text = trim(text);
  const auto dots = text.find("..");
  if (dots == std::string_view::npos) {
    throw ConfigError("key '" + std::string(key) + "': expected lo..hi, got '" + std::string(text) + "'");
  }
  const int lo = parse_integer<int>(text.substr(0, dots), key);
  const int hi = parse_integer<int>(text.substr(dots + 2), key);
  if (lo < 1 || hi < lo) throw ConfigError("key '" + std::string(key) + "': invalid range " + std::string(text));
  return {lo, hi};
}

std::vector<SceneRef> parse_scene_list(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<SceneRef> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) {
      SceneRef ref;
      const auto colon = item.find(':');
      auto resolve = [&](std::string_view p) {
        std::filesystem::path path{std::string(trim(p))};
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
      };
      ref.image = resolve(item.substr(0, colon));
      if (colon != std::string_view::npos) ref.labels = resolve(item.substr(colon + 1));
      out.push_back(std::move(ref));
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::string section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "data" && section != "model" && section != "scheduler" && section != "trainer") {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = key_sections().find(key);
    if (it == key_sections().end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!section.empty() && it->second != section) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' belongs in [" + it->second +
                        "], found in [" + section + "]");
    }
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");

    if (key == "train_scenes") c.train_scenes = parse_scene_list(value, base_dir);
    else if (key == "val_scenes") c.val_scenes = parse_scene_list(value, base_dir);
    else if (key == "bands") c.bands = parse_integer<int>(value, key);
    else if (key == "classes") c.classes = parse_integer<int>(value, key);
    else if (key == "class_balance") c.class_balance = parse_bool(value, key);
    else if (key == "normalize") c.normalize = parse_bool(value, key);
    else if (key == "palette") c.palette = std::string(value);
    else if (key == "model") c.model = std::string(value);
    else if (key == "widths") c.widths = parse_int_list(value, key);
    else if (key == "dist") c.dist = std::string(value);
    else if (key == "sizes") c.sizes = parse_int_list(value, key);
    else if (key == "size_range") c.size_range = parse_range(value, key);
    else if (key == "emphasized") c.emphasized = parse_int_list(value, key);
    else if (key == "score") c.score = std::string(value);
    else if (key == "score_warmup") c.score_warmup = parse_integer<long>(value, key);
    else if (key == "lr") c.lr = parse_double(value, key);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
    else if (key == "iterations") c.iterations = parse_integer<long>(value, key);
    else if (key == "decay") c.decay = parse_double(value, key);
    else if (key == "decay_steps") c.decay_steps = parse_integer<long>(value, key);
    else if (key == "batch") c.batch = parse_integer<int>(value, key);
    else if (key == "seed") c.seed = parse_integer<std::uint64_t>(value, key);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_integer<long>(value, key);
    else if (key == "validate_every") c.validate_every = parse_integer<long>(value, key);
    else if (key == "overlap") c.overlap = parse_double(value, key);
  }
  // validate eagerly so the offending key is reported before any work starts
  make_distribution(c);
  make_train_config(c);
  make_network_spec(c);
  parse_score_mode(c.score);
  if (!(c.overlap >= 0.0 && c.overlap <= 0.9)) throw ConfigError("key 'overlap': must be in [0, 0.9]");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

PatchSizeDistribution make_distribution(const RunConfig& c) {
  std::string dist = c.dist.value_or(c.sizes ? "uniform_fixed" : (c.emphasized.empty() ? "uniform" : "multinomial"));
  if (!c.dist && !c.sizes && !c.size_range) return PatchSizeDistribution::uniform_fixed({25, 50});
  const DistributionMode mode = [&] {
    try {
      return parse_distribution(dist);
    } catch (const ConfigError&) {
      throw ConfigError("key 'dist': unknown distribution '" + dist + "'");
    }
  }();
  switch (mode) {
    case DistributionMode::UniformFixed:
      if (!c.sizes) throw ConfigError("key 'sizes': required by dist = uniform_fixed");
      if (c.size_range) throw ConfigError("key 'size_range': not used by dist = uniform_fixed");
      return PatchSizeDistribution::uniform_fixed(*c.sizes);
    case DistributionMode::UniformRange:
      if (!c.size_range) throw ConfigError("key 'size_range': required by dist = uniform");
      if (!c.emphasized.empty()) throw ConfigError("key 'emphasized': only valid with dist = multinomial");
      return PatchSizeDistribution::uniform_range(c.size_range->first, c.size_range->second);
    case DistributionMode::Multinomial:
      if (!c.size_range) throw ConfigError("key 'size_range': required by dist = multinomial");
      try {
        return PatchSizeDistribution::multinomial(c.size_range->first, c.size_range->second, c.emphasized);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("key 'emphasized': ") + e.what());
      }
  }
  throw ConfigError("key 'dist': unsupported");
}

TrainConfig make_train_config(const RunConfig& c) {
  TrainConfig t;
  t.learning_rate = c.lr;
  t.weight_decay = c.weight_decay;
  t.iterations = c.iterations;
  t.decay_factor = c.decay;
  t.decay_steps = c.decay_steps;
  t.batch_size = c.batch;
  t.distribution = make_distribution(c);
  t.score_mode = [&] {
    try {
      return parse_score_mode(c.score);
    } catch (const ConfigError&) {
      throw ConfigError("key 'score': unknown score mode '" + c.score + "'");
    }
  }();
  t.seed = c.seed;
  t.checkpoint_every = c.checkpoint_every;
  t.validate_every = c.validate_every;
  t.class_balance = c.class_balance;
  t.score_warmup = c.score_warmup;
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key ") + e.what());
  }
  return t;
}

NetworkSpec make_network_spec(const RunConfig& c) {
  Architecture arch;
  try {
    arch = parse_architecture(c.model);
  } catch (const ConfigError&) {
    throw ConfigError("key 'model': unknown architecture '" + c.model + "'");
  }
  try {
    return build_network(arch, c.bands, c.classes, c.widths);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key 'model'/'widths'/'bands'/'classes': ") + e.what());
  }
}

std::string echo_config(const RunConfig& c) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  out += "[data]\n";
  if (!c.train_scenes.empty()) kv("train_scenes", scene_list_text(c.train_scenes));
  if (!c.val_scenes.empty()) kv("val_scenes", scene_list_text(c.val_scenes));
  kv("bands", std::to_string(c.bands));
  kv("classes", std::to_string(c.classes));
  kv("class_balance", c.class_balance ? "true" : "false");
  kv("normalize", c.normalize ? "true" : "false");
  kv("palette", c.palette);
  out += "\n[model]\n";
  kv("model", c.model);
  if (c.widths) kv("widths", join(*c.widths));
  out += "\n[scheduler]\n";
  const PatchSizeDistribution d = make_distribution(c);
  kv("dist", std::string(distribution_name(d.mode())));
  if (d.mode() == DistributionMode::UniformFixed) {
    kv("sizes", join(d.candidates()));
  } else {
    kv("size_range", std::to_string(d.candidates().front()) + ".." + std::to_string(d.candidates().back()));
    if (!d.emphasized().empty()) kv("emphasized", join(d.emphasized()));
  }
  kv("score", c.score);
  kv("score_warmup", std::to_string(c.score_warmup));
  out += "\n[trainer]\n";
  kv("lr", format_double(c.lr));
  kv("weight_decay", format_double(c.weight_decay));
  kv("iterations", std::to_string(c.iterations));
  kv("decay", format_double(c.decay));
  kv("decay_steps", std::to_string(c.decay_steps));
  kv("batch", std::to_string(c.batch));
  kv("seed", std::to_string(c.seed));
  kv("checkpoint_every", std::to_string(c.checkpoint_every));
  kv("validate_every", std::to_string(c.validate_every));
  kv("overlap", format_double(c.overlap));
  return out;
}

}  // namespace dms
