#include "dms/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "dms/config.hpp"
#include "dms/errors.hpp"
#include "dms/gradcheck.hpp"
#include "dms/infer.hpp"
#include "dms/synth.hpp"
#include "dms/trainer.hpp"

namespace fs = std::filesystem;

namespace dms {

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::vector<RasterScene> load_scenes(const std::vector<SceneRef>& refs) {
  std::vector<RasterScene> scenes;
  scenes.reserve(refs.size());
  for (const auto& r : refs) {
    if (!fs::exists(r.image)) throw DataError("missing scene file '" + r.image.string() + "'");
    if (r.labels && !fs::exists(*r.labels)) throw DataError("missing label file '" + r.labels->string() + "'");
    scenes.push_back(load_scene(r.image, r.labels));
  }
  return scenes;
}

void check_bands(const NetworkSpec& spec, const std::vector<RasterScene>& scenes) {
  for (const auto& s : scenes) {
    if (static_cast<int>(s.band_count()) != spec.in_channels) {
      throw DataError("scene '" + s.id + "' has " + std::to_string(s.band_count()) + " bands, config says " +
                      std::to_string(spec.in_channels));
    }
  }
}

void check_labels(const NetworkSpec& spec, const std::vector<RasterScene>& scenes) {
  for (const auto& s : scenes) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (!s.void_mask[i] && s.labels[i] >= spec.num_classes) {
        throw DataError("scene '" + s.id + "' has label " + std::to_string(s.labels[i]) + " but classes = " +
                        std::to_string(spec.num_classes));
      }
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path step_dir(const fs::path& run, long step) { return run / "checkpoints" / ("step_" + std::to_string(step)); }

std::optional<fs::path> latest_checkpoint(const fs::path& run) {
  const fs::path root = run / "checkpoints";
  if (!fs::is_directory(root)) return std::nullopt;
  long best = -1;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step_", 0) != 0) continue;
    try {
      best = std::max(best, std::stol(name.substr(5)));
    } catch (const std::exception&) {
    }
  }
  if (best < 0) return std::nullopt;
  return step_dir(run, best);
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  bool resume = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = load_config(a.config);
  const NetworkSpec spec = make_network_spec(rc);
  const TrainConfig tc = make_train_config(rc);
  if (rc.train_scenes.empty()) throw ConfigError("key 'train_scenes': at least one scene is required");

  std::vector<RasterScene> train_set = load_scenes(rc.train_scenes);
  std::vector<RasterScene> val_set = load_scenes(rc.val_scenes);
  check_bands(spec, train_set);
  check_bands(spec, val_set);
  check_labels(spec, train_set);
  check_labels(spec, val_set);

  const fs::path run(a.out);
  fs::create_directories(run);
  const std::string echoed = echo_config(rc);
  if (a.resume) {
    if (!fs::exists(run / "config.txt")) throw DataError("cannot resume: '" + run.string() + "' has no config.txt");
    if (read_text(run / "config.txt") != echoed) {
      throw ConfigError("cannot resume: config differs from the one recorded in '" + run.string() + "'");
    }
  } else {
    write_text(run / "config.txt", echoed);
  }

  Normalizer norm;
  if (rc.normalize) {
    norm = fit_normalizer(train_set);
  } else {
    norm.mean.assign(spec.in_channels, 0.0);
    norm.stddev.assign(spec.in_channels, 1.0);
  }
  norm.save(run / "normalizer.txt");
  for (auto& s : train_set) norm.apply(s);
  for (auto& s : val_set) norm.apply(s);

  TrainState state;
  if (a.resume) {
    const auto ckpt = latest_checkpoint(run);
    if (!ckpt) throw DataError("cannot resume: no checkpoint under '" + (run / "checkpoints").string() + "'");
    auto [ckpt_spec, ckpt_state] = load_checkpoint(*ckpt);
    if (ckpt_spec.layers.size() != spec.layers.size() || param_count(ckpt_spec) != param_count(spec)) {
      throw DataError("checkpoint '" + ckpt->string() + "' does not match the configured network");
    }
    state = std::move(ckpt_state);
    if (!a.quiet) out << "resumed from " << ckpt->string() << " at step " << state.step << '\n';
  } else {
    state = initial_state(tc, spec);
    save_checkpoint(step_dir(run, 0), spec, state);
  }

  std::ofstream val_csv;
  if (!val_set.empty() && tc.validate_every > 0) {
    const bool append = a.resume && fs::exists(run / "validation.csv");
    val_csv.open(run / "validation.csv", append ? std::ios::app : std::ios::trunc);
    if (!append) val_csv << "step," << metrics_csv_header(spec.num_classes) << '\n';
  }

  TrainHooks hooks;
  hooks.checkpoint = [&](const TrainState& s) { save_checkpoint(step_dir(run, s.step), spec, s); };
  hooks.on_validation = [&](long step, int size, const MetricsReport& r) {
    val_csv << step << ',' << metrics_csv_row(r, size) << '\n';
    val_csv.flush();
  };
  const long log_every = std::max<long>(1, tc.iterations / 20);
  if (!a.quiet) {
    hooks.on_step = [&](const HistoryRow& r) {
      if ((r.step + 1) % log_every == 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %ld size %d loss %.5f acc %.4f lr %.6g", r.step + 1, r.size, r.loss,
                      r.accuracy, r.lr);
        out << buf << '\n' << std::flush;
      }
    };
  }

  try {
    train(tc, spec, train_set, state, hooks, val_set);
  } catch (const NumericError&) {
    write_history_csv(run / "history.csv", state.history);
    throw;
  }
  write_history_csv(run / "history.csv", state.history);
  if (tc.iterations > 0) {
    save_checkpoint(run, spec, state);
    if (!fs::exists(step_dir(run, state.step))) save_checkpoint(step_dir(run, state.step), spec, state);
  }

  if (state.scores.total_updates() > 0) {
    out << "best_size " << state.scores.best_size() << '\n';
  } else {
    out << "best_size none\n";
  }
  return kExitOk;
}

// --- predict -------------------------------------------------------------

struct ModelArgs {
  std::string weights;
  std::string scores;
  int size = 0;
  std::string normalizer;
  bool no_normalize = false;
  double overlap = 0.0;
};

struct LoadedModel {
  NetworkSpec spec;
  Params<float> params;
  std::optional<ScoreTable> scores;
  std::optional<Normalizer> normalizer;
};

LoadedModel load_model(const ModelArgs& a) {
  LoadedModel m;
  auto [spec, params] = load_params(a.weights);
  m.spec = std::move(spec);
  m.params = std::move(params);
  if (!a.scores.empty()) m.scores = ScoreTable::load(a.scores);
  if (!a.normalizer.empty()) {
    m.normalizer = Normalizer::load(a.normalizer);
  } else if (!a.no_normalize) {
    // a run directory keeps normalizer.txt beside the weights or two levels up for step checkpoints
    const fs::path dir = fs::absolute(a.weights).parent_path();
    for (const fs::path& cand : {dir / "normalizer.txt", dir.parent_path().parent_path() / "normalizer.txt"}) {
      if (fs::exists(cand)) {
        m.normalizer = Normalizer::load(cand);
        break;
      }
    }
  }
  return m;
}

int resolve_size(const ModelArgs& a, const LoadedModel& m) {
  if (a.size > 0) return a.size;
  if (!m.scores) throw ConfigError("no patch size: pass --scores <table> or --size <n>");
  if (m.scores->total_updates() == 0) throw DataError("score table '" + a.scores + "' has no scored sizes");
  return m.scores->best_size();
}

struct PredictArgs {
  ModelArgs model;
  std::vector<std::string> images;
  std::string out;
  std::string palette = "default";
  bool probabilities = false;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const LoadedModel m = load_model(a.model);
  const int size = resolve_size(a.model, m);
  const Palette palette = named_palette(a.palette, static_cast<std::size_t>(m.spec.num_classes));
  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (const auto& img : a.images) {
    if (!fs::exists(img)) throw DataError("missing image '" + img + "'");
    RasterScene scene = load_scene(img);
    if (m.normalizer) m.normalizer->apply(scene);
    const Prediction p = predict_scene(m.spec, m.params, scene, size, a.model.overlap, a.probabilities);
    const std::string stem = fs::path(img).stem().string();
    write_rslb(dir / (stem + ".rslb"), LabelMap{p.width, p.height, p.classes});
    write_png(dir / (stem + ".png"), render_map(p.classes, p.width, p.height, palette));
    if (a.probabilities) write_rsrf(dir / (stem + "_prob.rsrf"), p.probabilities);
    out << stem << " size " << size << " -> " << (dir / (stem + ".rslb")).string() << '\n';
  }
  return kExitOk;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  ModelArgs model;
  std::string scenes;
  bool sweep = false;
  std::string sizes;
  std::string report;
  std::vector<std::string> pred;
  std::vector<std::string> labels;
  int classes = 0;
};

LabelMap load_label_file(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing label file '" + path.string() + "'");
  const std::string ext = path.extension().string();
  if (ext == ".rslb") return read_rslb(path);
  if (ext == ".png") {
    const Image8 img = read_png(path);
    if (img.channels != 1) throw DataError(path.string() + ": label PNG must be 8-bit grayscale");
    return LabelMap{img.width, img.height, img.pixels};
  }
  throw DataError("unsupported label format '" + path.string() + "'");
}

void emit_reports(const std::vector<std::pair<int, MetricsReport>>& rows, std::size_t classes,
                  const std::string& report, std::ostream& out) {
  std::string csv = metrics_csv_header(classes) + "\n";
  for (const auto& [size, r] : rows) csv += metrics_csv_row(r, size) + "\n";
  for (const auto& [size, r] : rows) {
    if (rows.size() > 1 || size > 0) out << "size " << size << '\n';
    out << metrics_text(r);
  }
  if (!report.empty()) write_text(report, csv);
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (!a.pred.empty() || !a.labels.empty()) {
    if (a.pred.size() != a.labels.size()) throw ConfigError("--pred and --labels must be given the same number of times");
    std::vector<std::pair<LabelMap, LabelMap>> pairs;
    int max_class = -1;
    for (std::size_t i = 0; i < a.pred.size(); ++i) {
      LabelMap p = load_label_file(a.pred[i]);
      LabelMap l = load_label_file(a.labels[i]);
      if (p.width != l.width || p.height != l.height) {
        throw DataError("'" + a.pred[i] + "' and '" + a.labels[i] + "' differ in extent");
      }
      for (std::size_t k = 0; k < l.values.size(); ++k) {
        if (l.values[k] == kVoidLabel) continue;
        max_class = std::max({max_class, int{l.values[k]}, int{p.values[k]}});
      }
      pairs.emplace_back(std::move(p), std::move(l));
    }
    const std::size_t classes = a.classes > 0 ? static_cast<std::size_t>(a.classes)
                                              : static_cast<std::size_t>(std::max(max_class + 1, 1));
    ConfusionMatrix m(classes);
    for (const auto& [p, l] : pairs) {
      std::vector<std::uint8_t> mask(l.values.size());
      std::vector<std::uint8_t> truth(l.values.size());
      for (std::size_t k = 0; k < mask.size(); ++k) {
        mask[k] = l.values[k] == kVoidLabel;
        truth[k] = mask[k] ? 0 : l.values[k];
        if (!mask[k] && p.values[k] >= classes) {
          throw DataError("prediction class " + std::to_string(p.values[k]) + " at pixel " + std::to_string(k) +
                          " exceeds classes = " + std::to_string(classes));
        }
      }
      m.accumulate(truth, p.values, mask);
    }
    emit_reports({{0, summarize(m)}}, classes, a.report, out);
    return kExitOk;
  }

  if (a.model.weights.empty()) throw ConfigError("evaluate needs --weights (model mode) or --pred/--labels (map mode)");
  if (a.scenes.empty()) throw ConfigError("evaluate needs --scenes img:lbl[,img:lbl...]");
  const LoadedModel m = load_model(a.model);
  std::vector<RasterScene> scenes = load_scenes(parse_scene_list(a.scenes, {}));
  check_bands(m.spec, scenes);
  check_labels(m.spec, scenes);
  if (m.normalizer) {
    for (auto& s : scenes) m.normalizer->apply(s);
  }

  std::vector<int> sizes;
  if (a.sweep) {
    if (!a.sizes.empty()) {
      sizes = parse_int_list(a.sizes, "--sizes");
    } else if (m.scores) {
      for (const auto& [size, entry] : m.scores->entries()) sizes.push_back(size);
    } else {
      throw ConfigError("--sweep needs --scores or --sizes");
    }
  } else {
    sizes.push_back(resolve_size(a.model, m));
  }
  std::vector<std::pair<int, MetricsReport>> rows;
  for (const int size : sizes) rows.emplace_back(size, evaluate(m.spec, m.params, scenes, size, a.model.overlap));
  emit_reports(rows, static_cast<std::size_t>(m.spec.num_classes), a.report, out);
  return kExitOk;
}

// --- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  std::string arch;
  std::uint64_t seed = 1;
  bool corrupt = false;
  double tolerance = 1e-4;
  int width = 3;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, GradcheckReport>> reports;
  const bool all = a.arch == "all";
  if (all || a.arch == "layers") reports.emplace_back("layers", check_layers(a.seed));
  std::vector<Architecture> archs;
  if (all) {
    archs = {Architecture::Dilated6, Architecture::DenseDilated6, Architecture::Dilated6Pooling,
             Architecture::Dilated8Pooling};
  } else if (a.arch != "layers") {
    archs.push_back(parse_architecture(a.arch));
  }
  NetworkCheckOptions opts;
  opts.corrupt_backward = a.corrupt;
  for (const Architecture arch : archs) {
    const std::vector<int> widths(default_widths(arch).size(), a.width);
    const NetworkSpec spec = build_network(arch, 2, 3, widths);
    reports.emplace_back(std::string(architecture_name(arch)), check_network(spec, a.seed, opts));
  }
  bool ok = true;
  for (const auto& [name, r] : reports) {
    out << "[" << name << "]\n" << r.to_text();
    const bool pass = r.passed(a.tolerance);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s worst %.3e tolerance %.1e\n", pass ? "PASS" : "FAIL", r.worst(), a.tolerance);
    out << buf;
    ok = ok && pass;
  }
  if (!ok) throw NumericError("gradient check failed");
  return kExitOk;
}

// --- synth ---------------------------------------------------------------

int cmd_synth(const std::string& dir, const SynthOptions& o, std::ostream& out) {
  write_synth_dataset(dir, o);
  out << "wrote " << o.scenes << " scenes to " << dir << " (separable from size " << o.min_separable_size() << ")\n";
  return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic multi-scale dilated-network segmentation toolkit", "dms"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a config file");
  train_cmd->add_option("config", train_args.config, "Config file")->required();
  train_cmd->add_option("--out", train_args.out, "Run directory")->required();
  train_cmd->add_flag("--resume", train_args.resume, "Continue from the latest checkpoint in the run directory");
  train_cmd->add_flag("--quiet", train_args.quiet, "Only print the selected patch size");

  auto add_model = [](CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("--weights", m.weights, "Weight file (weights.dsw)");
    cmd->add_option("--scores", m.scores, "Score table; its best size is used unless --size is given");
    cmd->add_option("--size", m.size, "Patch size override")->check(CLI::PositiveNumber);
    cmd->add_option("--normalizer", m.normalizer, "Normalizer file (default: normalizer.txt of the run)");
    cmd->add_flag("--no-normalize", m.no_normalize, "Feed raw bands");
    cmd->add_option("--overlap", m.overlap, "Tile overlap fraction in [0, 0.9]");
  };

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Segment whole scenes");
  add_model(predict_cmd, predict_args.model);
  predict_cmd->get_option("--weights")->required();
  predict_cmd->add_option("images", predict_args.images, "Images (.rsrf or .png)")->required();
  predict_cmd->add_option("--out", predict_args.out, "Output directory")->required();
  predict_cmd->add_option("--palette", predict_args.palette, "coffee, isprs or default");
  predict_cmd->add_flag("--probabilities", predict_args.probabilities, "Also write per-class probabilities");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against labels");
  add_model(eval_cmd, eval_args.model);
  eval_cmd->add_option("--scenes", eval_args.scenes, "Comma-separated img:lbl pairs");
  eval_cmd->add_flag("--sweep", eval_args.sweep, "One metrics row per candidate size");
  eval_cmd->add_option("--sizes", eval_args.sizes, "Sizes for --sweep (default: score table sizes)");
  eval_cmd->add_option("--report", eval_args.report, "Write a CSV report");
  eval_cmd->add_option("--pred", eval_args.pred, "Predicted class map (.rslb or .png)");
  eval_cmd->add_option("--labels", eval_args.labels, "Reference label map (.rslb or .png)");
  eval_cmd->add_option("--classes", eval_args.classes, "Class count for map mode");

  GradcheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc_cmd->add_option("arch", gc_args.arch, "Architecture name, 'layers' or 'all'")->required();
  gc_cmd->add_option("--seed", gc_args.seed, "Seed");
  gc_cmd->add_flag("--corrupt-backward", gc_args.corrupt, "Perturb one gradient (negative control)");
  gc_cmd->add_option("--tolerance", gc_args.tolerance, "Maximum relative error");
  gc_cmd->add_option("--width", gc_args.width, "Channels per conv layer")->check(CLI::PositiveNumber);

  std::string synth_dir;
  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the two-texture dataset");
  synth_cmd->add_option("dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Seed");
  synth_cmd->add_option("--scenes", synth.scenes, "Scene count")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--height", synth.height, "Scene height");
  synth_cmd->add_option("--width", synth.width, "Scene width");
  synth_cmd->add_option("--bands", synth.bands, "Band count");
  synth_cmd->add_option("--core-width", synth.core_width, "Width of the shared stripe (texture scale)");
  synth_cmd->add_option("--edge-width", synth.edge_width, "Width of each class stripe");
  synth_cmd->add_option("--noise", synth.noise, "Gaussian noise std");
  synth_cmd->add_option("--void-frac", synth.void_fraction, "Fraction of pixels marked void");

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(one_line(e.what()));
  }

  if (*train_cmd) return cmd_train(train_args, out);
  if (*predict_cmd) return cmd_predict(predict_args, out);
  if (*eval_cmd) return cmd_evaluate(eval_args, out);
  if (*gc_cmd) return cmd_gradcheck(gc_args, out);
  return cmd_synth(synth_dir, synth, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto fail = [&](const char* kind, int code, const std::string& what) {
    err << "dms: error[" << kind << "]: " << one_line(what) << '\n';
    return code;
  };
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    return fail("config", kExitUsage, e.what());
  } catch (const DataError& e) {
    return fail("data", kExitData, e.what());
  } catch (const NumericError& e) {
    return fail("numeric", kExitNumeric, e.what());
  } catch (const ShapeError& e) {
    return fail("data", kExitData, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("data", kExitData, e.what());
  } catch (const std::invalid_argument& e) {
    return fail("usage", kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail("internal", kExitUsage, e.what());
  }
}

}  // namespace dms
