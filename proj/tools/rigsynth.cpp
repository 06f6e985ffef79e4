// rigsynth command-line driver.
//
// Exit status: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include "rigsynth/blink.hpp"
#include "rigsynth/error.hpp"
#include "rigsynth/evalkit.hpp"
#include "rigsynth/features.hpp"
#include "rigsynth/gaze.hpp"
#include "rigsynth/gradcheck.hpp"
#include "rigsynth/model.hpp"
#include "rigsynth/postfx.hpp"
#include "rigsynth/rig.hpp"
#include "rigsynth/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rigsynth;

namespace {

constexpr const char* kMapEnv = "RIGSYNTH_MAP";

// Blink and gaze draw from their own streams so toggling one never shifts
// the other.
std::uint64_t blink_seed(std::uint64_t seed) { return seed * 2 + 1; }
std::uint64_t gaze_seed(std::uint64_t seed) { return seed * 2 + 2; }

ControllerMap resolve_map(const std::string& flag) {
  if (!flag.empty()) return load_controller_map_file(flag);
  if (const char* env = std::getenv(kMapEnv); env && *env) return load_controller_map_file(env);
  return default_controller_map();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << (text.empty() || text.back() == '\n' ? "" : "\n");
  } else {
    write_text(path, text);
  }
}

BlinkClassifier resolve_classifier(const std::string& path) {
  if (!path.empty()) return load_blink_classifier(path);
  return train_on_synthetic(200, 0);
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string features, audio, emotion, timeline, weights, map, out, family = kExternalFamily;
  std::string blink_model, sidecar;
  std::uint64_t seed = 0;
  bool blink = false, gaze = false, no_smooth = false;
};

void run_infer(const InferArgs& a) {
  if (a.features.empty() == a.audio.empty()) {
    throw Error(ErrorCode::InvalidArgument, "give exactly one of --features or --audio");
  }
  if (!a.emotion.empty() && !a.timeline.empty()) {
    throw Error(ErrorCode::InvalidArgument, "--emotion and --timeline are exclusive");
  }
  const ControllerMap map = resolve_map(a.map);
  const Audio2RigModel model = load_model(a.weights);
  if (model.config.output_dim != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weights emit " + std::to_string(model.config.output_dim) +
                                              " channels but the controller map has " +
                                              std::to_string(map.size()));
  }

  FeatureSequence features;
  if (!a.audio.empty()) {
    const AudioClip clip = read_wav(a.audio);
    features = extract_fallback_features(clip, FallbackConfig::for_sample_rate(clip.sample_rate));
  } else {
    features = read_features(a.features);
    features.family = a.family;
  }
  if (features.family != model.config.feature_family) {
    throw Error(ErrorCode::FeatureFamilyMismatch, "input features are '" + features.family +
                                                      "' but the weights expect '" +
                                                      model.config.feature_family + "'");
  }

  const Eigen::Index frames = output_frames(features);
  const EmotionTimeline timeline =
      a.timeline.empty()
          ? EmotionTimeline(static_cast<std::size_t>(frames),
                            parse_emotion(a.emotion.empty() ? "neutral" : a.emotion))
          : read_emotion_timeline(a.timeline, frames);

  InferenceConfig icfg;
  icfg.deterministic_seed = a.seed;
  RigSequence seq = infer(model, features, timeline, icfg);
  if (!a.no_smooth) seq = smooth_sequence(seq);
  seq = clamp_sequence(seq, map);
  if (a.blink) {
    const BlinkFrequencyModel bm = a.blink_model.empty() ? BlinkFrequencyModel{} : load_blink_model(a.blink_model);
    const auto starts = sample_blink_times(bm, static_cast<double>(seq.frames()) / seq.fps, seq.fps,
                                           blink_seed(a.seed));
    seq = inject_blinks(seq, starts, map);
  }
  if (a.gaze) {
    const GazeTrack track = sample_gaze_track(GazeConfig{}, static_cast<int>(seq.frames()), gaze_seed(a.seed));
    seq = inject_gaze(seq, track, map);
  }
  write_rig_csv(a.out, seq, map);

  json side{{"fps", seq.fps},
            {"frames", seq.frames()},
            {"seed", a.seed},
            {"weights_hash", file_hash(a.weights)},
            {"feature_family", features.family},
            {"reference_features", features.family == kExternalFamily &&
                                       features.width() == kReferenceFeatureDim},
            {"smoothed", !a.no_smooth},
            {"blink", a.blink},
            {"gaze", a.gaze}};
  write_text(a.sidecar.empty() ? a.out + ".json" : a.sidecar, side.dump(2));
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest, config, out, loss_csv, map;
  std::optional<int> epochs;
};

void run_train(const TrainArgs& a) {
  const ControllerMap map = resolve_map(a.map);
  TrainingSetup setup = load_training_setup(a.config);
  if (a.epochs) setup.train.epochs = *a.epochs;
  const Dataset data = load_manifest(a.manifest, map);
  Audio2RigModel model = init_model(setup.model, setup.init_seed);
  const TrainResult result = train(model, data, setup.train, [](const EpochStats& e) {
    if (e.epoch % 100 == 0) std::fprintf(stderr, "epoch %d lr %.3g loss %.6g\n", e.epoch, e.lr, e.loss);
  });
  save_model(a.out, model);
  write_loss_csv(a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv, result);
  const double final_loss = evaluate(model, data);
  json summary{{"epochs_run", result.curve.size()},
               {"final_epoch_loss", result.curve.empty() ? final_loss : result.curve.back().loss},
               {"final_loss", final_loss}};
  std::cout << summary.dump() << '\n';
}

// ---------------------------------------------------------------- analyze

void run_analyze(const std::string& pred, const std::string& gt, const std::string& map_path,
                 const std::string& mae_out, const std::string& corr_out) {
  if (gt.empty() && corr_out.empty()) {
    throw Error(ErrorCode::InvalidArgument, "nothing to do: give --gt and/or --correlation");
  }
  const ControllerMap map = resolve_map(map_path);
  const RigSequence p = read_rig_csv(pred, map);
  if (!gt.empty()) emit(mae_out, mae_report_to_json(mae_report(p, read_rig_csv(gt, map), map)));
  if (!corr_out.empty()) write_correlation_csv(corr_out, lr_correlation(p, map));
}

// ---------------------------------------------------------------- blink

std::vector<double> read_rates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<double> rates;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    if (end == line.c_str()) {
      if (rates.empty()) continue;  // header
      throw Error(ErrorCode::Parse, path.string() + ": '" + line + "' is not a number");
    }
    rates.push_back(v);
  }
  return rates;
}

std::string events_csv(const std::vector<BlinkEvent>& events) {
  std::string out = "start_frame,end_frame\n";
  for (const auto& e : events) out += std::to_string(e.start_frame) + "," + std::to_string(e.end_frame) + "\n";
  return out;
}

void run_blink_detect(const std::string& ear, const std::string& classifier, std::optional<double> threshold,
                      int min_run, const std::string& out) {
  const EarTrace trace = read_ear_csv(ear);
  const auto events = threshold ? detect_blinks_threshold(trace.ear, *threshold, min_run)
                                 : detect_blinks(trace.ear, resolve_classifier(classifier), min_run);
  emit(out, events_csv(events));
}

void run_blink_fit(const std::vector<std::string>& ears, const std::string& rates_file,
                   const std::string& classifier, double max_rate, const std::string& out) {
  if (ears.empty() == rates_file.empty()) {
    throw Error(ErrorCode::InvalidArgument, "give either --ear traces or --rates");
  }
  std::vector<double> rates;
  if (!rates_file.empty()) {
    rates = read_rates(rates_file);
  } else {
    const BlinkClassifier clf = resolve_classifier(classifier);
    for (const auto& path : ears) {
      const auto r = rates_from_events(detect_blinks(read_ear_csv(path).ear, clf));
      rates.insert(rates.end(), r.begin(), r.end());
    }
  }
  emit(out, blink_model_to_json(fit_lognormal(rates, max_rate)));
}

void run_blink_train(const std::vector<std::string>& ears, int synthetic, std::uint64_t seed,
                     const SvmOptions& opts, const std::string& out) {
  BlinkClassifier clf;
  if (ears.empty()) {
    clf = train_on_synthetic(synthetic, seed, opts);
  } else {
    std::vector<EarWindow> windows;
    std::vector<int> labels;
    for (const auto& path : ears) {
      const EarTrace t = read_ear_csv(path);
      if (t.labels.empty()) throw Error(ErrorCode::InvalidArgument, path + " has no label column");
      const auto w = ear_windows(t.ear);
      windows.insert(windows.end(), w.begin(), w.end());
      labels.insert(labels.end(), t.labels.begin(), t.labels.end());
    }
    clf = train_blink_classifier(windows, labels, opts);
  }
  emit(out, blink_classifier_to_json(clf));
}

// ---------------------------------------------------------------- misc

ModelConfig config_from_file(const std::string& path) {
  const json doc = json::parse(read_text(path), nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::Parse, path + " is not valid JSON");
  if (doc.contains("model")) return load_training_setup(path).model;
  return model_config_from_json(doc.dump());
}

int run_gradcheck(const std::string& config, int frames, std::uint64_t seed, double tol,
                  const std::string& out) {
  ModelConfig cfg;
  if (config.empty()) {
    cfg.feature_dim = 8;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.layers = 1;
    cfg.dropout = 0.0;
  } else {
    cfg = config_from_file(config);
  }
  const Audio2RigModel model = init_model(cfg, seed);
  const GradCheckReport rep = grad_check(model, make_probe(model, frames, seed + 1));
  json tensors = json::array();
  for (const auto& t : rep.tensors) tensors.push_back({{"name", t.name}, {"relative_error", t.relative_error}});
  json doc{{"max_relative_error", rep.max_relative_error},
           {"worst_tensor", rep.worst_tensor},
           {"tolerance", tol},
           {"tensors", std::move(tensors)}};
  emit(out, doc.dump(2));
  return rep.max_relative_error < tol ? 0 : 4;
}

void write_error_json(const std::string& path, const std::string& code, const std::string& message,
                      int status) {
  if (path.empty()) return;
  std::ofstream out(path);
  out << json{{"error", code}, {"message", message}, {"exit_code", status}}.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech-driven facial rig animation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --error-json follow the subcommand
  std::string error_json;
  app.add_option("--error-json", error_json, "Write failures as JSON to this path");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Features or audio to a rig CSV at 60 fps");
  infer_cmd->add_option("--features", ia.features, "EMOF or CSV feature file");
  infer_cmd->add_option("--audio", ia.audio, "WAV file, run through the MFCC fallback extractor");
  infer_cmd->add_option("--feature-family", ia.family, "Family of --features input")->capture_default_str();
  infer_cmd->add_option("--emotion", ia.emotion, "Single emotion label for the whole clip (default neutral)");
  infer_cmd->add_option("--timeline", ia.timeline, "Keyed frame,label CSV with step-hold semantics");
  infer_cmd->add_option("--weights", ia.weights, "EMOW weight file")->required();
  infer_cmd->add_option("--map", ia.map, "Controller map JSON (default: $RIGSYNTH_MAP, then built-in)");
  infer_cmd->add_option("--seed", ia.seed, "Seed for blink and gaze injection")->capture_default_str();
  infer_cmd->add_flag("--blink", ia.blink, "Inject sampled blinks");
  infer_cmd->add_option("--blink-model", ia.blink_model, "Blink frequency model JSON");
  infer_cmd->add_flag("--gaze", ia.gaze, "Inject a sampled gaze track");
  infer_cmd->add_flag("--no-smooth", ia.no_smooth, "Skip Savitzky-Golay smoothing");
  infer_cmd->add_option("--out", ia.out, "Output rig CSV")->required();
  infer_cmd->add_option("--sidecar", ia.sidecar, "Metadata JSON path (default <out>.json)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train weights from a manifest and config");
  train_cmd->add_option("--manifest", ta.manifest, "Training manifest JSON")->required();
  train_cmd->add_option("--config", ta.config, "Training config JSON")->required();
  train_cmd->add_option("--out", ta.out, "Output weight file")->required();
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Loss curve CSV (default <out>.loss.csv)");
  train_cmd->add_option("--map", ta.map, "Controller map JSON");
  train_cmd->add_option("--epochs", ta.epochs, "Override the configured epoch count");

  std::string an_pred, an_gt, an_map, an_mae, an_corr;
  auto* analyze_cmd = app.add_subcommand("analyze", "MAE report and left/right correlation");
  analyze_cmd->add_option("--pred", an_pred, "Rig CSV to analyze")->required();
  analyze_cmd->add_option("--gt", an_gt, "Ground-truth rig CSV for the MAE report");
  analyze_cmd->add_option("--map", an_map, "Controller map JSON");
  analyze_cmd->add_option("--mae-json", an_mae, "MAE report path (default stdout)");
  analyze_cmd->add_option("--correlation", an_corr, "Left/right correlation CSV path");

  std::vector<std::string> bf_ears;
  std::string bf_rates, bf_clf, bf_out;
  double bf_max = kBlinkMaxRate;
  auto* fit_cmd = app.add_subcommand("blink-fit", "Fit the log-normal blink-rate model");
  fit_cmd->add_option("--ear", bf_ears, "EAR trace CSVs");
  fit_cmd->add_option("--rates", bf_rates, "Blinks-per-minute samples, one per line");
  fit_cmd->add_option("--classifier", bf_clf, "Blink classifier JSON");
  fit_cmd->add_option("--max-rate", bf_max, "Drop rates above this")->capture_default_str();
  fit_cmd->add_option("--out", bf_out, "Model JSON path (default stdout)");

  std::string bd_ear, bd_clf, bd_out;
  std::optional<double> bd_threshold;
  int bd_min_run = kBlinkMinRun;
  auto* detect_cmd = app.add_subcommand("blink-detect", "Detect blink events in an EAR trace");
  detect_cmd->add_option("--ear", bd_ear, "EAR trace CSV")->required();
  detect_cmd->add_option("--classifier", bd_clf, "Blink classifier JSON");
  detect_cmd->add_option("--threshold", bd_threshold, "Use a plain EAR threshold instead of the classifier");
  detect_cmd->add_option("--min-run", bd_min_run, "Shortest event in frames")->capture_default_str();
  detect_cmd->add_option("--out", bd_out, "Events CSV path (default stdout)");

  std::vector<std::string> bt_ears;
  int bt_synth = 200;
  std::uint64_t bt_seed = 0;
  SvmOptions bt_opts;
  std::string bt_out;
  auto* btrain_cmd = app.add_subcommand("blink-train", "Train the blink window classifier");
  btrain_cmd->add_option("--ear", bt_ears, "Labelled EAR trace CSVs (default: synthetic traces)");
  btrain_cmd->add_option("--synthetic", bt_synth, "Synthetic trace count")->capture_default_str();
  btrain_cmd->add_option("--seed", bt_seed, "Synthetic trace and solver seed")->capture_default_str();
  btrain_cmd->add_option("--lambda", bt_opts.lambda, "Regularization strength")->capture_default_str();
  btrain_cmd->add_option("--out", bt_out, "Classifier JSON path (default stdout)");

  std::string gc_config, gc_out;
  int gc_frames = 6;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  grad_cmd->add_option("--config", gc_config, "Model config JSON (default: 1 layer, d_model 16, 2 heads)");
  grad_cmd->add_option("--frames", gc_frames, "Probe length")->capture_default_str();
  grad_cmd->add_option("--seed", gc_seed, "Init and probe seed")->capture_default_str();
  grad_cmd->add_option("--tol", gc_tol, "Exit 4 when the max relative error reaches this")->capture_default_str();
  grad_cmd->add_option("--out", gc_out, "Report path (default stdout)");

  std::string sy_out;
  std::uint64_t sy_seed = 0;
  int sy_n = 32, sy_tmin = 40, sy_tmax = 80, sy_dim = 32;
  std::string sy_map;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic training set to a directory");
  synth_cmd->add_option("--out", sy_out, "Output directory")->required();
  synth_cmd->add_option("--seed", sy_seed)->capture_default_str();
  synth_cmd->add_option("--items", sy_n)->capture_default_str();
  synth_cmd->add_option("--t-min", sy_tmin)->capture_default_str();
  synth_cmd->add_option("--t-max", sy_tmax)->capture_default_str();
  synth_cmd->add_option("--feature-dim", sy_dim)->capture_default_str();
  synth_cmd->add_option("--map", sy_map, "Controller map JSON");

  std::string iw_config, iw_out;
  std::optional<std::uint64_t> iw_seed;
  auto* init_cmd = app.add_subcommand("init-weights", "Write freshly initialized weights");
  init_cmd->add_option("--config", iw_config, "Model or training config JSON")->required();
  init_cmd->add_option("--seed", iw_seed, "Init seed (default: the config's init_seed or 0)");
  init_cmd->add_option("--out", iw_out, "Output weight file")->required();

  std::string em_map, em_out;
  auto* export_cmd = app.add_subcommand("export-map", "Write the active controller map as JSON");
  export_cmd->add_option("--map", em_map, "Controller map JSON");
  export_cmd->add_option("--out", em_out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    if (status != 0) {
      write_error_json(error_json, "Usage", e.what(), 2);
      return 2;
    }
    return 0;
  }

  try {
    if (*infer_cmd) run_infer(ia);
    if (*train_cmd) run_train(ta);
    if (*analyze_cmd) run_analyze(an_pred, an_gt, an_map, an_mae, an_corr);
    if (*fit_cmd) run_blink_fit(bf_ears, bf_rates, bf_clf, bf_max, bf_out);
    if (*detect_cmd) run_blink_detect(bd_ear, bd_clf, bd_threshold, bd_min_run, bd_out);
    if (*btrain_cmd) run_blink_train(bt_ears, bt_synth, bt_seed, bt_opts, bt_out);
    if (*grad_cmd) return run_gradcheck(gc_config, gc_frames, gc_seed, gc_tol, gc_out);
    if (*synth_cmd) {
      const SyntheticDataset ds = gen_synthetic(sy_seed, sy_n, sy_tmin, sy_tmax, sy_dim);
      write_dataset(sy_out, ds, resolve_map(sy_map));
    }
    if (*init_cmd) {
      std::uint64_t seed = iw_seed.value_or(0);
      ModelConfig cfg;
      if (json::parse(read_text(iw_config), nullptr, false).contains("model")) {
        const TrainingSetup setup = load_training_setup(iw_config);
        cfg = setup.model;
        if (!iw_seed) seed = setup.init_seed;
      } else {
        cfg = config_from_file(iw_config);
      }
      save_model(iw_out, init_model(cfg, seed));
    }
    if (*export_cmd) emit(em_out, controller_map_to_json(resolve_map(em_map)));
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    write_error_json(error_json, std::string(to_string(e.code())), e.what(), e.exit_code());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    write_error_json(error_json, "Internal", e.what(), 3);
    return 3;
  }
  return 0;
}
