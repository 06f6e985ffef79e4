#include "rigsynth/trainer.hpp"

#include "rigsynth/error.hpp"
#include "rigsynth/features.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace rigsynth {

using nlohmann::json;

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "mse: prediction and target shapes differ");
  }
  if (pred.size() == 0) throw Error(ErrorCode::ShapeMismatch, "mse: empty input");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Eigen::MatrixXd mse_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "mse: prediction and target shapes differ");
  }
  return (pred - target) * (2.0 / static_cast<double>(pred.size()));
}

double steplr(double lr0, int step_size, double gamma, int epoch) {
  return lr0 * std::pow(gamma, epoch / step_size);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (!(lr0 >= 0.0)) fail("lr0 must be non-negative");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (step_size < 1) fail("step_size must be at least 1");
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch < 1) fail("batch must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(target_loss >= 0.0)) fail("target_loss must be non-negative");
}

Adam::Adam(const ModelParams& like, double beta1, double beta2, double eps)
    : m_(zeros_like(like)), v_(zeros_like(like)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ModelParams& params, const ModelParams& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m = tensors(m_);
  auto v = tensors(v_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& gi = *g[i].value;
    auto& mi = *m[i].value;
    auto& vi = *v[i].value;
    mi = beta1_ * mi + (1.0 - beta1_) * gi;
    vi = beta2_ * vi + (1.0 - beta2_) * gi.cwiseProduct(gi);
    const Eigen::ArrayXXd update = (mi.array() / c1) / ((vi.array() / c2).sqrt() + eps_);
    p[i].value->array() -= lr * update;
  }
}

Eigen::MatrixXd SyntheticGroundTruth::apply(const Eigen::MatrixXd& features, Emotion emotion) const {
  Eigen::MatrixXd z = features * projection;
  z.rowwise() += bias + emotion_offsets.row(emotion_id(emotion));
  return amplitude * z.array().tanh();
}

SyntheticDataset gen_synthetic(std::uint64_t seed, int n_items, int t_min, int t_max, int feature_dim) {
  if (n_items < 1) throw Error(ErrorCode::InvalidArgument, "synthetic dataset needs n_items >= 1");
  if (t_min < 1 || t_max < t_min) throw Error(ErrorCode::InvalidArgument, "invalid clip length range");
  if (feature_dim < 1) throw Error(ErrorCode::InvalidArgument, "feature_dim must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticDataset ds;
  ds.seed = seed;
  ds.feature_family = kSyntheticFamily;
  auto& truth = ds.truth;
  truth.projection.resize(feature_dim, kNumControllers);
  const double proj_scale = 0.5 / std::sqrt(static_cast<double>(feature_dim));
  for (Eigen::Index i = 0; i < truth.projection.size(); ++i) {
    truth.projection.data()[i] = proj_scale * normal(rng);
  }
  std::uniform_real_distribution<double> bias(-0.2, 0.2);
  truth.bias.resize(kNumControllers);
  for (Eigen::Index i = 0; i < truth.bias.size(); ++i) truth.bias[i] = bias(rng);
  truth.emotion_offsets.resize(kNumEmotions, kNumControllers);
  for (Eigen::Index i = 0; i < truth.emotion_offsets.size(); ++i) {
    truth.emotion_offsets.data()[i] = 0.3 * normal(rng);
  }

  std::uniform_int_distribution<int> length(t_min, t_max);
  std::uniform_real_distribution<double> freq(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  for (int i = 0; i < n_items; ++i) {
    TrainingItem item;
    const int T = length(rng);
    item.emotion = emotion_from_id(i % kNumEmotions);
    item.features.resize(T, feature_dim);
    for (int f = 0; f < feature_dim; ++f) {
      const double f1 = freq(rng), f2 = freq(rng), p1 = phase(rng), p2 = phase(rng);
      const double a1 = amp(rng), a2 = amp(rng);
      for (int t = 0; t < T; ++t) {
        const double s = t / kRigFps;
        item.features(t, f) = a1 * std::sin(2.0 * std::numbers::pi * f1 * s + p1) +
                              a2 * std::sin(2.0 * std::numbers::pi * f2 * s + p2);
      }
    }
    item.target = truth.apply(item.features, item.emotion);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

namespace {

void check_dataset(const Audio2RigModel& model, const Dataset& data) {
  if (data.items.empty()) throw Error(ErrorCode::InvalidArgument, "training dataset is empty");
  for (const auto& item : data.items) {
    if (item.features.cols() != model.config.feature_dim) {
      throw Error(ErrorCode::ShapeMismatch, "dataset feature width " +
                                                std::to_string(item.features.cols()) +
                                                " does not match model width " +
                                                std::to_string(model.config.feature_dim));
    }
    if (item.target.rows() != item.features.rows() || item.target.cols() != model.config.output_dim) {
      throw Error(ErrorCode::ShapeMismatch, "dataset target shape does not match its features");
    }
  }
  if (data.feature_family != model.config.feature_family) {
    throw Error(ErrorCode::FeatureFamilyMismatch, "dataset features are '" + data.feature_family +
                                                      "' but the model expects '" +
                                                      model.config.feature_family + "'");
  }
}

}  // namespace

TrainResult train(Audio2RigModel& model, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_dataset(model, data);
  std::mt19937_64 rng(cfg.seed);
  const DropoutSampler dropout{model.config.dropout, &rng};
  Adam adam(model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  const std::size_t n = data.items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses(n);
  ModelParams grads = zeros_like(model.params);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = steplr(cfg.lr0, cfg.step_size, cfg.gamma, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch));
      const double weight = 1.0 / static_cast<double>(stop - start);
      for (auto& t : tensors(grads)) t.value->setZero();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& item = data.items[order[b]];
        const EmotionTimeline labels(item.features.rows(), item.emotion);
        const ForwardTrace trace = trace_forward(model, item.features, labels, dropout);
        losses[order[b]] = mse_loss(trace.output, item.target);
        backward(model, trace, mse_grad(trace.output, item.target) * weight, grads);
      }
      adam.step(model.params, grads, lr);
    }
    const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Divergence, "training diverged at epoch " + std::to_string(epoch) +
                                             " (lr " + std::to_string(lr) + "): loss is not finite");
    }
    result.curve.push_back({epoch, lr, loss});
    if (on_epoch) on_epoch(result.curve.back());
    // The epoch loss mixes weights from before and after each step, so the
    // stop decision uses a clean inference-mode pass.
    if (loss < cfg.target_loss && evaluate(model, data) < cfg.target_loss) break;
  }
  return result;
}

double evaluate(const Audio2RigModel& model, const Dataset& data) {
  if (data.items.empty()) throw Error(ErrorCode::InvalidArgument, "evaluation dataset is empty");
  double total = 0.0;
  for (const auto& item : data.items) {
    const EmotionTimeline labels(item.features.rows(), item.emotion);
    total += mse_loss(predict(model, item.features, labels), item.target);
  }
  return total / static_cast<double>(data.items.size());
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
}

Emotion emotion_from_json(const json& j) {
  if (j.is_number_integer()) return emotion_from_id(j.get<int>());
  return parse_emotion(j.get<std::string>());
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path, const ControllerMap& map) {
  const json doc = read_json(path);
  try {
    if (doc.contains("synthetic")) {
      const auto& s = doc["synthetic"];
      SyntheticDataset syn = gen_synthetic(s.value("seed", 0ULL), s.value("n_items", 32),
                                           s.value("t_min", 40), s.value("t_max", 80),
                                           s.value("feature_dim", 32));
      return Dataset{std::move(syn.items), syn.feature_family};
    }
    Dataset ds;
    ds.feature_family = doc.value("feature_family", std::string(kExternalFamily));
    const auto base = path.parent_path();
    for (const auto& entry : doc.at("items")) {
      FeatureSequence fs = read_features(base / entry.at("features").get<std::string>());
      if (fs.rate_hz != kRigFps) fs = resample_features(fs, kRigFps);
      RigSequence target = read_rig_csv(base / entry.at("targets").get<std::string>(), map);
      const Eigen::Index tf = fs.frames();
      const Eigen::Index tt = target.frames();
      if (std::abs(tf - tt) > 1) {
        throw Error(ErrorCode::TimelineMismatch,
                    entry.at("features").get<std::string>() + ": " + std::to_string(tf) +
                        " feature frames vs " + std::to_string(tt) + " target frames");
      }
      const Eigen::Index T = std::min(tf, tt);
      ds.items.push_back({fs.data.topRows(T), emotion_from_json(entry.at("emotion")),
                          target.values.topRows(T)});
    }
    return ds;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data, const ControllerMap& map) {
  std::filesystem::create_directories(dir);
  json items = json::array();
  char name[32];
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const auto& item = data.items[i];
    std::snprintf(name, sizeof name, "clip_%03zu", i);
    FeatureSequence fs;
    fs.data = item.features;
    fs.rate_hz = kRigFps;
    write_feature_file(dir / (std::string(name) + ".emof"), fs);
    write_rig_csv(dir / (std::string(name) + ".csv"), RigSequence(item.target), map);
    items.push_back({{"features", std::string(name) + ".emof"},
                     {"targets", std::string(name) + ".csv"},
                     {"emotion", std::string(emotion_name(item.emotion))}});
  }
  json doc{{"feature_family", data.feature_family}, {"items", std::move(items)}};
  std::ofstream out(dir / "manifest.json");
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "epoch,lr,loss\n";
  char buf[96];
  for (const auto& e : result.curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", e.epoch, e.lr, e.loss);
    out << buf;
  }
}

TrainingSetup load_training_setup(const std::filesystem::path& path) {
  const json doc = read_json(path);
  TrainingSetup setup;
  try {
    if (doc.contains("model")) setup.model = model_config_from_json(doc["model"].dump());
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      auto& c = setup.train;
      c.lr0 = t.value("lr0", c.lr0);
      c.adam_beta1 = t.value("adam_beta1", c.adam_beta1);
      c.adam_beta2 = t.value("adam_beta2", c.adam_beta2);
      c.adam_eps = t.value("adam_eps", c.adam_eps);
      c.step_size = t.value("step_size", c.step_size);
      c.gamma = t.value("gamma", c.gamma);
      c.epochs = t.value("epochs", c.epochs);
      c.target_loss = t.value("target_loss", c.target_loss);
      c.batch = t.value("batch", c.batch);
      c.seed = t.value("seed", c.seed);
    }
    setup.init_seed = doc.value("init_seed", setup.init_seed);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
  setup.model.validate();
  setup.train.validate();
  return setup;
}

}  // namespace rigsynth
