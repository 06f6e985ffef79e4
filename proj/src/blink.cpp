#include "rigsynth/blink.hpp"

#include "rigsynth/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace rigsynth {

using nlohmann::json;

namespace {

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

double ear(const EyeLandmarks& lm) {
  const auto& p = lm.p;
  const double horizontal = dist(p[0], p[3]);
  if (!(horizontal > 0.0)) {
    throw Error(ErrorCode::DegenerateData, "eye landmarks have zero horizontal extent");
  }
  return (dist(p[1], p[5]) + dist(p[2], p[4])) / (2.0 * horizontal);
}

std::vector<EarWindow> ear_windows(std::span<const double> trace) {
  const auto n = static_cast<std::ptrdiff_t>(trace.size());
  constexpr int half = kBlinkWindow / 2;
  std::vector<EarWindow> out(trace.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    for (int k = -half; k <= half; ++k) {
      const auto i = std::clamp<std::ptrdiff_t>(t + k, 0, n - 1);
      out[t][k + half] = trace[i];
    }
  }
  return out;
}

double BlinkClassifier::decision(const EarWindow& w) const {
  double s = bias;
  for (int i = 0; i < kBlinkWindow; ++i) s += weights[i] * w[i];
  return s;
}

BlinkClassifier train_blink_classifier(const std::vector<EarWindow>& windows,
                                       const std::vector<int>& labels, const SvmOptions& opts) {
  const std::size_t n = windows.size();
  if (n == 0 || labels.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "classifier needs one label per window");
  }
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(n)) {
    throw Error(ErrorCode::DegenerateData, "classifier training data has a single class");
  }
  if (!(opts.lambda > 0.0) || opts.max_iter < 1) {
    throw Error(ErrorCode::InvalidArgument, "invalid SVM options");
  }

  EarWindow mean{}, scale{};
  for (const auto& w : windows) {
    for (int j = 0; j < kBlinkWindow; ++j) mean[j] += w[j];
  }
  for (int j = 0; j < kBlinkWindow; ++j) mean[j] /= static_cast<double>(n);
  bool any_spread = false;
  for (const auto& w : windows) {
    for (int j = 0; j < kBlinkWindow; ++j) scale[j] += (w[j] - mean[j]) * (w[j] - mean[j]);
  }
  for (int j = 0; j < kBlinkWindow; ++j) {
    scale[j] = std::sqrt(scale[j] / static_cast<double>(n));
    if (scale[j] > 0.0) {
      any_spread = true;
    } else {
      scale[j] = 1.0;
    }
  }
  if (!any_spread) {
    throw Error(ErrorCode::DegenerateData, "all training windows are identical but labels differ");
  }

  // Standardized windows with a constant 1 appended for the bias.
  constexpr int dim = kBlinkWindow + 1;
  using Vec = std::array<double, dim>;
  std::vector<Vec> z(n);
  std::vector<double> y(n), diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < kBlinkWindow; ++j) z[i][j] = (windows[i][j] - mean[j]) / scale[j];
    z[i][kBlinkWindow] = 1.0;
    y[i] = labels[i] != 0 ? 1.0 : -1.0;
    diag[i] = 0.0;
    for (double v : z[i]) diag[i] += v * v;
  }
  auto dot = [](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (int j = 0; j < dim; ++j) s += a[j] * b[j];
    return s;
  };

  // Dual of 1/2 |w|^2 + C sum hinge, which matches the lambda form with
  // C = 1 / (lambda n).
  const double c_box = 1.0 / (opts.lambda * static_cast<double>(n));
  std::vector<double> alpha(n, 0.0);
  Vec w{};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  int iter = 0;
  while (iter < opts.max_iter) {
    ++iter;
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      const double g = y[i] * dot(w, z[i]) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] >= c_box) {
        pg = std::max(g, 0.0);
      }
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0.0) continue;
      const double next = std::clamp(alpha[i] - g / diag[i], 0.0, c_box);
      const double delta = (next - alpha[i]) * y[i];
      alpha[i] = next;
      for (int j = 0; j < dim; ++j) w[j] += delta * z[i][j];
    }
    if (pg_max - pg_min < opts.tol) break;
  }

  double hinge = 0.0;
  for (std::size_t i = 0; i < n; ++i) hinge += std::max(0.0, 1.0 - y[i] * dot(w, z[i]));

  BlinkClassifier clf;
  clf.lambda = opts.lambda;
  clf.iterations = iter;
  clf.objective = 0.5 * opts.lambda * dot(w, w) + hinge / static_cast<double>(n);
  clf.samples = n;
  clf.bias = w[kBlinkWindow];
  for (int j = 0; j < kBlinkWindow; ++j) {
    clf.weights[j] = w[j] / scale[j];
    clf.bias -= w[j] * mean[j] / scale[j];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += clf.is_blink(windows[i]) == (labels[i] != 0);
  clf.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return clf;
}

namespace {

std::vector<BlinkEvent> runs_to_events(const std::vector<bool>& positive, int min_run) {
  std::vector<BlinkEvent> events;
  const int n = static_cast<int>(positive.size());
  int t = 0;
  while (t < n) {
    if (!positive[t]) {
      ++t;
      continue;
    }
    int end = t;
    while (end + 1 < n && positive[end + 1]) ++end;
    if (end - t + 1 >= min_run) events.push_back({t, end, kEarTraceFps});
    t = end + 1;
  }
  return events;
}

}  // namespace

std::vector<BlinkEvent> detect_blinks(std::span<const double> trace, const BlinkClassifier& clf,
                                      int min_run) {
  if (trace.empty()) return {};
  const auto windows = ear_windows(trace);
  std::vector<bool> positive(windows.size());
  for (std::size_t t = 0; t < windows.size(); ++t) positive[t] = clf.is_blink(windows[t]);
  return runs_to_events(positive, min_run);
}

std::vector<BlinkEvent> detect_blinks_threshold(std::span<const double> trace, double threshold,
                                                int min_run) {
  std::vector<bool> positive(trace.size());
  for (std::size_t t = 0; t < trace.size(); ++t) positive[t] = trace[t] < threshold;
  return runs_to_events(positive, min_run);
}

void BlinkFrequencyModel::validate() const {
  if (!std::isfinite(mu_ln) || !(sigma_ln >= 0.0) || !(max_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "blink model needs finite mu, sigma >= 0, max_rate > 0");
  }
}

std::vector<double> rates_from_events(const std::vector<BlinkEvent>& events) {
  std::vector<double> rates;
  for (std::size_t i = 1; i < events.size(); ++i) {
    const double seconds = (events[i].start_frame - events[i - 1].start_frame) / events[i].fps;
    if (seconds > 0.0) rates.push_back(60.0 / seconds);
  }
  return rates;
}

BlinkFrequencyModel fit_lognormal(std::span<const double> rates_per_minute, double max_rate) {
  std::vector<double> logs;
  for (double r : rates_per_minute) {
    if (r > 0.0 && r <= max_rate) logs.push_back(std::log(r));
  }
  if (logs.size() < 2) {
    throw Error(ErrorCode::InsufficientSamples,
                "log-normal fit needs at least two rates at or below " + std::to_string(max_rate));
  }
  double mean = 0.0;
  for (double v : logs) mean += v;
  mean /= static_cast<double>(logs.size());
  double var = 0.0;
  for (double v : logs) var += (v - mean) * (v - mean);
  var /= static_cast<double>(logs.size());
  return {mean, std::sqrt(var), max_rate};
}

BlinkRateSampler::BlinkRateSampler(const BlinkFrequencyModel& model, std::uint64_t seed)
    : model_(model), rng_(seed), normal_(model.mu_ln, model.sigma_ln) {
  model_.validate();
}

double BlinkRateSampler::draw_raw() { return std::exp(normal_(rng_)); }

double BlinkRateSampler::draw() {
  for (int attempt = 0; attempt < 1'000'000; ++attempt) {
    const double r = draw_raw();
    if (r <= model_.max_rate) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "blink model puts almost no mass below max_rate");
}

std::vector<int> sample_blink_times(const BlinkFrequencyModel& model, double duration_s, double fps,
                                    std::uint64_t seed) {
  if (!(duration_s > 0.0) || !(fps > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "blink sampling needs positive duration and fps");
  }
  BlinkRateSampler sampler(model, seed);
  std::vector<int> starts;
  double t = 0.0;
  while (true) {
    t += 60.0 / sampler.draw();
    if (t >= duration_s) break;
    starts.push_back(static_cast<int>(std::floor(t * fps)));
  }
  return starts;
}

double blink_profile(int k) {
  if (k < 0 || k >= kBlinkProfileFrames) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / (kBlinkProfileFrames - 1)));
}

RigSequence inject_blinks(const RigSequence& seq, std::span<const int> starts, const ControllerMap& map) {
  const auto lids = map.with_role(EyeRole::LidClosure);
  if (lids.empty()) throw Error(ErrorCode::MissingEyeRole, "controller map has no lid_closure channels");
  if (seq.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rig sequence width does not match controller map");
  }
  const Eigen::Index n = seq.frames();
  std::vector<double> closure(static_cast<std::size_t>(n), 0.0);
  for (int s : starts) {
    for (int k = 0; k < kBlinkProfileFrames; ++k) {
      const Eigen::Index t = s + k;
      if (t < 0 || t >= n) continue;
      closure[t] = std::max(closure[t], blink_profile(k));
    }
  }
  RigSequence out = seq;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double c = closure[t];
    if (c <= 0.0) continue;
    for (int ch : lids) {
      if (c >= 1.0) {
        out.values(t, ch) = map.at(ch).max;
      } else {
        out.values(t, ch) = out.values(t, ch) * (1.0 - c) + map.at(ch).max * c;
      }
    }
  }
  return out;
}

SyntheticEarTrace synth_ear_trace(const EarTraceConfig& cfg, std::uint64_t seed) {
  if (cfg.frames < 2 * kBlinkWindow) throw Error(ErrorCode::InvalidArgument, "synthetic trace too short");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::normal_distribution<double> noise(0.0, cfg.noise);

  const int n = cfg.frames;
  const double base = uniform(0.26, 0.34);
  SyntheticEarTrace tr;
  tr.ear.assign(n, base);
  tr.labels.assign(n, 0);
  std::vector<bool> used(n, false);

  // Reserve [lo, hi] plus a guard band; false when it collides.
  auto reserve = [&](int lo, int hi, int guard) {
    if (lo - guard < 1 || hi + guard >= n - 1) return false;
    for (int t = lo - guard; t <= hi + guard; ++t) {
      if (used[t]) return false;
    }
    for (int t = lo; t <= hi; ++t) used[t] = true;
    return true;
  };

  for (int i = 0; i < cfg.squints; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int len = integer(10, 30);
      const int lo = integer(1, n - len - 1);
      if (!reserve(lo, lo + len - 1, 4)) continue;
      const double depth = uniform(0.05, 0.08);
      for (int k = 0; k < len; ++k) {
        const double ramp = std::min({1.0, (k + 1) / 4.0, (len - k) / 4.0});
        tr.ear[lo + k] -= depth * ramp;
      }
      break;
    }
  }
  for (int i = 0; i < cfg.blinks; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int len = integer(3, 9);
      const int lo = integer(1, n - len - 1);
      if (!reserve(lo, lo + len - 1, 4)) continue;
      const double floor = uniform(0.02, 0.08);
      int first = -1, last = -1;
      for (int k = 0; k < len; ++k) {
        const double c = std::sin(std::numbers::pi * (k + 1) / (len + 1));
        tr.ear[lo + k] = base - (base - floor) * c;
        if (c >= 0.5) {
          tr.labels[lo + k] = 1;
          if (first < 0) first = lo + k;
          last = lo + k;
        }
      }
      tr.events.push_back({first, last, kEarTraceFps});
      break;
    }
  }
  for (int i = 0; i < cfg.single_frame_drops; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int t = integer(1, n - 2);
      if (!reserve(t, t, 3)) continue;
      tr.ear[t] = uniform(0.12, 0.19);
      break;
    }
  }
  for (double& v : tr.ear) v = std::max(0.0, v + noise(rng));
  std::sort(tr.events.begin(), tr.events.end(),
            [](const BlinkEvent& a, const BlinkEvent& b) { return a.start_frame < b.start_frame; });
  return tr;
}

BlinkClassifier train_on_synthetic(int n_traces, std::uint64_t seed, const SvmOptions& opts) {
  std::mt19937_64 seeds(seed);
  std::vector<EarWindow> windows;
  std::vector<int> labels;
  for (int i = 0; i < n_traces; ++i) {
    const auto tr = synth_ear_trace({}, seeds());
    const auto w = ear_windows(tr.ear);
    windows.insert(windows.end(), w.begin(), w.end());
    labels.insert(labels.end(), tr.labels.begin(), tr.labels.end());
  }
  return train_blink_classifier(windows, labels, opts);
}

EarTrace read_ear_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open EAR trace " + path.string());
  EarTrace tr;
  std::string line;
  bool has_labels = false;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      first = false;
      if (!cells.empty() && !cells[0].empty() && !std::isdigit(static_cast<unsigned char>(cells[0][0]))) {
        has_labels = cells.size() >= 3;
        continue;
      }
      has_labels = cells.size() >= 3;
    }
    if (cells.size() < 2) throw Error(ErrorCode::Parse, path.string() + ": expected frame,ear");
    char* end = nullptr;
    const double v = std::strtod(cells[1].c_str(), &end);
    if (end == cells[1].c_str() || !std::isfinite(v)) {
      throw Error(ErrorCode::Parse, path.string() + ": bad EAR value '" + cells[1] + "'");
    }
    tr.ear.push_back(v);
    if (has_labels) tr.labels.push_back(cells.size() >= 3 ? std::atoi(cells[2].c_str()) : 0);
  }
  return tr;
}

void write_ear_csv(const std::filesystem::path& path, std::span<const double> ear,
                   std::span<const int> labels) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << (labels.empty() ? "frame,ear\n" : "frame,ear,label\n");
  char buf[64];
  for (std::size_t t = 0; t < ear.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g", t, ear[t]);
    out << buf;
    if (!labels.empty()) out << ',' << labels[t];
    out << '\n';
  }
}

std::string blink_classifier_to_json(const BlinkClassifier& clf) {
  json j{{"weights", clf.weights},
         {"bias", clf.bias},
         {"window", kBlinkWindow},
         {"fps", kEarTraceFps},
         {"metadata",
          {{"lambda", clf.lambda},
           {"iterations", clf.iterations},
           {"objective", clf.objective},
           {"train_accuracy", clf.train_accuracy},
           {"samples", clf.samples}}}};
  return j.dump(2) + "\n";
}

BlinkClassifier blink_classifier_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    BlinkClassifier clf;
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kBlinkWindow) {
      throw Error(ErrorCode::ShapeMismatch, "blink classifier needs 7 weights");
    }
    std::copy(w.begin(), w.end(), clf.weights.begin());
    clf.bias = j.at("bias").get<double>();
    if (j.contains("metadata")) {
      const auto& m = j["metadata"];
      clf.lambda = m.value("lambda", clf.lambda);
      clf.iterations = m.value("iterations", 0);
      clf.objective = m.value("objective", 0.0);
      clf.train_accuracy = m.value("train_accuracy", 0.0);
      clf.samples = m.value("samples", std::size_t{0});
    }
    for (double v : clf.weights) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "blink classifier weight is not finite");
    }
    return clf;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("blink classifier: ") + ex.what());
  }
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

BlinkClassifier load_blink_classifier(const std::filesystem::path& path) {
  return blink_classifier_from_json(slurp(path));
}

std::string blink_model_to_json(const BlinkFrequencyModel& model) {
  return json{{"mu_ln", model.mu_ln}, {"sigma_ln", model.sigma_ln}, {"max_rate", model.max_rate}}.dump(2) +
         "\n";
}

BlinkFrequencyModel load_blink_model(const std::filesystem::path& path) {
  try {
    const json j = json::parse(slurp(path));
    BlinkFrequencyModel m;
    m.mu_ln = j.value("mu_ln", m.mu_ln);
    m.sigma_ln = j.value("sigma_ln", m.sigma_ln);
    m.max_rate = j.value("max_rate", m.max_rate);
    m.validate();
    return m;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
}

}  // namespace rigsynth
