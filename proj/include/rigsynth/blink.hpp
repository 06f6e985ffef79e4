#pragma once

// Blink analytics on eye-aspect-ratio traces and stochastic blink injection.

#include "rigsynth/rig.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rigsynth {

inline constexpr int kBlinkWindow = 7;       // current frame plus three either side
inline constexpr double kEarTraceFps = 30.0;
inline constexpr int kBlinkMinRun = 2;
inline constexpr int kBlinkProfileFrames = 13;
inline constexpr double kBlinkLogMean = 3.518;
inline constexpr double kBlinkLogStd = 0.532;
inline constexpr double kBlinkMaxRate = 100.0;  // blinks per minute

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// p[0]..p[5] are landmarks p1..p6: p1/p4 the eye corners, p2/p3 on the
// upper lid, p6/p5 below them on the lower lid.
struct EyeLandmarks {
  std::array<Point2, 6> p;
};

// (|p2-p6| + |p3-p5|) / (2 |p1-p4|)
double ear(const EyeLandmarks& lm);

using EarWindow = std::array<double, kBlinkWindow>;

// One window per frame, edges padded by repeating the end values.
std::vector<EarWindow> ear_windows(std::span<const double> trace);

struct BlinkClassifier {
  EarWindow weights{};
  double bias = 0.0;
  // Training metadata.
  double lambda = 1e-2;
  int iterations = 0;
  double objective = 0.0;
  double train_accuracy = 0.0;
  std::size_t samples = 0;

  double decision(const EarWindow& w) const;
  bool is_blink(const EarWindow& w) const { return decision(w) > 0.0; }
};

struct SvmOptions {
  double lambda = 1e-2;
  int max_iter = 1000;  // passes over the data
  // Stop once the projected-gradient spread of the dual falls below this.
  double tol = 1e-4;
  std::uint64_t seed = 0;  // visiting order of the coordinate passes
};

// Linear SVM: minimizes lambda/2 (|w|^2 + b^2) + mean hinge(1 - y (w.x + b))
// on standardized windows by dual coordinate descent, then folds the
// standardization back into raw-space weights. Labels are 0/1. Throws
// DegenerateData for single-class input or identical windows with mixed
// labels.
BlinkClassifier train_blink_classifier(const std::vector<EarWindow>& windows,
                                       const std::vector<int>& labels, const SvmOptions& opts = {});

struct BlinkEvent {
  int start_frame = 0;
  int end_frame = 0;  // inclusive
  double fps = kEarTraceFps;

  bool operator==(const BlinkEvent&) const = default;
};

// Per-frame classification, then maximal positive runs of at least
// `min_run` frames.
std::vector<BlinkEvent> detect_blinks(std::span<const double> trace, const BlinkClassifier& clf,
                                      int min_run = kBlinkMinRun);
// Classic detector: runs of frames with EAR below `threshold`.
std::vector<BlinkEvent> detect_blinks_threshold(std::span<const double> trace, double threshold = 0.2,
                                                int min_run = 1);

struct BlinkFrequencyModel {
  double mu_ln = kBlinkLogMean;
  double sigma_ln = kBlinkLogStd;
  double max_rate = kBlinkMaxRate;

  void validate() const;
};

// Blinks per minute implied by consecutive event starts.
std::vector<double> rates_from_events(const std::vector<BlinkEvent>& events);

// Drops samples above 100 blinks/min (and non-positive ones), then takes the
// mean and population standard deviation of ln(x).
BlinkFrequencyModel fit_lognormal(std::span<const double> rates_per_minute,
                                  double max_rate = kBlinkMaxRate);

class BlinkRateSampler {
 public:
  BlinkRateSampler(const BlinkFrequencyModel& model, std::uint64_t seed);

  // exp(N(mu, sigma)), untruncated.
  double draw_raw();
  // Redraws until the rate is at most max_rate.
  double draw();

 private:
  BlinkFrequencyModel model_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

// Blink start frames: repeatedly draw a rate r and advance 60 / r seconds
// until the duration is exceeded.
std::vector<int> sample_blink_times(const BlinkFrequencyModel& model, double duration_s,
                                    double fps, std::uint64_t seed);

// Raised-cosine closure 0.5 (1 - cos(2 pi k / 12)), k = 0..12.
double blink_profile(int k);

// Blends lid_closure channels toward their closed (max) value over the 13
// frames starting at each blink start. Overlapping blinks take the larger
// closure; windows running off the end are truncated.
RigSequence inject_blinks(const RigSequence& seq, std::span<const int> starts, const ControllerMap& map);

// Synthetic EAR traces with known events, for classifier training and checks.
struct EarTraceConfig {
  int frames = 300;
  double noise = 0.006;
  int blinks = 3;
  int single_frame_drops = 2;
  int squints = 1;
};

struct SyntheticEarTrace {
  std::vector<double> ear;
  std::vector<int> labels;
  std::vector<BlinkEvent> events;
};

SyntheticEarTrace synth_ear_trace(const EarTraceConfig& cfg, std::uint64_t seed);

// Classifier trained on `n_traces` synthetic traces from `seed`.
BlinkClassifier train_on_synthetic(int n_traces, std::uint64_t seed, const SvmOptions& opts = {});

// EAR trace CSV "frame,ear[,label]" with a header row.
struct EarTrace {
  std::vector<double> ear;
  std::vector<int> labels;  // empty when the file has no label column
};
EarTrace read_ear_csv(const std::filesystem::path& path);
void write_ear_csv(const std::filesystem::path& path, std::span<const double> ear,
                   std::span<const int> labels = {});

std::string blink_classifier_to_json(const BlinkClassifier& clf);
BlinkClassifier blink_classifier_from_json(std::string_view text);
BlinkClassifier load_blink_classifier(const std::filesystem::path& path);

std::string blink_model_to_json(const BlinkFrequencyModel& model);
BlinkFrequencyModel load_blink_model(const std::filesystem::path& path);

}  // namespace rigsynth
