#pragma once

// Audio feature ingestion, the spectral fallback extractor and rate
// conversion onto the 60 fps rig clock.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace rigsynth {

inline constexpr double kFeatureRateHz = 50.0;
inline constexpr int kReferenceFeatureDim = 768;

// Family tags recorded in weight files so a model never silently consumes
// features from a different extractor.
inline constexpr const char* kExternalFamily = "external";
inline constexpr const char* kFallbackFamily = "mfcc-fallback";
inline constexpr const char* kSyntheticFamily = "synthetic";

struct FeatureSequence {
  Eigen::MatrixXd data;  // T x F, row per frame
  double rate_hz = kFeatureRateHz;
  std::string family = kExternalFamily;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index width() const { return data.cols(); }
};

struct AudioClip {
  std::vector<double> samples;  // mono, [-1, 1]
  double sample_rate = 16000.0;
};

// Throws unless T >= 1, rate > 0 and every value is finite.
void validate(const FeatureSequence& seq);

// Binary feature file: "EMOF", u32 version (1), u32 rows, u32 cols,
// f32 rate_hz, then rows*cols little-endian f32 in row-major order.
FeatureSequence read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq);

// Headerless CSV, one frame per line.
FeatureSequence read_feature_csv(const std::filesystem::path& path, double rate_hz);

// Dispatches on the EMOF magic; anything else is parsed as CSV at `csv_rate_hz`.
FeatureSequence read_features(const std::filesystem::path& path, double csv_rate_hz = kFeatureRateHz);

// RIFF/WAVE with 16-bit PCM or 32-bit float samples; channels are averaged.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

struct FallbackConfig {
  int frame_hop = 320;  // samples; sample_rate / 50 keeps the 50 Hz contract
  int window = 400;     // analysis window in samples
  int n_mels = 40;
  int n_coeffs = 13;
  double f_min = 20.0;
  double f_max = 0.0;   // 0 selects Nyquist
  double log_floor = 1e-10;

  // 25 ms window, 20 ms hop at the given sample rate.
  static FallbackConfig for_sample_rate(double sample_rate);
};

// MFCC-style features: Hann window, power spectrum, mel filterbank, natural
// log with floor, orthonormal DCT-II. Yields floor(samples / hop) frames at
// sample_rate / hop Hz; frames running past the clip end are zero padded.
FeatureSequence extract_fallback_features(const AudioClip& clip, const FallbackConfig& cfg);

// Endpoint-aligned per-column linear interpolation. The output has
// round(T * dst / src) frames and frame t samples the input at
// t * (T - 1) / (N_out - 1).
FeatureSequence resample_features(const FeatureSequence& seq, double dst_rate);

}  // namespace rigsynth
