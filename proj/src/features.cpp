#include "rigsynth/features.hpp"

#include "binio.hpp"
#include "rigsynth/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

namespace rigsynth {

namespace {

constexpr char kFeatureMagic[4] = {'E', 'M', 'O', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

void validate(const FeatureSequence& seq) {
  if (seq.frames() < 1 || seq.width() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "feature sequence is empty");
  }
  if (!(seq.rate_hz > 0.0) || !std::isfinite(seq.rate_hz)) {
    throw Error(ErrorCode::InvalidArgument, "feature rate must be positive");
  }
  if (!seq.data.allFinite()) {
    throw Error(ErrorCode::NonFinite, "feature sequence contains non-finite values");
  }
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open feature file " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kFeatureMagic)) {
    throw Error(ErrorCode::BadMagic, path.string() + " is not an EMOF feature file");
  }
  std::uint32_t version = 0, rows = 0, cols = 0;
  float rate = 0.0f;
  if (!binio::get(in, version) || !binio::get(in, rows) || !binio::get(in, cols) ||
      !binio::get(in, rate)) {
    throw Error(ErrorCode::Truncated, path.string() + ": truncated header");
  }
  if (version != kFeatureVersion) {
    throw Error(ErrorCode::BadMagic,
                path.string() + ": unsupported feature file version " + std::to_string(version));
  }
  FeatureSequence seq;
  seq.rate_hz = rate;
  seq.data.resize(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      float v;
      if (!binio::get(in, v)) {
        throw Error(ErrorCode::Truncated, path.string() + ": payload shorter than " +
                                              std::to_string(rows) + "x" + std::to_string(cols));
      }
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFinite, path.string() + ": non-finite value at row " +
                                              std::to_string(r) + ", column " + std::to_string(c));
      }
      seq.data(r, c) = v;
    }
  }
  validate(seq);
  return seq;
}

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  binio::put(out, kFeatureVersion);
  binio::put(out, static_cast<std::uint32_t>(seq.frames()));
  binio::put(out, static_cast<std::uint32_t>(seq.width()));
  binio::put(out, static_cast<float>(seq.rate_hz));
  for (Eigen::Index r = 0; r < seq.frames(); ++r) {
    for (Eigen::Index c = 0; c < seq.width(); ++c) {
      binio::put(out, static_cast<float>(seq.data(r, c)));
    }
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

FeatureSequence read_feature_csv(const std::filesystem::path& path, double rate_hz) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open feature csv " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        throw Error(ErrorCode::Parse, path.string() + ": bad number '" + cell + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": ragged feature rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::ShapeMismatch, path.string() + ": no feature rows");
  FeatureSequence seq;
  seq.rate_hz = rate_hz;
  seq.data.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      seq.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  validate(seq);
  return seq;
}

FeatureSequence read_features(const std::filesystem::path& path, double csv_rate_hz) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::equal(magic, magic + 4, kFeatureMagic)) {
    return read_feature_file(path);
  }
  return read_feature_csv(path, csv_rate_hz);
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char tag[4];
  std::uint32_t size = 0;
  if (!in.read(tag, 4) || std::string(tag, 4) != "RIFF" || !binio::get(in, size) ||
      !in.read(tag, 4) || std::string(tag, 4) != "WAVE") {
    throw Error(ErrorCode::BadMagic, path.string() + " is not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (in.read(tag, 4) && binio::get(in, size)) {
    const std::string id(tag, 4);
    if (id == "fmt ") {
      std::uint32_t byte_rate;
      std::uint16_t align;
      binio::get(in, format);
      binio::get(in, channels);
      binio::get(in, rate);
      binio::get(in, byte_rate);
      binio::get(in, align);
      binio::get(in, bits);
      in.seekg(static_cast<std::streamoff>(size) - 16, std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt || channels == 0) {
        throw Error(ErrorCode::Parse, path.string() + ": data chunk before fmt chunk");
      }
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw Error(ErrorCode::Parse, path.string() + ": only 16-bit PCM and 32-bit float WAV");
      }
      const std::uint32_t frame_bytes = channels * (bits / 8);
      const std::uint32_t n = size / frame_bytes;
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::uint16_t ch = 0; ch < channels; ++ch) {
          if (pcm16) {
            std::int16_t s;
            if (!binio::get(in, s)) throw Error(ErrorCode::Truncated, path.string() + ": short data");
            acc += s / 32768.0;
          } else {
            float s;
            if (!binio::get(in, s)) throw Error(ErrorCode::Truncated, path.string() + ": short data");
            acc += s;
          }
        }
        clip.samples[i] = acc / channels;
      }
      if (clip.samples.empty()) throw Error(ErrorCode::ShapeMismatch, path.string() + ": no samples");
      return clip;
    } else {
      in.seekg(size + (size & 1u), std::ios::cur);
    }
  }
  throw Error(ErrorCode::Truncated, path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 4);
  const auto rate = static_cast<std::uint32_t>(clip.sample_rate);
  out.write("RIFF", 4);
  binio::put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  binio::put<std::uint32_t>(out, 16);
  binio::put<std::uint16_t>(out, 3);
  binio::put<std::uint16_t>(out, 1);
  binio::put<std::uint32_t>(out, rate);
  binio::put<std::uint32_t>(out, rate * 4);
  binio::put<std::uint16_t>(out, 4);
  binio::put<std::uint16_t>(out, 32);
  out.write("data", 4);
  binio::put<std::uint32_t>(out, data_bytes);
  for (double s : clip.samples) binio::put(out, static_cast<float>(s));
}

FallbackConfig FallbackConfig::for_sample_rate(double sample_rate) {
  FallbackConfig cfg;
  cfg.frame_hop = static_cast<int>(std::lround(sample_rate / kFeatureRateHz));
  cfg.window = static_cast<int>(std::lround(sample_rate * 0.025));
  return cfg;
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels x (n_fft/2 + 1) triangular filters, HTK mel scale.
Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double sample_rate, double f_min,
                               double f_max) {
  const int bins = n_fft / 2 + 1;
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / n_fft;
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

// Orthonormal DCT-II basis, n_coeffs x n.
Eigen::MatrixXd dct_matrix(int n_coeffs, int n) {
  Eigen::MatrixXd d(n_coeffs, n);
  for (int k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * k * (i + 0.5) / n);
    }
  }
  return d;
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

}  // namespace

FeatureSequence extract_fallback_features(const AudioClip& clip, const FallbackConfig& cfg) {
  if (!(clip.sample_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "sample rate must be positive");
  if (cfg.frame_hop < 1 || cfg.window < 2 || cfg.n_mels < 1 || cfg.n_coeffs < 1 ||
      cfg.n_coeffs > cfg.n_mels) {
    throw Error(ErrorCode::InvalidArgument, "invalid fallback extractor configuration");
  }
  const auto n_samples = static_cast<Eigen::Index>(clip.samples.size());
  if (n_samples < cfg.window) {
    throw Error(ErrorCode::ShapeMismatch, "audio clip shorter than one analysis window");
  }
  int n_fft = 1;
  while (n_fft < cfg.window) n_fft <<= 1;
  const int bins = n_fft / 2 + 1;
  const double f_max = cfg.f_max > 0.0 ? cfg.f_max : clip.sample_rate / 2.0;
  const Eigen::MatrixXd fb = mel_filterbank(cfg.n_mels, n_fft, clip.sample_rate, cfg.f_min, f_max);
  const Eigen::MatrixXd dct = dct_matrix(cfg.n_coeffs, cfg.n_mels);

  std::vector<double> hann(cfg.window);
  for (int i = 0; i < cfg.window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (cfg.window - 1));
  }

  std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(n_fft), &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(bins), &fftw_free);
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(
      fftw_plan_dft_r2c_1d(n_fft, in.get(), out.get(), FFTW_ESTIMATE));

  const Eigen::Index frames = n_samples / cfg.frame_hop;
  FeatureSequence seq;
  seq.rate_hz = clip.sample_rate / cfg.frame_hop;
  seq.family = kFallbackFamily;
  seq.data.resize(frames, cfg.n_coeffs);
  Eigen::VectorXd power(bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Index start = t * cfg.frame_hop;
    for (int i = 0; i < n_fft; ++i) {
      const Eigen::Index s = start + i;
      in.get()[i] = (i < cfg.window && s < n_samples) ? clip.samples[s] * hann[i] : 0.0;
    }
    fftw_execute(plan.get());
    for (int k = 0; k < bins; ++k) {
      power[k] = out.get()[k][0] * out.get()[k][0] + out.get()[k][1] * out.get()[k][1];
    }
    Eigen::VectorXd mel = fb * power;
    for (Eigen::Index m = 0; m < mel.size(); ++m) mel[m] = std::log(std::max(mel[m], cfg.log_floor));
    seq.data.row(t) = (dct * mel).transpose();
  }
  return seq;
}

FeatureSequence resample_features(const FeatureSequence& seq, double dst_rate) {
  if (!(dst_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "destination rate must be positive");
  if (!(seq.rate_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "source rate must be positive");
  const Eigen::Index n_in = seq.frames();
  if (n_in < 2) throw Error(ErrorCode::ShapeMismatch, "resampling needs at least two frames");
  const auto n_out = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(n_in * dst_rate / seq.rate_hz)));

  FeatureSequence out;
  out.rate_hz = dst_rate;
  out.family = seq.family;
  out.data.resize(n_out, seq.width());
  if (n_out == 1) {
    out.data.row(0) = seq.data.row(0);
    return out;
  }
  // Integer grid arithmetic keeps grid points that land on input frames exact.
  const Eigen::Index denom = n_out - 1;
  for (Eigen::Index t = 0; t < n_out; ++t) {
    const Eigen::Index num = t * (n_in - 1);
    const Eigen::Index i0 = num / denom;
    const Eigen::Index rem = num % denom;
    if (rem == 0) {
      out.data.row(t) = seq.data.row(i0);
      continue;
    }
    // Weighted form (a (d - r) + b r) / d: a single rounding for integer-valued
    // columns, and the clamp pins constant spans to their value.
    const double wa = static_cast<double>(denom - rem);
    const double wb = static_cast<double>(rem);
    const double d = static_cast<double>(denom);
    for (Eigen::Index c = 0; c < seq.width(); ++c) {
      const double a = seq.data(i0, c);
      const double b = seq.data(i0 + 1, c);
      out.data(t, c) = std::clamp((a * wa + b * wb) / d, std::min(a, b), std::max(a, b));
    }
  }
  return out;
}

}  // namespace rigsynth
