#include "rigsynth/gaze.hpp"

#include "rigsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

namespace rigsynth {

void GazeConfig::validate() const {
  if (interval_min < 1 || interval_max < interval_min) {
    throw Error(ErrorCode::InvalidArgument, "gaze interval must satisfy 1 <= min <= max");
  }
  if (!(radius_min >= 0.0) || !(radius_max >= radius_min)) {
    throw Error(ErrorCode::InvalidArgument, "gaze radius must satisfy 0 <= min <= max");
  }
  if (!(return_center_prob >= 0.0 && return_center_prob <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "gaze return_center_prob must lie in [0, 1]");
  }
  if (!(fps > 0.0)) throw Error(ErrorCode::InvalidArgument, "gaze fps must be positive");
}

std::pair<double, double> GazeTrack::at(double frame) const {
  if (keyframes.empty()) return {0.0, 0.0};
  if (frame <= keyframes.front().frame) return {keyframes.front().horizontal, keyframes.front().vertical};
  if (frame >= keyframes.back().frame) return {keyframes.back().horizontal, keyframes.back().vertical};
  auto hi = std::upper_bound(keyframes.begin(), keyframes.end(), frame,
                             [](double f, const GazeKeyframe& k) { return f < k.frame; });
  auto lo = hi - 1;
  const double u = (frame - lo->frame) / static_cast<double>(hi->frame - lo->frame);
  return {lo->horizontal + u * (hi->horizontal - lo->horizontal),
          lo->vertical + u * (hi->vertical - lo->vertical)};
}

namespace {

template <typename Done>
GazeTrack sample_until(const GazeConfig& cfg, std::uint64_t seed, Done done) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> interval(cfg.interval_min, cfg.interval_max);
  std::bernoulli_distribution center(cfg.return_center_prob);
  std::uniform_real_distribution<double> radius(cfg.radius_min, cfg.radius_max);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);

  GazeTrack track;
  track.keyframes.push_back({0, 0.0, 0.0});
  while (!done(track)) {
    GazeKeyframe k;
    k.frame = track.keyframes.back().frame + interval(rng);
    if (!center(rng)) {
      const double r = radius(rng);
      const double theta = angle(rng);
      k.horizontal = r * std::cos(theta);
      k.vertical = r * std::sin(theta);
    }
    track.keyframes.push_back(k);
  }
  return track;
}

}  // namespace

GazeTrack sample_gaze_track(const GazeConfig& cfg, int n_frames, std::uint64_t seed) {
  if (n_frames < 1) throw Error(ErrorCode::InvalidArgument, "gaze track needs at least one frame");
  return sample_until(cfg, seed,
                      [&](const GazeTrack& t) { return t.keyframes.back().frame >= n_frames - 1; });
}

GazeTrack sample_gaze_keyframes(const GazeConfig& cfg, std::size_t count, std::uint64_t seed) {
  return sample_until(cfg, seed, [&](const GazeTrack& t) { return t.keyframes.size() > count; });
}

RigSequence inject_gaze(const RigSequence& seq, const GazeTrack& track, const ControllerMap& map) {
  if (seq.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rig sequence width does not match controller map");
  }
  std::vector<int> horizontal, vertical;
  for (Side side : {Side::Left, Side::Right}) {
    const auto h = map.with_role(EyeRole::GazeHorizontal, side);
    const auto v = map.with_role(EyeRole::GazeVertical, side);
    if (h.empty() || v.empty()) {
      throw Error(ErrorCode::MissingEyeRole,
                  std::string("no gaze channels for the ") + std::string(to_string(side)) + " eye");
    }
    horizontal.insert(horizontal.end(), h.begin(), h.end());
    vertical.insert(vertical.end(), v.begin(), v.end());
  }
  RigSequence out = seq;
  for (Eigen::Index t = 0; t < seq.frames(); ++t) {
    const auto [h, v] = track.at(static_cast<double>(t));
    for (int c : horizontal) out.values(t, c) = h;
    for (int c : vertical) out.values(t, c) = v;
  }
  return out;
}

void write_gaze_csv(const std::filesystem::path& path, const GazeTrack& track) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "frame,h,v\n";
  char buf[96];
  for (const auto& k : track.keyframes) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", k.frame, k.horizontal, k.vertical);
    out << buf;
  }
}

}  // namespace rigsynth
