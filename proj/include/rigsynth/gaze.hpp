#pragma once

// Idle gaze: random keyframes on a small disk, linearly interpolated and
// written to both eyes' gaze controllers.

#include "rigsynth/rig.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rigsynth {

struct GazeConfig {
  int interval_min = 15;
  int interval_max = 45;
  double radius_min = 0.1;
  double radius_max = 0.2;
  double return_center_prob = 0.4;
  double fps = kRigFps;

  void validate() const;
};

struct GazeKeyframe {
  int frame = 0;
  double horizontal = 0.0;
  double vertical = 0.0;

  bool operator==(const GazeKeyframe&) const = default;
};

struct GazeTrack {
  // Strictly increasing frames. The first keyframe is the rest pose (0, 0) at
  // frame 0; every later one was drawn by the sampler.
  std::vector<GazeKeyframe> keyframes;

  // Linear interpolation, held constant outside the keyframe range.
  std::pair<double, double> at(double frame) const;

  bool operator==(const GazeTrack&) const = default;
};

// Draws keyframes until one lands at or beyond the last frame, so the track
// covers [0, n_frames).
GazeTrack sample_gaze_track(const GazeConfig& cfg, int n_frames, std::uint64_t seed);

// Sampled keyframes after the rest pose, at least `count` of them.
GazeTrack sample_gaze_keyframes(const GazeConfig& cfg, std::size_t count, std::uint64_t seed);

// Writes the interpolated track into gaze_horizontal / gaze_vertical of both
// eyes. Throws MissingEyeRole when either eye lacks one of them.
RigSequence inject_gaze(const RigSequence& seq, const GazeTrack& track, const ControllerMap& map);

// "frame,h,v" with one row per keyframe.
void write_gaze_csv(const std::filesystem::path& path, const GazeTrack& track);

}  // namespace rigsynth
