#pragma once

// Rig data model shared by every stage: emotion labels, the controller map
// (names, regions, left/right pairing, eye roles) and rig sequences.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rigsynth {

inline constexpr int kNumControllers = 174;
inline constexpr double kRigFps = 60.0;
inline constexpr int kNumEmotions = 7;

enum class Emotion : int {
  Neutral = 0,
  Happy = 1,
  Sad = 2,
  Angry = 3,
  Surprised = 4,
  Fear = 5,
  Disgusted = 6,
};

std::string_view emotion_name(Emotion e);
// Accepts a label name ("happy") or its id ("1").
Emotion parse_emotion(std::string_view text);
Emotion emotion_from_id(int id);
inline int emotion_id(Emotion e) { return static_cast<int>(e); }

enum class Region { Eye, Jaw, Mouth, Teeth, Tongue, Brow, Ear, Nose, Neck };
enum class Side { Left, Right, Center };
enum class EyeRole { LidClosure, GazeHorizontal, GazeVertical };

using RegionSet = std::set<Region>;

std::string_view to_string(Region r);
std::string_view to_string(Side s);
std::string_view to_string(EyeRole r);
Region parse_region(std::string_view text);
Side parse_side(std::string_view text);
EyeRole parse_eye_role(std::string_view text);

RegionSet all_regions();
// jaw, mouth, teeth, tongue
RegionSet mouth_area();
// eye, brow
RegionSet eye_area();

struct ControllerEntry {
  std::string name;
  int index = 0;
  Region region = Region::Mouth;
  Side side = Side::Center;
  std::optional<int> pair;
  std::optional<EyeRole> eye_role;
  double min = -1.0;
  double max = 1.0;

  bool operator==(const ControllerEntry&) const = default;
};

class ControllerMap {
 public:
  // Validates and orders entries by index. Throws Error on duplicate
  // index/name, asymmetric or one-sided pairing, or missing eye roles.
  static ControllerMap from_entries(std::vector<ControllerEntry> entries);

  const std::vector<ControllerEntry>& entries() const { return entries_; }
  const ControllerEntry& at(int index) const { return entries_.at(index); }
  int size() const { return static_cast<int>(entries_.size()); }

  std::optional<int> find(std::string_view name) const;
  std::vector<std::string> names() const;

  // Indices carrying an eye role, optionally restricted to one side.
  std::vector<int> with_role(EyeRole role) const;
  std::vector<int> with_role(EyeRole role, Side side) const;

  Eigen::VectorXd lower_bounds() const;
  Eigen::VectorXd upper_bounds() const;

  bool operator==(const ControllerMap&) const = default;

 private:
  std::vector<ControllerEntry> entries_;
};

// Sorted, duplicate-free indices of all controllers whose region is in
// `regions`.
std::vector<int> region_indices(const ControllerMap& map, const RegionSet& regions);

// The shipped stand-in map. Names follow MetaHuman conventions but are not
// the published set of any real character.
const ControllerMap& default_controller_map();

ControllerMap load_controller_map(std::string_view json_text);
ControllerMap load_controller_map_file(const std::filesystem::path& path);
std::string controller_map_to_json(const ControllerMap& map);

// Frames are rows, controllers are columns.
struct RigSequence {
  Eigen::MatrixXd values;
  double fps = kRigFps;

  RigSequence() = default;
  explicit RigSequence(Eigen::MatrixXd v, double rate = kRigFps)
      : values(std::move(v)), fps(rate) {}

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
};

// One label per output frame.
using EmotionTimeline = std::vector<Emotion>;

// Keyed emotion timeline CSV: optional "frame,label" header, then rows of
// a frame number and an emotion name or id. Each label holds until the next
// keyed frame. Keys must start at frame 0, increase strictly and stay below
// `frames`; violations raise TimelineMismatch.
EmotionTimeline read_emotion_timeline(const std::filesystem::path& path, Eigen::Index frames);

// Header of controller names, one row per frame, 9 significant digits.
void write_rig_csv(std::ostream& out, const RigSequence& seq, const ControllerMap& map);
void write_rig_csv(const std::filesystem::path& path, const RigSequence& seq,
                   const ControllerMap& map);
// Columns are matched to the map by header name; every map controller must
// be present.
RigSequence read_rig_csv(const std::filesystem::path& path, const ControllerMap& map);

}  // namespace rigsynth
