#include "rigsynth/rig.hpp"

#include "rigsynth/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

namespace rigsynth {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "neutral", "happy", "sad", "angry", "surprised", "fear", "disgusted"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view emotion_name(Emotion e) { return kEmotionNames.at(emotion_id(e)); }

Emotion emotion_from_id(int id) {
  if (id < 0 || id >= kNumEmotions) {
    throw Error(ErrorCode::InvalidArgument,
                "emotion id " + std::to_string(id) + " outside 0..6");
  }
  return static_cast<Emotion>(id);
}

Emotion parse_emotion(std::string_view text) {
  const std::string key = lower(text);
  for (int i = 0; i < kNumEmotions; ++i) {
    if (key == kEmotionNames[i]) return static_cast<Emotion>(i);
  }
  int id = -1;
  auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
  if (ec == std::errc() && ptr == key.data() + key.size()) return emotion_from_id(id);
  throw Error(ErrorCode::InvalidArgument, "unknown emotion '" + std::string(text) + "'");
}

std::string_view to_string(Region r) {
  switch (r) {
    case Region::Eye: return "eye";
    case Region::Jaw: return "jaw";
    case Region::Mouth: return "mouth";
    case Region::Teeth: return "teeth";
    case Region::Tongue: return "tongue";
    case Region::Brow: return "brow";
    case Region::Ear: return "ear";
    case Region::Nose: return "nose";
    case Region::Neck: return "neck";
  }
  return "?";
}

std::string_view to_string(Side s) {
  switch (s) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    case Side::Center: return "center";
  }
  return "?";
}

std::string_view to_string(EyeRole r) {
  switch (r) {
    case EyeRole::LidClosure: return "lid_closure";
    case EyeRole::GazeHorizontal: return "gaze_horizontal";
    case EyeRole::GazeVertical: return "gaze_vertical";
  }
  return "?";
}

RegionSet all_regions() {
  return {Region::Eye,  Region::Jaw, Region::Mouth, Region::Teeth, Region::Tongue,
          Region::Brow, Region::Ear, Region::Nose,  Region::Neck};
}

Region parse_region(std::string_view text) {
  for (Region r : all_regions()) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorCode::Parse, "unknown region '" + std::string(text) + "'");
}

Side parse_side(std::string_view text) {
  for (Side s : {Side::Left, Side::Right, Side::Center}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::Parse, "unknown side '" + std::string(text) + "'");
}

EyeRole parse_eye_role(std::string_view text) {
  for (EyeRole r : {EyeRole::LidClosure, EyeRole::GazeHorizontal, EyeRole::GazeVertical}) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorCode::Parse, "unknown eye_role '" + std::string(text) + "'");
}

RegionSet mouth_area() { return {Region::Jaw, Region::Mouth, Region::Teeth, Region::Tongue}; }
RegionSet eye_area() { return {Region::Eye, Region::Brow}; }

ControllerMap ControllerMap::from_entries(std::vector<ControllerEntry> entries) {
  const int n = static_cast<int>(entries.size());
  if (n != kNumControllers) {
    throw Error(ErrorCode::ShapeMismatch, "controller map has " + std::to_string(n) +
                                              " entries, expected " +
                                              std::to_string(kNumControllers));
  }
  std::vector<int> seen(n, 0);
  std::unordered_set<std::string> names;
  for (const auto& e : entries) {
    if (e.index < 0 || e.index >= n) {
      throw Error(ErrorCode::InvalidArgument,
                  "controller '" + e.name + "' index " + std::to_string(e.index) + " out of range");
    }
    if (seen[e.index]++) {
      throw Error(ErrorCode::DuplicateIndex, "duplicate controller index " + std::to_string(e.index));
    }
    if (!names.insert(e.name).second) {
      throw Error(ErrorCode::DuplicateName, "duplicate controller name '" + e.name + "'");
    }
    if (!(e.min <= e.max)) {
      throw Error(ErrorCode::InvalidArgument, "controller '" + e.name + "' has min > max");
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const ControllerEntry& a, const ControllerEntry& b) { return a.index < b.index; });

  for (const auto& e : entries) {
    if (!e.pair) {
      if (e.side != Side::Center) {
        throw Error(ErrorCode::AsymmetricPair, "sided controller '" + e.name + "' has no pair");
      }
      continue;
    }
    const int p = *e.pair;
    if (p < 0 || p >= n || p == e.index) {
      throw Error(ErrorCode::AsymmetricPair, "controller '" + e.name + "' has invalid pair");
    }
    const auto& other = entries[p];
    if (other.pair != e.index) {
      throw Error(ErrorCode::AsymmetricPair,
                  "'" + e.name + "' pairs '" + other.name + "' but not the reverse");
    }
    const bool opposite = (e.side == Side::Left && other.side == Side::Right) ||
                          (e.side == Side::Right && other.side == Side::Left);
    if (!opposite) {
      throw Error(ErrorCode::AsymmetricPair,
                  "'" + e.name + "' and '" + other.name + "' are not a left/right pair");
    }
  }

  for (Side side : {Side::Left, Side::Right}) {
    bool lid = false;
    bool gaze = false;
    for (const auto& e : entries) {
      if (e.side != side || !e.eye_role) continue;
      lid |= *e.eye_role == EyeRole::LidClosure;
      gaze |= *e.eye_role != EyeRole::LidClosure;
    }
    if (!lid || !gaze) {
      throw Error(ErrorCode::MissingEyeRole,
                  std::string(to_string(side)) + " eye lacks a lid_closure or gaze controller");
    }
  }

  ControllerMap map;
  map.entries_ = std::move(entries);
  return map;
}

std::optional<int> ControllerMap::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.index;
  }
  return std::nullopt;
}

std::vector<std::string> ControllerMap::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<int> ControllerMap::with_role(EyeRole role) const {
  std::vector<int> out;
  for (const auto& e : entries_) {
    if (e.eye_role == role) out.push_back(e.index);
  }
  return out;
}

std::vector<int> ControllerMap::with_role(EyeRole role, Side side) const {
  std::vector<int> out;
  for (const auto& e : entries_) {
    if (e.eye_role == role && e.side == side) out.push_back(e.index);
  }
  return out;
}

Eigen::VectorXd ControllerMap::lower_bounds() const {
  Eigen::VectorXd v(size());
  for (const auto& e : entries_) v[e.index] = e.min;
  return v;
}

Eigen::VectorXd ControllerMap::upper_bounds() const {
  Eigen::VectorXd v(size());
  for (const auto& e : entries_) v[e.index] = e.max;
  return v;
}

std::vector<int> region_indices(const ControllerMap& map, const RegionSet& regions) {
  std::vector<int> out;
  for (const auto& e : map.entries()) {
    if (regions.count(e.region)) out.push_back(e.index);
  }
  return out;
}

namespace {

struct Group {
  Region region;
  bool bilateral;
  std::vector<std::string_view> bases;
};

ControllerMap build_default_map() {
  const std::vector<Group> groups = {
      {Region::Eye, true,
       {"eye_lookHorizontal", "eye_lookVertical", "eye_blink", "eye_widen", "eye_squintInner",
        "eye_cheekRaise", "eye_lidPress", "eye_upperLidUp", "eye_lowerLidUp", "eye_lowerLidDown",
        "eye_faceScrunch", "eye_pupilWide"}},
      {Region::Brow, true, {"brow_down", "brow_lateral", "brow_raiseIn", "brow_raiseOut"}},
      {Region::Mouth, true,
       {"mouth_upperLipRaise", "mouth_sharpCornerPull", "mouth_cornerPull", "mouth_cornerDepress",
        "mouth_stretch", "mouth_dimple", "mouth_lowerLipDepress", "mouth_lipsPurseU",
        "mouth_lipsPurseD", "mouth_lipsTowardsU", "mouth_lipsTowardsD", "mouth_funnelU",
        "mouth_funnelD", "mouth_lipsTogetherU", "mouth_lipsTogetherD", "mouth_upperLipBite",
        "mouth_lowerLipBite", "mouth_lipsTightenU", "mouth_lipsTightenD", "mouth_lipsPressU",
        "mouth_lipsPressD", "mouth_cornerSharpenU", "mouth_cornerSharpenD", "mouth_pushPullU",
        "mouth_pushPullD", "mouth_lipsRollU", "mouth_lipsRollD", "mouth_lipsBlow",
        "mouth_cheekBlow", "mouth_cheekSuck", "mouth_stickyU", "mouth_stickyD",
        "mouth_lipsPullU", "mouth_lipsPullD", "mouth_thicknessU", "mouth_thicknessD",
        "mouth_cornerRaise", "mouth_stretchLipsClose"}},
      {Region::Mouth, false,
       {"mouth_move_tx", "mouth_move_ty", "mouth_lipsTogether", "mouth_lipsPurse", "mouth_funnel",
        "mouth_press", "mouth_upperLipCenter", "mouth_lowerLipCenter"}},
      {Region::Jaw, false,
       {"jaw_open", "jaw_fwdBack", "jaw_leftRight", "jaw_chinRaiseU", "jaw_chinRaiseD",
        "jaw_chinCompress"}},
      {Region::Jaw, true, {"jaw_clench", "jaw_cornerPush"}},
      {Region::Teeth, false,
       {"teethU_move_tx", "teethU_move_ty", "teethU_move_tz", "teethD_move_tx", "teethD_move_ty",
        "teethD_move_tz"}},
      {Region::Tongue, false,
       {"tongue_out", "tongue_up", "tongue_down", "tongue_leftRight", "tongue_roll",
        "tongue_tipUp", "tongue_tipDown", "tongue_tipLeftRight", "tongue_wide", "tongue_narrow",
        "tongue_press", "tongue_bendTwist", "tongue_thick", "tongue_thin"}},
      {Region::Nose, true,
       {"nose_wrinkle", "nose_wrinkleUpper", "nose_nostrilDepress", "nose_nostrilDilate",
        "nose_nostrilCompress"}},
      {Region::Ear, true, {"ear_up", "ear_back"}},
      {Region::Neck, true, {"neck_stretch", "neck_mastoidContract", "neck_swallowPress"}},
      {Region::Neck, false,
       {"neck_throatDown", "neck_throatUp", "neck_throatExhale", "neck_throatInhale",
        "neck_swallow1", "neck_swallow2", "neck_swallow3", "neck_digastricDown"}},
  };

  auto role_for = [](std::string_view base) -> std::optional<EyeRole> {
    if (base == "eye_blink") return EyeRole::LidClosure;
    if (base == "eye_lookHorizontal") return EyeRole::GazeHorizontal;
    if (base == "eye_lookVertical") return EyeRole::GazeVertical;
    return std::nullopt;
  };

  std::vector<ControllerEntry> entries;
  int index = 0;
  for (const auto& g : groups) {
    for (std::string_view base : g.bases) {
      if (g.bilateral) {
        ControllerEntry left{"CTRL_L_" + std::string(base), index, g.region, Side::Left,
                             index + 1, role_for(base)};
        ControllerEntry right{"CTRL_R_" + std::string(base), index + 1, g.region, Side::Right,
                              index, role_for(base)};
        entries.push_back(std::move(left));
        entries.push_back(std::move(right));
        index += 2;
      } else {
        entries.push_back(ControllerEntry{"CTRL_C_" + std::string(base), index, g.region,
                                          Side::Center, std::nullopt, std::nullopt});
        index += 1;
      }
    }
  }
  return ControllerMap::from_entries(std::move(entries));
}

ControllerEntry entry_from_json(const json& j) {
  ControllerEntry e;
  e.name = j.at("name").get<std::string>();
  e.index = j.at("index").get<int>();
  e.region = parse_region(j.at("region").get<std::string>());
  e.side = parse_side(j.value("side", std::string("center")));
  if (j.contains("pair") && !j["pair"].is_null()) e.pair = j["pair"].get<int>();
  if (j.contains("eye_role") && !j["eye_role"].is_null()) {
    e.eye_role = parse_eye_role(j["eye_role"].get<std::string>());
  }
  e.min = j.value("min", -1.0);
  e.max = j.value("max", 1.0);
  return e;
}

}  // namespace

const ControllerMap& default_controller_map() {
  static const ControllerMap map = build_default_map();
  return map;
}

ControllerMap load_controller_map(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("controller map: ") + ex.what());
  }
  const json& list = doc.is_array() ? doc : doc.at("controllers");
  std::vector<ControllerEntry> entries;
  try {
    for (const auto& item : list) entries.push_back(entry_from_json(item));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("controller map entry: ") + ex.what());
  }
  return ControllerMap::from_entries(std::move(entries));
}

ControllerMap load_controller_map_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open controller map " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_controller_map(ss.str());
}

std::string controller_map_to_json(const ControllerMap& map) {
  json list = json::array();
  for (const auto& e : map.entries()) {
    json j;
    j["name"] = e.name;
    j["index"] = e.index;
    j["region"] = std::string(to_string(e.region));
    j["side"] = std::string(to_string(e.side));
    j["pair"] = e.pair ? json(*e.pair) : json(nullptr);
    j["eye_role"] = e.eye_role ? json(std::string(to_string(*e.eye_role))) : json(nullptr);
    j["min"] = e.min;
    j["max"] = e.max;
    list.push_back(std::move(j));
  }
  json doc;
  doc["version"] = 1;
  doc["controllers"] = std::move(list);
  return doc.dump(2) + "\n";
}

void write_rig_csv(std::ostream& out, const RigSequence& seq, const ControllerMap& map) {
  if (seq.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rig sequence width does not match controller map");
  }
  const auto& entries = map.entries();
  for (int c = 0; c < map.size(); ++c) {
    if (c) out << ',';
    out << entries[c].name;
  }
  out << '\n';
  char buf[32];
  for (Eigen::Index t = 0; t < seq.frames(); ++t) {
    for (Eigen::Index c = 0; c < seq.channels(); ++c) {
      if (c) out << ',';
      std::snprintf(buf, sizeof buf, "%.9g", seq.values(t, c));
      out << buf;
    }
    out << '\n';
  }
}

void write_rig_csv(const std::filesystem::path& path, const RigSequence& seq,
                   const ControllerMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_rig_csv(out, seq, map);
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

RigSequence read_rig_csv(const std::filesystem::path& path, const ControllerMap& map) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open rig csv " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty rig csv " + path.string());
  const auto header = split_csv_line(line);
  std::vector<int> column_to_channel(header.size(), -1);
  std::vector<int> hits(map.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (auto idx = map.find(header[i])) {
      column_to_channel[i] = *idx;
      ++hits[*idx];
    }
  }
  for (int c = 0; c < map.size(); ++c) {
    if (hits[c] != 1) {
      throw Error(ErrorCode::ShapeMismatch,
                  "rig csv column for '" + map.at(c).name + "' missing or repeated");
    }
  }
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::Parse, "rig csv row " + std::to_string(rows.size() + 1) +
                                        " has wrong number of cells");
    }
    Eigen::VectorXd row(map.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (column_to_channel[i] < 0) continue;
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || !std::isfinite(v)) {
        throw Error(ErrorCode::Parse, "rig csv cell '" + cells[i] + "' is not a finite number");
      }
      row[column_to_channel[i]] = v;
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), map.size());
  for (std::size_t t = 0; t < rows.size(); ++t) values.row(static_cast<Eigen::Index>(t)) = rows[t];
  return RigSequence(std::move(values));
}

EmotionTimeline read_emotion_timeline(const std::filesystem::path& path, Eigen::Index frames) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open timeline " + path.string());
  std::vector<std::pair<long, Emotion>> keys;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw Error(ErrorCode::Parse, "timeline row '" + line + "' needs two cells");
    long frame = 0;
    const auto [end, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), frame);
    if (ec != std::errc() || end != cells[0].data() + cells[0].size()) {
      if (first) {  // header row
        first = false;
        continue;
      }
      throw Error(ErrorCode::Parse, "timeline frame '" + cells[0] + "' is not an integer");
    }
    first = false;
    const Emotion label = parse_emotion(cells[1]);
    if (!keys.empty() && frame <= keys.back().first) {
      throw Error(ErrorCode::TimelineMismatch, "timeline frames must increase strictly");
    }
    keys.emplace_back(frame, label);
  }
  if (keys.empty()) throw Error(ErrorCode::TimelineMismatch, "timeline " + path.string() + " has no keys");
  if (keys.front().first != 0) {
    throw Error(ErrorCode::TimelineMismatch, "timeline must key frame 0");
  }
  if (keys.back().first >= frames) {
    throw Error(ErrorCode::TimelineMismatch, "timeline keys frame " + std::to_string(keys.back().first) +
                                                 " but the clip has " + std::to_string(frames) + " frames");
  }
  EmotionTimeline out(static_cast<std::size_t>(frames));
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const long stop = k + 1 < keys.size() ? keys[k + 1].first : static_cast<long>(frames);
    std::fill(out.begin() + keys[k].first, out.begin() + stop, keys[k].second);
  }
  return out;
}

}  // namespace rigsynth
