#include "doctest.h"
#include "support.hpp"

#include "rigsynth/rig.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

using namespace rigsynth;
using testing::error_code_of;

namespace {

std::vector<ControllerEntry> default_entries() { return default_controller_map().entries(); }

int index_of(const std::string& name) { return *default_controller_map().find(name); }

}  // namespace

TEST_SUITE("rig") {

TEST_CASE("emotion labels are a bijection between ids and names") {
  std::set<std::string> names;
  for (int id = 0; id < kNumEmotions; ++id) {
    const Emotion e = emotion_from_id(id);
    CHECK(emotion_id(e) == id);
    names.emplace(emotion_name(e));
    CHECK(parse_emotion(emotion_name(e)) == e);
    CHECK(parse_emotion(std::to_string(id)) == e);
  }
  CHECK(names.size() == 7);
  CHECK(names == std::set<std::string>{"neutral", "happy", "sad", "angry", "surprised", "fear", "disgusted"});
  CHECK(parse_emotion("HAPPY") == Emotion::Happy);
  CHECK(error_code_of([] { emotion_from_id(7); }) == ErrorCode::InvalidArgument);
  CHECK(error_code_of([] { parse_emotion("bored"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("shipped map is valid with a populated eye region") {
  const auto& map = default_controller_map();
  CHECK(map.size() == kNumControllers);
  CHECK(region_indices(map, {Region::Eye}).size() >= 6);
  for (int i = 0; i < map.size(); ++i) CHECK(map.at(i).index == i);
  for (Side s : {Side::Left, Side::Right}) {
    CHECK_FALSE(map.with_role(EyeRole::LidClosure, s).empty());
    CHECK_FALSE(map.with_role(EyeRole::GazeHorizontal, s).empty());
    CHECK_FALSE(map.with_role(EyeRole::GazeVertical, s).empty());
  }
}

TEST_CASE("duplicate index is rejected") {
  auto entries = default_entries();
  entries[6].index = 5;
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::DuplicateIndex);
}

TEST_CASE("duplicate name is rejected") {
  auto entries = default_entries();
  entries[10].name = entries[11].name;
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::DuplicateName);
}

TEST_CASE("wrong controller count is rejected") {
  auto entries = default_entries();
  entries.pop_back();
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("asymmetric pairing is rejected") {
  auto entries = default_entries();
  const int l_brow = index_of("CTRL_L_brow_down");
  const int r_brow = index_of("CTRL_R_brow_down");
  const int r_other = index_of("CTRL_R_brow_raiseIn");
  REQUIRE(entries[l_brow].pair == r_brow);
  entries[r_brow].pair = r_other;
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::AsymmetricPair);
}

TEST_CASE("left entry without a pair is rejected") {
  auto entries = default_entries();
  const int l = index_of("CTRL_L_brow_down");
  const int r = *entries[l].pair;
  entries[l].pair.reset();
  entries[r].pair.reset();
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::AsymmetricPair);
}

TEST_CASE("missing eye roles are rejected") {
  auto entries = default_entries();
  entries[index_of("CTRL_R_eye_blink")].eye_role.reset();
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::MissingEyeRole);

  entries = default_entries();
  entries[index_of("CTRL_L_eye_lookHorizontal")].eye_role.reset();
  entries[index_of("CTRL_L_eye_lookVertical")].eye_role.reset();
  CHECK(error_code_of([&] { ControllerMap::from_entries(entries); }) == ErrorCode::MissingEyeRole);
}

TEST_CASE("region indices") {
  const auto& map = default_controller_map();
  const auto eye = region_indices(map, eye_area());
  const auto mouth = region_indices(map, mouth_area());
  CHECK(std::is_sorted(eye.begin(), eye.end()));
  CHECK(std::adjacent_find(eye.begin(), eye.end()) == eye.end());
  std::vector<int> both;
  std::set_intersection(eye.begin(), eye.end(), mouth.begin(), mouth.end(), std::back_inserter(both));
  CHECK(both.empty());
  for (int i : eye) {
    const Region r = map.at(i).region;
    CHECK((r == Region::Eye || r == Region::Brow));
  }

  std::vector<int> all(174);
  std::iota(all.begin(), all.end(), 0);
  CHECK(region_indices(map, all_regions()) == all);
  CHECK(region_indices(map, {}).empty());

  // Single-region lists partition 0..173.
  std::size_t total = 0;
  std::vector<int> seen(174, 0);
  for (Region r : all_regions()) {
    for (int i : region_indices(map, {r})) {
      ++seen[i];
      ++total;
    }
  }
  CHECK(total == 174);
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("controller map JSON round trip") {
  const auto& map = default_controller_map();
  const std::string text = controller_map_to_json(map);
  CHECK(load_controller_map(text) == map);

  auto entries = default_entries();
  entries[3].min = -0.5;
  entries[3].max = 0.25;
  const auto custom = ControllerMap::from_entries(entries);
  CHECK(load_controller_map(controller_map_to_json(custom)) == custom);
}

TEST_CASE("controller map JSON errors") {
  CHECK(error_code_of([] { load_controller_map("{not json"); }) == ErrorCode::Parse);
  CHECK(error_code_of([] { load_controller_map_file("/nonexistent/map.json"); }) == ErrorCode::Io);
}

TEST_CASE("rig CSV round trip keeps nine significant digits") {
  const auto& map = default_controller_map();
  RigSequence seq(testing::random_matrix(5, 174, 3, 0.4));
  std::ostringstream os;
  write_rig_csv(os, seq, map);
  const std::string text = os.str();
  CHECK(text.substr(0, text.find(',')) == map.at(0).name);

  testing::TempDir dir;
  write_rig_csv(dir / "rig.csv", seq, map);
  const RigSequence back = read_rig_csv(dir / "rig.csv", map);
  REQUIRE(back.frames() == 5);
  CHECK((back.values - seq.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rig CSV reader maps columns by header name") {
  const auto& map = default_controller_map();
  RigSequence seq(testing::random_matrix(3, 174, 4));
  testing::TempDir dir;
  {
    // Write the columns in reverse order.
    std::ofstream out(dir / "rev.csv");
    for (int c = 173; c >= 0; --c) out << map.at(c).name << (c ? "," : "\n");
    out.precision(17);
    for (int t = 0; t < 3; ++t) {
      for (int c = 173; c >= 0; --c) out << seq.values(t, c) << (c ? "," : "\n");
    }
  }
  CHECK(read_rig_csv(dir / "rev.csv", map).values == seq.values);
}

TEST_CASE("emotion timeline holds each label until the next key") {
  testing::TempDir dir;
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  };
  const auto tl = read_emotion_timeline(write("a.csv", "frame,label\n0,happy\n3,2\n5,Angry\n"), 7);
  const EmotionTimeline want{Emotion::Happy, Emotion::Happy, Emotion::Happy, Emotion::Sad,
                             Emotion::Sad,   Emotion::Angry, Emotion::Angry};
  CHECK(tl == want);
  CHECK(read_emotion_timeline(write("b.csv", "0,neutral\n"), 3) == EmotionTimeline(3, Emotion::Neutral));

  CHECK(error_code_of([&] { read_emotion_timeline(write("c.csv", "1,happy\n"), 4); }) ==
        ErrorCode::TimelineMismatch);
  CHECK(error_code_of([&] { read_emotion_timeline(write("d.csv", "0,happy\n9,sad\n"), 4); }) ==
        ErrorCode::TimelineMismatch);
  CHECK(error_code_of([&] { read_emotion_timeline(write("e.csv", "0,happy\n2,sad\n2,fear\n"), 4); }) ==
        ErrorCode::TimelineMismatch);
  CHECK(error_code_of([&] { read_emotion_timeline(write("f.csv", "0,bored\n"), 4); }) ==
        ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { read_emotion_timeline(write("g.csv", "0,happy\nx,sad\n"), 4); }) == ErrorCode::Parse);
}

}  // TEST_SUITE
