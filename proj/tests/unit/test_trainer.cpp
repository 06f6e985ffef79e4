#include "doctest.h"
#include "support.hpp"

#include "rigsynth/trainer.hpp"

#include <cmath>
#include <fstream>

using namespace rigsynth;
using testing::error_code_of;

namespace {

ModelConfig small_config(int feature_dim) {
  ModelConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ff = 32;
  cfg.layers = 1;
  cfg.dropout = 0.0;
  cfg.feature_family = kSyntheticFamily;
  return cfg;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (*ta[i].value != *tb[i].value) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("mse loss") {
  const Eigen::MatrixXd t = testing::random_matrix(3, 174, 1);
  CHECK(mse_loss(t, t) == 0.0);
  const Eigen::MatrixXd shifted = (t.array() + 0.1).matrix();
  CHECK(mse_loss(shifted, t) == doctest::Approx(0.01).epsilon(1e-12));
  Eigen::MatrixXd p(1, 2), q(1, 2);
  p << 0, 0;
  q << 3, 4;
  CHECK(mse_loss(p, q) == 12.5);
  Eigen::MatrixXd g(1, 2);
  g << -3, -4;  // 2 (p - q) / 2
  CHECK(mse_grad(p, q) == g);
  CHECK(error_code_of([&] { mse_loss(p, t); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("step learning rate schedule") {
  for (int e = 0; e < 100; ++e) CHECK(steplr(1e-4, 100, 0.995, e) == 1e-4);
  CHECK(steplr(1e-4, 100, 0.995, 100) == 1e-4 * 0.995);
  CHECK(steplr(1e-4, 100, 0.995, 250) == doctest::Approx(9.90025e-5).epsilon(1e-12));
  // Piecewise constant with jumps only at multiples of the step size.
  for (int e = 1; e < 3000; ++e) {
    const bool jump = steplr(1e-3, 100, 0.995, e) != steplr(1e-3, 100, 0.995, e - 1);
    CHECK(jump == (e % 100 == 0));
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.lr0 == 1e-4);
  CHECK(c.adam_beta1 == 0.9);
  CHECK(c.adam_beta2 == 0.999);
  CHECK(c.adam_eps == 1e-8);
  CHECK(c.step_size == 100);
  CHECK(c.gamma == 0.995);
  CHECK(c.epochs == 3000);
  c.gamma = 0.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
  c = {};
  c.step_size = 0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Audio2RigModel m = init_model(small_config(4), 2);
  const ModelParams before = m.params;
  Adam adam(m.params, 0.9, 0.999, 1e-8);
  const ModelParams zero = zeros_like(m.params);
  for (int i = 0; i < 3; ++i) adam.step(m.params, zero, 1e-2);
  CHECK(same_params(before, m.params));
  CHECK(adam.steps() == 3);
}

TEST_CASE("adam first step moves each entry by lr against the gradient sign") {
  Audio2RigModel m = init_model(small_config(4), 3);
  const ModelParams before = m.params;
  ModelParams g = zeros_like(m.params);
  g.head.bias(0, 0) = 0.5;
  g.head.bias(0, 1) = -2.0;
  Adam adam(m.params, 0.9, 0.999, 1e-8);
  adam.step(m.params, g, 1e-3);
  // Bias-corrected m/sqrt(v) is sign(g) on the first step.
  CHECK(m.params.head.bias(0, 0) == doctest::Approx(before.head.bias(0, 0) - 1e-3).epsilon(1e-9));
  CHECK(m.params.head.bias(0, 1) == doctest::Approx(before.head.bias(0, 1) + 1e-3).epsilon(1e-9));
  CHECK(m.params.head.bias(0, 2) == before.head.bias(0, 2));
}

TEST_CASE("synthetic dataset generator") {
  const SyntheticDataset a = gen_synthetic(7, 32, 40, 80, 12);
  const SyntheticDataset b = gen_synthetic(7, 32, 40, 80, 12);
  CHECK(a.items.size() == 32);
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    const auto& it = a.items[i];
    CHECK(it.features.rows() >= 40);
    CHECK(it.features.rows() <= 80);
    CHECK(it.target.cols() == 174);
    CHECK(it.target.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(it.features == b.items[i].features);
    CHECK(it.target == b.items[i].target);
    CHECK(emotion_id(it.emotion) == static_cast<int>(i % 7));
  }
  // Same features under two emotions differ exactly by the documented transform.
  const auto& item = a.items[0];
  const Eigen::MatrixXd happy = a.truth.apply(item.features, Emotion::Happy);
  Eigen::MatrixXd z = item.features * a.truth.projection;
  z.rowwise() += a.truth.bias + a.truth.emotion_offsets.row(1);
  CHECK(happy == (0.8 * z.array().tanh()).matrix());
  CHECK_FALSE(happy.isApprox(a.truth.apply(item.features, Emotion::Sad)));
  // Offsets are distinct per emotion.
  for (int i = 0; i < 7; ++i) {
    for (int j = i + 1; j < 7; ++j) CHECK(a.truth.emotion_offsets.row(i) != a.truth.emotion_offsets.row(j));
  }
  CHECK(gen_synthetic(8, 2, 5, 5, 3).items[0].features != gen_synthetic(9, 2, 5, 5, 3).items[0].features);
}

TEST_CASE("zero learning rate leaves weights bitwise unchanged") {
  const SyntheticDataset data = gen_synthetic(11, 4, 10, 14, 6);
  Audio2RigModel m = init_model(small_config(6), 12);
  const ModelParams before = m.params;
  TrainConfig cfg;
  cfg.lr0 = 0.0;
  cfg.epochs = 3;
  cfg.batch = 2;
  const TrainResult r = train(m, data, cfg);
  CHECK(same_params(before, m.params));
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[0].loss == r.curve[2].loss);
}

TEST_CASE("identical seeds give identical loss curves") {
  const SyntheticDataset data = gen_synthetic(13, 6, 10, 14, 6);
  ModelConfig mc = small_config(6);
  mc.dropout = 0.1;
  TrainConfig cfg;
  cfg.lr0 = 1e-3;
  cfg.epochs = 5;
  cfg.batch = 4;
  cfg.seed = 99;
  Audio2RigModel a = init_model(mc, 14), b = init_model(mc, 14);
  const TrainResult ra = train(a, data, cfg), rb = train(b, data, cfg);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) CHECK(ra.curve[i].loss == rb.curve[i].loss);
  CHECK(same_params(a.params, b.params));
}

TEST_CASE("training reduces the loss and records the schedule") {
  const SyntheticDataset data = gen_synthetic(15, 8, 20, 30, 8);
  Audio2RigModel m = init_model(small_config(8), 16);
  const double initial = evaluate(m, data);
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.epochs = 120;
  cfg.batch = 8;
  cfg.step_size = 50;
  int calls = 0;
  const TrainResult r = train(m, data, cfg, [&](const EpochStats&) { ++calls; });
  CHECK(calls == 120);
  CHECK(r.curve[60].lr == steplr(3e-3, 50, 0.995, 60));
  CHECK(evaluate(m, data) < 0.5 * initial);
}

TEST_CASE("target loss stops training once inference MSE is below it") {
  const SyntheticDataset data = gen_synthetic(15, 8, 20, 30, 8);
  Audio2RigModel m = init_model(small_config(8), 16);
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.epochs = 400;
  cfg.batch = 8;
  const double start = evaluate(m, data);
  cfg.target_loss = 0.5 * start;
  const TrainResult r = train(m, data, cfg);
  CHECK(r.curve.size() < 400u);
  CHECK(evaluate(m, data) < cfg.target_loss);
  CHECK(r.curve.back().loss < cfg.target_loss);

  TrainConfig bad;
  bad.target_loss = -1.0;
  CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("training errors") {
  const SyntheticDataset data = gen_synthetic(17, 2, 5, 6, 4);
  Audio2RigModel wrong_width = init_model(small_config(5), 18);
  CHECK(error_code_of([&] { train(wrong_width, data, TrainConfig{}); }) == ErrorCode::ShapeMismatch);
  ModelConfig mc = small_config(4);
  mc.feature_family = kExternalFamily;
  Audio2RigModel other_family = init_model(mc, 19);
  CHECK(error_code_of([&] { train(other_family, data, TrainConfig{}); }) == ErrorCode::FeatureFamilyMismatch);

  Audio2RigModel m = init_model(small_config(4), 20);
  TrainConfig hot;
  hot.lr0 = 1e6;
  hot.epochs = 50;
  SyntheticDataset poisoned = data;
  poisoned.items[0].target(0, 0) = std::numeric_limits<double>::infinity();
  CHECK(error_code_of([&] { train(m, poisoned, hot); }) == ErrorCode::Divergence);
}

TEST_CASE("dataset files and manifest round trip") {
  testing::TempDir dir;
  const SyntheticDataset data = gen_synthetic(21, 3, 10, 12, 5);
  write_dataset(dir.path(), data, default_controller_map());
  const Dataset back = load_manifest(dir / "manifest.json", default_controller_map());
  REQUIRE(back.items.size() == 3);
  CHECK(back.feature_family == kSyntheticFamily);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.items[i].emotion == data.items[i].emotion);
    CHECK((back.items[i].features - data.items[i].features).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.items[i].target - data.items[i].target).cwiseAbs().maxCoeff() < 1e-8);
  }

  {
    std::ofstream out(dir / "synth.json");
    out << R"({"synthetic": {"seed": 21, "n_items": 3, "t_min": 10, "t_max": 12, "feature_dim": 5}})";
  }
  const Dataset synth = load_manifest(dir / "synth.json", default_controller_map());
  CHECK(synth.items[2].features == data.items[2].features);

  TrainResult r;
  r.curve = {{0, 1e-3, 0.5}, {1, 1e-3, 0.25}};
  write_loss_csv(dir / "loss.csv", r);
  std::ifstream in(dir / "loss.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,lr,loss");
}

TEST_CASE("training setup JSON keeps defaults for missing keys") {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "setup.json");
    out << R"({"model": {"feature_dim": 32, "layers": 1, "d_model": 64}, "train": {"lr0": 0.002, "epochs": 10}, "init_seed": 5})";
  }
  const TrainingSetup s = load_training_setup(dir / "setup.json");
  CHECK(s.model.feature_dim == 32);
  CHECK(s.model.layers == 1);
  CHECK(s.model.heads == 8);
  CHECK(s.train.lr0 == 0.002);
  CHECK(s.train.gamma == 0.995);
  CHECK(s.init_seed == 5);
}

}  // TEST_SUITE
