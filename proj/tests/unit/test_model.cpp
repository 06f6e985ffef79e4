#include "doctest.h"
#include "support.hpp"

#include "rigsynth/gradcheck.hpp"
#include "rigsynth/model.hpp"
#include "rigsynth/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

using namespace rigsynth;
using testing::error_code_of;

namespace {

ModelConfig tiny_config(int layers = 2, bool pe = true) {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ff = 24;
  cfg.layers = layers;
  cfg.positional_encoding = pe;
  return cfg;
}

EmotionTimeline cycle_labels(Eigen::Index n) {
  EmotionTimeline tl;
  for (Eigen::Index t = 0; t < n; ++t) tl.push_back(emotion_from_id(static_cast<int>(t % 7)));
  return tl;
}

}  // namespace

TEST_SUITE("audio2rig") {

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.heads = 3;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
  c = tiny_config();
  c.d_model = 15;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
  c = tiny_config();
  c.dropout = 1.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("reference configuration shape") {
  const ModelConfig cfg;
  CHECK(cfg.layers == 10);
  CHECK(cfg.d_model == 512);
  CHECK(cfg.output_dim == 174);
  CHECK(cfg.leaky_slope == 0.2);
  const Audio2RigModel zero = zero_model(cfg);
  CHECK(zero.params.layers.size() == 10);
  CHECK(zero.params.head.weight.rows() == 512);
  CHECK(zero.params.head.weight.cols() == 174);
}

TEST_CASE("forward output shape and determinism") {
  const Audio2RigModel m = init_model(tiny_config(), 1);
  const Eigen::MatrixXd h = testing::random_matrix(9, 16, 2);
  const Eigen::MatrixXd y = forward(m, h);
  CHECK(y.rows() == 9);
  CHECK(y.cols() == 174);
  CHECK(forward(m, h) == y);
  CHECK(forward(m, h.topRows(1)).rows() == 1);
}

TEST_CASE("attention rows sum to one") {
  const Audio2RigModel m = init_model(tiny_config(), 3);
  const ForwardTrace tr = trace_layers(m, testing::random_matrix(11, 16, 4, 3.0));
  REQUIRE(tr.layers.size() == 2);
  for (const auto& layer : tr.layers) {
    REQUIRE(layer.attention.size() == 2);
    for (const auto& a : layer.attention) {
      CHECK(a.rows() == 11);
      CHECK(a.minCoeff() >= 0.0);
      CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    }
  }
  // Inference-mode trace agrees with forward().
  CHECK(tr.output.isApprox(forward(m, tr.hidden), 1e-14));
}

TEST_CASE("permutation equivariance without positional encoding") {
  const Audio2RigModel m = init_model(tiny_config(2, false), 5);
  const Eigen::MatrixXd x = testing::random_matrix(10, 8, 6);
  const EmotionTimeline tl = cycle_labels(10);
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(7);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd xp(10, 8);
  EmotionTimeline tlp(10);
  for (int i = 0; i < 10; ++i) {
    xp.row(i) = x.row(perm[i]);
    tlp[i] = tl[perm[i]];
  }
  const Eigen::MatrixXd y = predict(m, x, tl);
  const Eigen::MatrixXd yp = predict(m, xp, tlp);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) worst = std::max(worst, (yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-6);

  // With positional encoding the same permutation changes the rows.
  const Audio2RigModel with_pe = init_model(tiny_config(2, true), 5);
  const Eigen::MatrixXd z = predict(with_pe, x, tl);
  const Eigen::MatrixXd zp = predict(with_pe, xp, tlp);
  double moved = 0.0;
  for (int i = 0; i < 10; ++i) moved = std::max(moved, (zp.row(i) - z.row(perm[i])).cwiseAbs().maxCoeff());
  CHECK(moved > 1e-6);
}

TEST_CASE("non-finite activations name the layer") {
  Audio2RigModel m = init_model(tiny_config(), 8);
  m.params.layers[1].ff1.weight(0, 0) = std::numeric_limits<double>::infinity();
  try {
    forward(m, testing::random_matrix(3, 16, 9));
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("zeroed emotion pathway makes the output label invariant") {
  Audio2RigModel m = init_model(tiny_config(), 10);
  const Eigen::MatrixXd x = testing::random_matrix(6, 8, 11);
  const EmotionTimeline happy(6, Emotion::Happy), sad(6, Emotion::Sad);
  CHECK_FALSE(predict(m, x, happy).isApprox(predict(m, x, sad)));
  m.params.encoder.emotion.embedding.setZero();
  m.params.encoder.emotion.fc1.bias.setZero();
  m.params.encoder.emotion.fc2.bias.setZero();
  CHECK(predict(m, x, happy) == predict(m, x, sad));
}

TEST_CASE("dropout masks are inverted and seeded") {
  std::mt19937_64 rng(12);
  DropoutSampler d{0.25, &rng};
  const Eigen::MatrixXd mask = d.mask(200, 50);
  const double keep = 1.0 / 0.75;
  CHECK(((mask.array() == 0.0) || (mask.array() == keep)).all());
  CHECK(mask.mean() == doctest::Approx(1.0).epsilon(0.03));
  std::mt19937_64 rng2(12);
  CHECK(DropoutSampler{0.25, &rng2}.mask(200, 50) == mask);
}

TEST_CASE("weight file round trip") {
  testing::TempDir dir;
  Audio2RigModel m = init_model(tiny_config(), 13);
  for (auto& t : tensors(m.params)) {
    *t.value = t.value->unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  }
  m.config.feature_family = "synthetic";
  save_model(dir / "m.emow", m);
  const Audio2RigModel back = load_model(dir / "m.emow");
  CHECK(back.config == m.config);
  const auto a = tensors(std::as_const(m.params));
  const auto b = tensors(std::as_const(back.params));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(*a[i].value == *b[i].value);
  }
  CHECK(file_hash(dir / "m.emow") == file_hash(dir / "m.emow"));
  CHECK(file_hash(dir / "m.emow").size() == 16);

  const auto size = std::filesystem::file_size(dir / "m.emow");
  std::filesystem::copy_file(dir / "m.emow", dir / "cut.emow");
  std::filesystem::resize_file(dir / "cut.emow", size - 4);
  CHECK(error_code_of([&] { load_model(dir / "cut.emow"); }) == ErrorCode::Truncated);
  {
    std::ofstream out(dir / "bad.emow", std::ios::binary);
    out << "NOPE and more";
  }
  CHECK(error_code_of([&] { load_model(dir / "bad.emow"); }) == ErrorCode::BadMagic);
}

TEST_CASE("tensor names are unique and cover every parameter") {
  Audio2RigModel m = init_model(tiny_config(), 14);
  const auto list = tensors(m.params);
  std::set<std::string> names;
  std::size_t count = 0;
  for (const auto& t : list) {
    names.insert(t.name);
    count += static_cast<std::size_t>(t.value->size());
  }
  CHECK(names.size() == list.size());
  CHECK(count == parameter_count(m.params));
  CHECK(names.count("head.weight") == 1);
  CHECK(names.count("encoder.emotion.embedding") == 1);
}

TEST_CASE("chunked inference") {
  const Audio2RigModel m = init_model(tiny_config(), 15);
  FeatureSequence f;
  f.rate_hz = 60.0;
  f.data = testing::random_matrix(40, 8, 16);
  const EmotionTimeline tl = cycle_labels(40);

  SUBCASE("short clips take the single-pass path") {
    InferenceConfig cfg;
    const RigSequence out = infer(m, f, tl, cfg);
    CHECK(out.values == predict(m, f.data, tl));
    CHECK(out.fps == 60.0);
    CHECK(infer(m, f, tl, cfg).values == out.values);
  }

  SUBCASE("constant input agrees across chunk boundaries") {
    const Audio2RigModel flat = init_model(tiny_config(2, false), 17);
    InferenceConfig cfg;
    cfg.chunk_frames = 20;
    cfg.overlap_frames = 5;
    FeatureSequence c;
    c.rate_hz = 60.0;
    c.data = Eigen::MatrixXd::Constant(25, 8, 0.3);
    const EmotionTimeline same(25, Emotion::Angry);
    const RigSequence out = infer(flat, c, same, cfg);
    const Eigen::MatrixXd first = predict(flat, c.data.topRows(20), EmotionTimeline(20, Emotion::Angry));
    const Eigen::MatrixXd second = predict(flat, c.data.bottomRows(10), EmotionTimeline(10, Emotion::Angry));
    for (Eigen::Index t = 15; t < 20; ++t) {
      CHECK((out.values.row(t) - first.row(t)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((out.values.row(t) - second.row(t - 15)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("overlap frames are linear crossfades of the two chunks") {
    InferenceConfig cfg;
    cfg.chunk_frames = 16;
    cfg.overlap_frames = 4;
    const RigSequence out = infer(m, f, tl, cfg);
    CHECK(out.frames() == 40);
    // Chunks start at 0, 12, 24, 36.
    const auto chunk = [&](Eigen::Index s, Eigen::Index len) {
      return predict(m, f.data.middleRows(s, len), EmotionTimeline(tl.begin() + s, tl.begin() + s + len));
    };
    const Eigen::MatrixXd c0 = chunk(0, 16), c1 = chunk(12, 16);
    for (Eigen::Index t = 0; t < 12; ++t) CHECK(out.values.row(t) == c0.row(t));
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double w = (j + 1) / 5.0;
      const Eigen::RowVectorXd expect = (1 - w) * c0.row(12 + j) + w * c1.row(j);
      CHECK((out.values.row(12 + j) - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("50 Hz features are resampled first") {
    FeatureSequence f50;
    f50.data = testing::random_matrix(50, 8, 18);
    CHECK(output_frames(f50) == 60);
    const RigSequence out = infer(m, f50, cycle_labels(60));
    CHECK(out.frames() == 60);
  }

  SUBCASE("errors") {
    CHECK(error_code_of([&] { infer(m, f, cycle_labels(39)); }) == ErrorCode::TimelineMismatch);
    FeatureSequence wide = f;
    wide.data = Eigen::MatrixXd::Zero(40, 9);
    CHECK(error_code_of([&] { infer(m, wide, tl); }) == ErrorCode::ShapeMismatch);
    InferenceConfig bad;
    bad.chunk_frames = 10;
    bad.overlap_frames = 5;
    CHECK(error_code_of([&] { infer(m, f, tl, bad); }) == ErrorCode::InvalidArgument);
  }
}

}  // TEST_SUITE

TEST_SUITE("gradcheck") {

TEST_CASE("one-layer model gradients match finite differences") {
  ModelConfig cfg = tiny_config(1);
  const Audio2RigModel m = init_model(cfg, 21);
  const GradCheckProbe probe = make_probe(m, 4, 22);
  const GradCheckReport r = grad_check(m, probe);
  INFO("worst tensor " << r.worst_tensor);
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.tensors.size() == tensors(m.params).size());
}

TEST_CASE("output head alone is checked to high precision") {
  ModelConfig cfg = tiny_config(0);
  const Audio2RigModel m = init_model(cfg, 23);
  const GradCheckProbe probe = make_probe(m, 5, 24);
  GradCheckOptions opts;
  opts.prefix = "head.";
  const GradCheckReport r = grad_check(m, probe, opts);
  CHECK(r.tensors.size() == 2);
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("zero-loss probe has vanishing gradients") {
  const Audio2RigModel m = init_model(tiny_config(1), 25);
  GradCheckProbe probe = make_probe(m, 4, 26);
  probe.target = predict(m, probe.features, probe.labels);
  const GradCheckReport r = grad_check(m, probe);
  CHECK(r.max_abs_analytic < 1e-12);
  for (const auto& t : r.tensors) CHECK(t.numeric_norm < 1e-8);
}

TEST_CASE("dropout changes the trace and its gradient flows through the masks") {
  ModelConfig cfg = tiny_config(1);
  cfg.dropout = 0.3;
  const Audio2RigModel m = init_model(cfg, 27);
  const GradCheckProbe probe = make_probe(m, 5, 28);
  std::mt19937_64 rng(29);
  const ForwardTrace dropped = trace_forward(m, probe.features, probe.labels, {cfg.dropout, &rng});
  CHECK_FALSE(dropped.output.isApprox(predict(m, probe.features, probe.labels)));

  // Freeze the sampled masks into a deterministic replay and compare the
  // analytic gradient of the head bias with a finite difference.
  ModelParams grads = zeros_like(m.params);
  backward(m, dropped, mse_grad(dropped.output, probe.target), grads);
  Audio2RigModel shifted = m;
  const double eps = 1e-6;
  shifted.params.head.bias(0, 3) += eps;
  std::mt19937_64 rng_a(29), rng_b(29);
  const double up =
      mse_loss(trace_forward(shifted, probe.features, probe.labels, {cfg.dropout, &rng_a}).output, probe.target);
  shifted.params.head.bias(0, 3) -= 2 * eps;
  const double down =
      mse_loss(trace_forward(shifted, probe.features, probe.labels, {cfg.dropout, &rng_b}).output, probe.target);
  CHECK(grads.head.bias(0, 3) == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-6));

  ModelParams grads_ff = zeros_like(m.params);
  backward(m, dropped, mse_grad(dropped.output, probe.target), grads_ff);
  Audio2RigModel s2 = m;
  s2.params.layers[0].ff1.weight(2, 5) += eps;
  std::mt19937_64 r1(29), r2(29);
  const double u2 = mse_loss(trace_forward(s2, probe.features, probe.labels, {cfg.dropout, &r1}).output, probe.target);
  s2.params.layers[0].ff1.weight(2, 5) -= 2 * eps;
  const double d2 = mse_loss(trace_forward(s2, probe.features, probe.labels, {cfg.dropout, &r2}).output, probe.target);
  CHECK(grads_ff.layers[0].ff1.weight(2, 5) == doctest::Approx((u2 - d2) / (2 * eps)).epsilon(1e-5));
}

}  // TEST_SUITE
