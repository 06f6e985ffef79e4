#include "rigsynth/model.hpp"

#include "rigsynth/error.hpp"

#include <algorithm>
#include <cmath>

namespace rigsynth {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (feature_dim < 1) fail("feature_dim must be positive");
  if (d_model < 2 || d_model % 2 != 0) fail("d_model must be a positive even number");
  if (heads < 1 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (d_ff < 1) fail("d_ff must be positive");
  if (layers < 0) fail("layers must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (output_dim < 1) fail("output_dim must be positive");
}

namespace {

template <typename Params, typename Out>
void collect(Params& p, Out& out) {
  auto add = [&](std::string name, auto& m) { out.push_back({std::move(name), &m}); };
  auto dense = [&](const std::string& prefix, auto& d) {
    add(prefix + ".weight", d.weight);
    add(prefix + ".bias", d.bias);
  };
  dense("encoder.content_proj", p.encoder.content_proj);
  add("encoder.emotion.embedding", p.encoder.emotion.embedding);
  dense("encoder.emotion.fc1", p.encoder.emotion.fc1);
  dense("encoder.emotion.fc2", p.encoder.emotion.fc2);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    dense(pre + "attn.query", l.query);
    dense(pre + "attn.key", l.key);
    dense(pre + "attn.value", l.value);
    dense(pre + "attn.out", l.out);
    dense(pre + "ff1", l.ff1);
    dense(pre + "ff2", l.ff2);
    add(pre + "norm1.gamma", l.norm1.gamma);
    add(pre + "norm1.beta", l.norm1.beta);
    add(pre + "norm2.gamma", l.norm2.gamma);
    add(pre + "norm2.beta", l.norm2.beta);
  }
  dense("head", p.head);
}

Dense make_dense(Eigen::Index in, Eigen::Index out, std::mt19937_64* rng_ptr) {
  Dense d(in, out);
  if (!rng_ptr) return d;
  auto& rng = *rng_ptr;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias.data()[i] = u(rng);
  return d;
}

LayerNorm make_norm(Eigen::Index d) {
  return {Eigen::MatrixXd::Ones(1, d), Eigen::MatrixXd::Zero(1, d)};
}

struct NormResult {
  Eigen::MatrixXd out;
  Eigen::MatrixXd xhat;
  Eigen::VectorXd inv_std;
};

NormResult layer_norm(const Eigen::MatrixXd& x, const LayerNorm& p) {
  NormResult r;
  const double n = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().sum() / n;
  r.xhat = x.colwise() - mean;
  const Eigen::VectorXd var = r.xhat.rowwise().squaredNorm() / n;
  r.inv_std = (var.array() + kLayerNormEps).rsqrt();
  r.xhat = r.inv_std.asDiagonal() * r.xhat;
  r.out = r.xhat.array().rowwise() * p.gamma.row(0).array();
  r.out.rowwise() += p.beta.row(0);
  return r;
}

// Returns dx; accumulates into gamma/beta grads.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std, const LayerNorm& p,
                                    LayerNorm& g) {
  g.gamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  g.beta += dy.colwise().sum();
  const double n = static_cast<double>(dy.cols());
  const Eigen::MatrixXd dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  const Eigen::VectorXd mean_d = dxhat.rowwise().sum() / n;
  const Eigen::VectorXd mean_dx = (dxhat.array() * xhat.array()).rowwise().sum() / n;
  Eigen::MatrixXd dx = dxhat.colwise() - mean_d;
  dx.array() -= xhat.array().colwise() * mean_dx.array();
  return inv_std.asDiagonal() * dx;
}

void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

// dx for y = x W + b, accumulating dW and db.
Eigen::MatrixXd dense_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy, const Dense& p,
                               Dense& g) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum();
  return dy * p.weight.transpose();
}

void check_finite(const Eigen::MatrixXd& m, const std::string& where) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFinite, "non-finite activations in " + where);
}

LayerTrace layer_forward(const EncoderLayer& p, const Eigen::MatrixXd& x, int heads,
                         const DropoutSampler& dropout) {
  LayerTrace tr;
  const Eigen::Index T = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  tr.input = x;
  tr.q = apply(p.query, x);
  tr.k = apply(p.key, x);
  tr.v = apply(p.value, x);
  tr.context.resize(T, d);
  tr.attention.resize(heads);
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * dk, dk);
    Eigen::MatrixXd s = (tr.q(Eigen::all, cols) * tr.k(Eigen::all, cols).transpose()) * scale;
    softmax_rows(s);
    tr.context(Eigen::all, cols) = s * tr.v(Eigen::all, cols);
    tr.attention[h] = std::move(s);
  }
  tr.attn_out = apply(p.out, tr.context);
  Eigen::MatrixXd r1 = x;
  if (dropout.active()) {
    tr.drop_attn = dropout.mask(T, d);
    r1 += tr.attn_out.cwiseProduct(tr.drop_attn);
  } else {
    r1 += tr.attn_out;
  }
  NormResult n1 = layer_norm(r1, p.norm1);
  tr.norm1_xhat = std::move(n1.xhat);
  tr.norm1_inv_std = std::move(n1.inv_std);
  tr.norm1_out = std::move(n1.out);

  tr.ff_pre = apply(p.ff1, tr.norm1_out);
  tr.ff_hidden = tr.ff_pre.cwiseMax(0.0);
  if (dropout.active()) {
    tr.drop_ff = dropout.mask(T, tr.ff_pre.cols());
    tr.ff_hidden = tr.ff_hidden.cwiseProduct(tr.drop_ff);
  }
  tr.ff_out = apply(p.ff2, tr.ff_hidden);
  Eigen::MatrixXd r2 = tr.norm1_out;
  if (dropout.active()) {
    tr.drop_res = dropout.mask(T, d);
    r2 += tr.ff_out.cwiseProduct(tr.drop_res);
  } else {
    r2 += tr.ff_out;
  }
  NormResult n2 = layer_norm(r2, p.norm2);
  tr.norm2_xhat = std::move(n2.xhat);
  tr.norm2_inv_std = std::move(n2.inv_std);
  tr.output = std::move(n2.out);
  return tr;
}

Eigen::MatrixXd layer_backward(const EncoderLayer& p, const LayerTrace& tr, const Eigen::MatrixXd& dout,
                               int heads, EncoderLayer& g) {
  const Eigen::Index d = tr.input.cols();
  const Eigen::Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  const Eigen::MatrixXd dr2 =
      layer_norm_backward(dout, tr.norm2_xhat, tr.norm2_inv_std, p.norm2, g.norm2);
  Eigen::MatrixXd dy1 = dr2;
  const Eigen::MatrixXd dff_out = tr.drop_res.size() ? dr2.cwiseProduct(tr.drop_res) : dr2;
  Eigen::MatrixXd dff_hidden = dense_backward(tr.ff_hidden, dff_out, p.ff2, g.ff2);
  if (tr.drop_ff.size()) dff_hidden = dff_hidden.cwiseProduct(tr.drop_ff);
  const Eigen::MatrixXd dff_pre =
      dff_hidden.cwiseProduct((tr.ff_pre.array() > 0.0).cast<double>().matrix());
  dy1 += dense_backward(tr.norm1_out, dff_pre, p.ff1, g.ff1);

  const Eigen::MatrixXd dr1 =
      layer_norm_backward(dy1, tr.norm1_xhat, tr.norm1_inv_std, p.norm1, g.norm1);
  Eigen::MatrixXd dx = dr1;
  const Eigen::MatrixXd dattn_out = tr.drop_attn.size() ? dr1.cwiseProduct(tr.drop_attn) : dr1;
  const Eigen::MatrixXd dcontext = dense_backward(tr.context, dattn_out, p.out, g.out);

  Eigen::MatrixXd dq(tr.q.rows(), d), dkm(tr.k.rows(), d), dv(tr.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * dk, dk);
    const Eigen::MatrixXd& a = tr.attention[h];
    const Eigen::MatrixXd dctx = dcontext(Eigen::all, cols);
    const Eigen::MatrixXd da = dctx * tr.v(Eigen::all, cols).transpose();
    dv(Eigen::all, cols) = a.transpose() * dctx;
    const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    const Eigen::MatrixXd ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq(Eigen::all, cols) = ds * tr.k(Eigen::all, cols);
    dkm(Eigen::all, cols) = ds.transpose() * tr.q(Eigen::all, cols);
  }
  dx += dense_backward(tr.input, dq, p.query, g.query);
  dx += dense_backward(tr.input, dkm, p.key, g.key);
  dx += dense_backward(tr.input, dv, p.value, g.value);
  return dx;
}

}  // namespace

std::vector<NamedTensor> tensors(ModelParams& params) {
  std::vector<NamedTensor> out;
  collect(params, out);
  return out;
}

std::vector<ConstNamedTensor> tensors(const ModelParams& params) {
  std::vector<ConstNamedTensor> out;
  collect(params, out);
  return out;
}

namespace {

Audio2RigModel build_model(const ModelConfig& config, std::mt19937_64* rng) {
  config.validate();
  Audio2RigModel m;
  m.config = config;
  const Eigen::Index d = config.d_model;
  auto& enc = m.params.encoder;
  enc.leaky_slope = config.leaky_slope;
  enc.content_proj = make_dense(config.feature_dim, d, rng);
  enc.emotion.embedding = Eigen::MatrixXd::Zero(kNumEmotions, d);
  if (rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < enc.emotion.embedding.size(); ++i) {
      enc.emotion.embedding.data()[i] = normal(*rng);
    }
  }
  enc.emotion.fc1 = make_dense(d, d, rng);
  enc.emotion.fc2 = make_dense(d, d, rng);
  for (int i = 0; i < config.layers; ++i) {
    EncoderLayer l;
    l.query = make_dense(d, d, rng);
    l.key = make_dense(d, d, rng);
    l.value = make_dense(d, d, rng);
    l.out = make_dense(d, d, rng);
    l.ff1 = make_dense(d, config.d_ff, rng);
    l.ff2 = make_dense(config.d_ff, d, rng);
    l.norm1 = make_norm(d);
    l.norm2 = make_norm(d);
    m.params.layers.push_back(std::move(l));
  }
  m.params.head = make_dense(d, config.output_dim, rng);
  return m;
}

}  // namespace

Audio2RigModel init_model(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_model(config, &rng);
}

Audio2RigModel zero_model(const ModelConfig& config) { return build_model(config, nullptr); }

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& t : tensors(z)) t.value->setZero();
  return z;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& t : tensors(params)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

Eigen::MatrixXd DropoutSampler::mask(Eigen::Index rows, Eigen::Index cols) const {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : 0.0;
  return m;
}

Eigen::MatrixXd forward(const Audio2RigModel& model, const Eigen::MatrixXd& hidden) {
  if (hidden.rows() < 1) throw Error(ErrorCode::ShapeMismatch, "forward needs at least one frame");
  if (hidden.cols() != model.config.d_model) {
    throw Error(ErrorCode::ShapeMismatch, "hidden width does not match d_model");
  }
  Eigen::MatrixXd x = hidden;
  for (std::size_t i = 0; i < model.params.layers.size(); ++i) {
    x = layer_forward(model.params.layers[i], x, model.config.heads, {}).output;
    check_finite(x, "encoder layer " + std::to_string(i));
  }
  Eigen::MatrixXd y = apply(model.params.head, x);
  check_finite(y, "output head");
  return y;
}

namespace {

Eigen::MatrixXd combined_input(const Audio2RigModel& model, const Eigen::MatrixXd& features,
                               const EmotionTimeline& labels, Eigen::MatrixXd* emotion_pre,
                               Eigen::MatrixXd* emotion_act) {
  const auto& enc = model.params.encoder;
  if (features.cols() != model.config.feature_dim) {
    throw Error(ErrorCode::ShapeMismatch, "feature width " + std::to_string(features.cols()) +
                                              " does not match model width " +
                                              std::to_string(model.config.feature_dim));
  }
  Eigen::MatrixXd content = apply(enc.content_proj, features);
  if (model.config.positional_encoding) {
    content += positional_encoding(features.rows(), model.config.d_model);
  }
  Eigen::MatrixXd pre = apply(enc.emotion.fc1, enc.emotion.embedding);
  Eigen::MatrixXd act = pre.unaryExpr([&](double v) { return leaky_relu(v, enc.leaky_slope); });
  const Eigen::MatrixXd table = apply(enc.emotion.fc2, act);
  if (emotion_pre) *emotion_pre = std::move(pre);
  if (emotion_act) *emotion_act = std::move(act);
  return combine(content, table, labels);
}

}  // namespace

Eigen::MatrixXd predict(const Audio2RigModel& model, const Eigen::MatrixXd& features,
                        const EmotionTimeline& labels) {
  return forward(model, combined_input(model, features, labels, nullptr, nullptr));
}

ForwardTrace trace_layers(const Audio2RigModel& model, const Eigen::MatrixXd& hidden,
                          const DropoutSampler& dropout) {
  ForwardTrace tr;
  tr.hidden = hidden;
  Eigen::MatrixXd x = hidden;
  for (const auto& layer : model.params.layers) {
    tr.layers.push_back(layer_forward(layer, x, model.config.heads, dropout));
    x = tr.layers.back().output;
  }
  tr.output = apply(model.params.head, x);
  return tr;
}

ForwardTrace trace_forward(const Audio2RigModel& model, const Eigen::MatrixXd& features,
                           const EmotionTimeline& labels, const DropoutSampler& dropout) {
  Eigen::MatrixXd pre, act;
  Eigen::MatrixXd hidden = combined_input(model, features, labels, &pre, &act);
  ForwardTrace tr = trace_layers(model, hidden, dropout);
  tr.features = features;
  tr.labels = labels;
  tr.emotion_pre = std::move(pre);
  tr.emotion_act = std::move(act);
  return tr;
}

void backward(const Audio2RigModel& model, const ForwardTrace& tr, const Eigen::MatrixXd& d_output,
              ModelParams& grads) {
  const auto& p = model.params;
  const Eigen::MatrixXd& last = tr.layers.empty() ? tr.hidden : tr.layers.back().output;
  Eigen::MatrixXd dx = dense_backward(last, d_output, p.head, grads.head);
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    dx = layer_backward(p.layers[i], tr.layers[i], dx, model.config.heads, grads.layers[i]);
  }
  if (tr.features.size() == 0) return;

  auto& enc_g = grads.encoder;
  const auto& enc = p.encoder;
  dense_backward(tr.features, dx, enc.content_proj, enc_g.content_proj);

  Eigen::MatrixXd d_table = Eigen::MatrixXd::Zero(kNumEmotions, dx.cols());
  for (Eigen::Index t = 0; t < dx.rows(); ++t) d_table.row(emotion_id(tr.labels[t])) += dx.row(t);
  Eigen::MatrixXd d_act = dense_backward(tr.emotion_act, d_table, enc.emotion.fc2, enc_g.emotion.fc2);
  const Eigen::MatrixXd d_pre = d_act.cwiseProduct(
      tr.emotion_pre.unaryExpr([&](double v) { return v > 0.0 ? 1.0 : enc.leaky_slope; }));
  enc_g.emotion.embedding +=
      dense_backward(enc.emotion.embedding, d_pre, enc.emotion.fc1, enc_g.emotion.fc1);
}

void InferenceConfig::validate() const {
  if (overlap_frames < 0 || chunk_frames <= 2 * overlap_frames) {
    throw Error(ErrorCode::InvalidArgument, "inference needs chunk_frames > 2 * overlap_frames >= 0");
  }
}

Eigen::Index output_frames(const FeatureSequence& features) {
  if (features.rate_hz == kRigFps) return features.frames();
  return std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(features.frames() * kRigFps / features.rate_hz)));
}

RigSequence infer(const Audio2RigModel& model, const FeatureSequence& features,
                  const EmotionTimeline& timeline, const InferenceConfig& cfg) {
  cfg.validate();
  validate(features);
  if (features.width() != model.config.feature_dim) {
    throw Error(ErrorCode::ShapeMismatch, "feature width " + std::to_string(features.width()) +
                                              " does not match model width " +
                                              std::to_string(model.config.feature_dim));
  }
  const FeatureSequence rig_rate =
      features.rate_hz == kRigFps ? features : resample_features(features, kRigFps);
  const Eigen::Index T = rig_rate.frames();
  if (static_cast<Eigen::Index>(timeline.size()) != T) {
    throw Error(ErrorCode::TimelineMismatch, "emotion timeline has " + std::to_string(timeline.size()) +
                                                 " labels but the clip has " + std::to_string(T) +
                                                 " frames at 60 fps");
  }

  auto run = [&](Eigen::Index start, Eigen::Index len) {
    const EmotionTimeline labels(timeline.begin() + start, timeline.begin() + start + len);
    return predict(model, rig_rate.data.middleRows(start, len), labels);
  };

  if (T <= cfg.chunk_frames) return RigSequence(run(0, T));

  const Eigen::Index chunk = cfg.chunk_frames;
  const Eigen::Index overlap = cfg.overlap_frames;
  const Eigen::Index stride = chunk - overlap;
  Eigen::MatrixXd out(T, model.config.output_dim);
  Eigen::Index start = 0;
  Eigen::Index written_end = 0;
  while (true) {
    const Eigen::Index len = std::min(chunk, T - start);
    const Eigen::MatrixXd y = run(start, len);
    // Frames [start, written_end) overlap the previous chunk.
    const Eigen::Index blend = written_end - start;
    for (Eigen::Index j = 0; j < blend; ++j) {
      const double w = static_cast<double>(j + 1) / static_cast<double>(blend + 1);
      out.row(start + j) = (1.0 - w) * out.row(start + j) + w * y.row(j);
    }
    out.middleRows(start + blend, len - blend) = y.bottomRows(len - blend);
    written_end = start + len;
    if (written_end >= T) break;
    start += stride;
  }
  return RigSequence(std::move(out));
}

}  // namespace rigsynth
