#include "rigsynth/encoders.hpp"

#include "rigsynth/error.hpp"

#include <cmath>

namespace rigsynth {

Eigen::MatrixXd apply(const Dense& layer, const Eigen::MatrixXd& x) {
  if (x.cols() != layer.in()) {
    throw Error(ErrorCode::ShapeMismatch, "dense layer expects width " + std::to_string(layer.in()) +
                                              ", got " + std::to_string(x.cols()));
  }
  Eigen::MatrixXd y = x * layer.weight;
  y.rowwise() += layer.bias.row(0);
  return y;
}

Eigen::MatrixXd positional_encoding(Eigen::Index frames, int d_model) {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "positional encoding needs a positive even width");
  }
  if (frames < 1) throw Error(ErrorCode::InvalidArgument, "positional encoding needs frames >= 1");
  Eigen::MatrixXd pe(frames, d_model);
  for (int i = 0; i < d_model / 2; ++i) {
    const double denom = std::pow(10000.0, (2.0 * i) / d_model);
    for (Eigen::Index pos = 0; pos < frames; ++pos) {
      const double angle = static_cast<double>(pos) / denom;
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

PositionalEncodingCache::PositionalEncodingCache(int d_model) : d_model_(d_model) {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "positional encoding needs a positive even width");
  }
}

Eigen::MatrixXd PositionalEncodingCache::table(Eigen::Index frames) const {
  std::lock_guard lock(mutex_);
  if (table_.rows() < frames) {
    Eigen::Index grown = std::max<Eigen::Index>(frames, 2 * table_.rows());
    table_ = positional_encoding(grown, d_model_);
  }
  return table_.topRows(frames);
}

Eigen::MatrixXd encode_content(const Eigen::MatrixXd& features, const EncoderParams& params) {
  if (features.cols() != params.feature_dim()) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature width " + std::to_string(features.cols()) + " does not match encoder width " +
                    std::to_string(params.feature_dim()));
  }
  return apply(params.content_proj, features) +
         positional_encoding(features.rows(), static_cast<int>(params.d_model()));
}

namespace {

Eigen::MatrixXd emotion_forward(const Eigen::MatrixXd& embedded, const EncoderParams& params) {
  Eigen::MatrixXd h = apply(params.emotion.fc1, embedded);
  h = h.unaryExpr([&](double v) { return leaky_relu(v, params.leaky_slope); });
  return apply(params.emotion.fc2, h);
}

}  // namespace

Eigen::RowVectorXd encode_emotion(Emotion label, const EncoderParams& params) {
  const int id = emotion_id(label);
  if (id < 0 || id >= params.emotion.embedding.rows()) {
    throw Error(ErrorCode::InvalidArgument, "emotion label out of range");
  }
  return emotion_forward(params.emotion.embedding.row(id), params).row(0);
}

Eigen::MatrixXd encode_all_emotions(const EncoderParams& params) {
  return emotion_forward(params.emotion.embedding, params);
}

Eigen::MatrixXd combine(const Eigen::MatrixXd& content, const Eigen::RowVectorXd& emotion) {
  if (content.cols() != emotion.size()) {
    throw Error(ErrorCode::ShapeMismatch, "emotion width does not match content width");
  }
  Eigen::MatrixXd out = content;
  out.rowwise() += emotion;
  return out;
}

Eigen::MatrixXd combine(const Eigen::MatrixXd& content, const Eigen::MatrixXd& emotion_table,
                        const EmotionTimeline& labels) {
  if (content.cols() != emotion_table.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "emotion width does not match content width");
  }
  if (static_cast<Eigen::Index>(labels.size()) != content.rows()) {
    throw Error(ErrorCode::TimelineMismatch, "emotion timeline has " + std::to_string(labels.size()) +
                                                 " labels for " + std::to_string(content.rows()) +
                                                 " frames");
  }
  Eigen::MatrixXd out = content;
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    out.row(t) += emotion_table.row(emotion_id(labels[t]));
  }
  return out;
}

}  // namespace rigsynth
