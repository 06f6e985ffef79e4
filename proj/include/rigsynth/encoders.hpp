#pragma once

// Content and emotion encoders that build the transformer input.

#include "rigsynth/rig.hpp"

#include <Eigen/Dense>

#include <mutex>

namespace rigsynth {

inline constexpr int kModelWidth = 512;
inline constexpr double kLeakySlope = 0.2;

// y = x * weight + bias, rows are frames. weight is in x out, bias is 1 x out.
struct Dense {
  Eigen::MatrixXd weight;
  Eigen::MatrixXd bias;

  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out)
      : weight(Eigen::MatrixXd::Zero(in, out)), bias(Eigen::MatrixXd::Zero(1, out)) {}

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }
};

Eigen::MatrixXd apply(const Dense& layer, const Eigen::MatrixXd& x);

struct EmotionEncoderParams {
  Eigen::MatrixXd embedding;  // kNumEmotions x embed width
  Dense fc1;
  Dense fc2;
};

struct EncoderParams {
  Dense content_proj;  // F -> d_model
  EmotionEncoderParams emotion;
  double leaky_slope = kLeakySlope;

  Eigen::Index d_model() const { return content_proj.out(); }
  Eigen::Index feature_dim() const { return content_proj.in(); }
};

inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
Eigen::MatrixXd positional_encoding(Eigen::Index frames, int d_model);

// Grows on demand; rows are bit-identical to positional_encoding().
class PositionalEncodingCache {
 public:
  explicit PositionalEncodingCache(int d_model);
  // First `frames` rows of the table.
  Eigen::MatrixXd table(Eigen::Index frames) const;
  int d_model() const { return d_model_; }

 private:
  int d_model_;
  mutable std::mutex mutex_;
  mutable Eigen::MatrixXd table_;
};

// affine(features) + PE, rowwise.
Eigen::MatrixXd encode_content(const Eigen::MatrixXd& features, const EncoderParams& params);

// fc2(leaky_relu(fc1(embedding[label]))).
Eigen::RowVectorXd encode_emotion(Emotion label, const EncoderParams& params);

// All seven emotion encodings, one row per label id.
Eigen::MatrixXd encode_all_emotions(const EncoderParams& params);

// Adds the emotion vector to every content row.
Eigen::MatrixXd combine(const Eigen::MatrixXd& content, const Eigen::RowVectorXd& emotion);
// Per-frame variant: row t receives emotions.row(labels[t]).
Eigen::MatrixXd combine(const Eigen::MatrixXd& content, const Eigen::MatrixXd& emotion_table,
                        const EmotionTimeline& labels);

}  // namespace rigsynth
