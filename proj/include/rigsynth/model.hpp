#pragma once

// Transformer-encoder regression from combined encodings to rig controller
// values, with a recorded forward pass and reverse-mode gradients.

#include "rigsynth/encoders.hpp"
#include "rigsynth/features.hpp"
#include "rigsynth/rig.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rigsynth {

inline constexpr int kEncoderLayers = 10;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int feature_dim = kReferenceFeatureDim;
  int d_model = kModelWidth;
  int heads = 8;
  int d_ff = 2048;
  int layers = kEncoderLayers;
  double dropout = 0.1;
  double leaky_slope = kLeakySlope;
  int output_dim = kNumControllers;
  bool positional_encoding = true;
  std::string feature_family = kExternalFamily;

  // Throws InvalidArgument on inconsistent sizes (d_model odd or not
  // divisible by heads, negative layer count, dropout outside [0, 1)).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerNorm {
  Eigen::MatrixXd gamma;  // 1 x d
  Eigen::MatrixXd beta;   // 1 x d
};

// Post-norm layer: x = norm1(x + attn(x)); x = norm2(x + ff(x)), ReLU inside ff.
struct EncoderLayer {
  Dense query, key, value, out;
  Dense ff1, ff2;
  LayerNorm norm1, norm2;
};

struct ModelParams {
  EncoderParams encoder;
  std::vector<EncoderLayer> layers;
  Dense head;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd* value;
};
struct ConstNamedTensor {
  std::string name;
  const Eigen::MatrixXd* value;
};

// Every learnable tensor in a fixed order ("encoder.content_proj.weight", ...).
std::vector<NamedTensor> tensors(ModelParams& params);
std::vector<ConstNamedTensor> tensors(const ModelParams& params);

struct Audio2RigModel {
  ModelConfig config;
  ModelParams params;
};

// Seeded initialization: dense weights and biases ~ U(-1/sqrt(in), 1/sqrt(in)),
// embedding ~ N(0, 1), layer norms at identity.
Audio2RigModel init_model(const ModelConfig& config, std::uint64_t seed);
// Every tensor zero, including layer-norm gains.
Audio2RigModel zero_model(const ModelConfig& config);
// Same shapes, every tensor zero.
ModelParams zeros_like(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

// Encoder stack and output head over an already combined T x d_model input.
// Dropout is off. Throws NonFinite naming the layer that produced it.
Eigen::MatrixXd forward(const Audio2RigModel& model, const Eigen::MatrixXd& hidden);

// Content + emotion encoding, then forward(). Positions start at zero.
Eigen::MatrixXd predict(const Audio2RigModel& model, const Eigen::MatrixXd& features,
                        const EmotionTimeline& labels);

// Recorded forward pass for training and gradient checks.

struct DropoutSampler {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
  // Inverted dropout mask: 0 or 1/(1-rate).
  Eigen::MatrixXd mask(Eigen::Index rows, Eigen::Index cols) const;
};

struct LayerTrace {
  Eigen::MatrixXd input;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attention;  // per head, T x T, rows sum to 1
  Eigen::MatrixXd context;
  Eigen::MatrixXd attn_out;
  Eigen::MatrixXd drop_attn;  // empty when dropout is off
  Eigen::MatrixXd norm1_xhat;
  Eigen::VectorXd norm1_inv_std;
  Eigen::MatrixXd norm1_out;
  Eigen::MatrixXd ff_pre;
  Eigen::MatrixXd drop_ff;
  Eigen::MatrixXd ff_hidden;
  Eigen::MatrixXd ff_out;
  Eigen::MatrixXd drop_res;
  Eigen::MatrixXd norm2_xhat;
  Eigen::VectorXd norm2_inv_std;
  Eigen::MatrixXd output;
};

struct ForwardTrace {
  Eigen::MatrixXd features;
  EmotionTimeline labels;
  Eigen::MatrixXd emotion_pre;  // kNumEmotions x d, fc1 output before activation
  Eigen::MatrixXd emotion_act;
  Eigen::MatrixXd hidden;       // combined encoder input
  std::vector<LayerTrace> layers;
  Eigen::MatrixXd output;       // T x output_dim
};

ForwardTrace trace_forward(const Audio2RigModel& model, const Eigen::MatrixXd& features,
                           const EmotionTimeline& labels, const DropoutSampler& dropout = {});

// Runs the encoder stack alone on a combined input.
ForwardTrace trace_layers(const Audio2RigModel& model, const Eigen::MatrixXd& hidden,
                          const DropoutSampler& dropout = {});

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
// Traces from trace_layers() only propagate into layer and head tensors.
void backward(const Audio2RigModel& model, const ForwardTrace& trace,
              const Eigen::MatrixXd& d_output, ModelParams& grads);

struct InferenceConfig {
  int chunk_frames = 600;
  int overlap_frames = 60;
  std::uint64_t deterministic_seed = 0;

  void validate() const;
};

// Resamples features to 60 fps when needed, then predicts chunk by chunk
// with linear crossfades over the overlaps.
RigSequence infer(const Audio2RigModel& model, const FeatureSequence& features,
                  const EmotionTimeline& timeline, const InferenceConfig& cfg = {});

// Number of output frames infer() will produce for these features.
Eigen::Index output_frames(const FeatureSequence& features);

// Weight file: "EMOW", u32 version (1), u32 header length, UTF-8 JSON header
// (config, feature family, feature width, tensor manifest of name/shape/byte
// offset), then little-endian f32 payloads.
void save_model(const std::filesystem::path& path, const Audio2RigModel& model);
Audio2RigModel load_model(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

// FNV-1a 64 of the file bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace rigsynth
