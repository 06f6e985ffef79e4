#pragma once

// Supervised training of the regression model: MSE loss, Adam, StepLR, and a
// synthetic dataset for desk-scale runs.

#include "rigsynth/model.hpp"
#include "rigsynth/rig.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace rigsynth {

// Mean over all entries of the squared difference.
double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
// d(mse)/d(pred).
Eigen::MatrixXd mse_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

// lr0 * gamma^floor(epoch / step_size)
double steplr(double lr0, int step_size, double gamma, int epoch);

struct TrainConfig {
  double lr0 = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int step_size = 100;
  double gamma = 0.995;
  int epochs = 3000;
  int batch = 8;  // clips per optimizer step
  std::uint64_t seed = 0;
  // Stop once evaluate() on the training data falls below this (checked
  // only after epochs whose running loss already did); 0 disables.
  double target_loss = 0.0;

  void validate() const;
};

class Adam {
 public:
  Adam(const ModelParams& like, double beta1, double beta2, double eps);

  // One bias-corrected update of every tensor.
  void step(ModelParams& params, const ModelParams& grads, double lr);
  long steps() const { return t_; }

 private:
  ModelParams m_;
  ModelParams v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainingItem {
  Eigen::MatrixXd features;  // T x F at 60 fps
  Emotion emotion = Emotion::Neutral;
  Eigen::MatrixXd target;    // T x 174
};

// target = amplitude * tanh(features * projection + bias + offsets[emotion])
struct SyntheticGroundTruth {
  Eigen::MatrixXd projection;       // F x 174, entries ~ N(0, 0.25/F)
  Eigen::RowVectorXd bias;          // ~ U(-0.2, 0.2)
  Eigen::MatrixXd emotion_offsets;  // 7 x 174, entries ~ N(0, 0.3^2)
  double amplitude = 0.8;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& features, Emotion emotion) const;
};

struct Dataset {
  std::vector<TrainingItem> items;
  std::string feature_family = kSyntheticFamily;

  int feature_dim() const { return items.empty() ? 0 : static_cast<int>(items.front().features.cols()); }
};

struct SyntheticDataset : Dataset {
  std::uint64_t seed = 0;
  SyntheticGroundTruth truth;
};

// Features are per-dimension sums of two random sinusoids (0.5-3 Hz at
// 60 fps); emotions cycle through all seven labels; lengths ~ U{t_min..t_max}.
SyntheticDataset gen_synthetic(std::uint64_t seed, int n_items, int t_min, int t_max, int feature_dim);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean clip MSE over the epoch, before that epoch's updates
};

struct TrainResult {
  std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Adam with StepLR over shuffled clip batches. Dropout follows the model
// config. Throws Divergence when the loss stops being finite.
TrainResult train(Audio2RigModel& model, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Mean clip MSE in inference mode.
double evaluate(const Audio2RigModel& model, const Dataset& data);

// Manifest JSON: {"feature_family": ..., "items": [{"features", "targets",
// "emotion"}]} with paths relative to the manifest, or {"synthetic": {"seed",
// "n_items", "t_min", "t_max", "feature_dim"}}.
Dataset load_manifest(const std::filesystem::path& path, const ControllerMap& map);

// Writes features (EMOF), targets (rig CSV) and a manifest into `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& data, const ControllerMap& map);

// Loss curve CSV: epoch,lr,loss
void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

// Train config JSON: {"model": {...}, "train": {...}}; missing keys keep defaults.
struct TrainingSetup {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
};
TrainingSetup load_training_setup(const std::filesystem::path& path);

}  // namespace rigsynth
