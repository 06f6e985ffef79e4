#pragma once

// Regional mean absolute error and left/right symmetry correlation.

#include "rigsynth/rig.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rigsynth {

// Mean over frames x indices of |pred - gt|. Throws ShapeMismatch on differing
// shapes and InvalidArgument on an empty or out-of-range index list.
double mae(const RigSequence& pred, const RigSequence& gt, const std::vector<int>& indices);

struct MaeReport {
  double full = 0.0;
  double mouth = 0.0;
  double eye = 0.0;
  // Per-region MAE and channel count for every region present in the map.
  std::map<Region, double> region;
  std::map<Region, int> region_size;
  Eigen::Index frames = 0;
};

MaeReport mae_report(const RigSequence& pred, const RigSequence& gt, const ControllerMap& map);
std::string mae_report_to_json(const MaeReport& report);

struct LrCorrelation {
  std::vector<int> left;   // map indices of left-side controllers
  std::vector<int> right;  // their right-side counterparts, in map order
  std::vector<std::string> left_names;
  std::vector<std::string> right_names;
  Eigen::MatrixXd matrix;  // left x right Pearson coefficients
  std::vector<bool> left_constant;
  std::vector<bool> right_constant;

  // Entry for left channel i and its own pair.
  double paired(std::size_t i) const;
};

// Pearson coefficient of every left channel against every right channel.
// Entries involving a constant channel are 0 and that channel is flagged.
LrCorrelation lr_correlation(const RigSequence& seq, const ControllerMap& map);

// Header "left,<right names...>" then one row per left controller.
void write_correlation_csv(const std::filesystem::path& path, const LrCorrelation& corr);

}  // namespace rigsynth
