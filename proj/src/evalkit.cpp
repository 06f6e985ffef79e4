#include "rigsynth/evalkit.hpp"

#include "rigsynth/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace rigsynth {

double mae(const RigSequence& pred, const RigSequence& gt, const std::vector<int>& indices) {
  if (pred.frames() != gt.frames() || pred.channels() != gt.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "mae needs sequences of equal shape, got " +
                                              std::to_string(pred.frames()) + "x" +
                                              std::to_string(pred.channels()) + " and " +
                                              std::to_string(gt.frames()) + "x" +
                                              std::to_string(gt.channels()));
  }
  if (indices.empty() || pred.frames() == 0) {
    throw Error(ErrorCode::InvalidArgument, "mae over an empty selection");
  }
  double sum = 0.0;
  for (int c : indices) {
    if (c < 0 || c >= pred.channels()) {
      throw Error(ErrorCode::InvalidArgument, "mae channel index out of range: " + std::to_string(c));
    }
    sum += (pred.values.col(c) - gt.values.col(c)).cwiseAbs().sum();
  }
  return sum / (static_cast<double>(pred.frames()) * static_cast<double>(indices.size()));
}

MaeReport mae_report(const RigSequence& pred, const RigSequence& gt, const ControllerMap& map) {
  if (pred.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction width does not match controller map");
  }
  MaeReport r;
  r.frames = pred.frames();
  std::vector<int> all(static_cast<std::size_t>(map.size()));
  for (int i = 0; i < map.size(); ++i) all[i] = i;
  r.full = mae(pred, gt, all);
  r.mouth = mae(pred, gt, region_indices(map, mouth_area()));
  r.eye = mae(pred, gt, region_indices(map, eye_area()));
  for (Region reg : all_regions()) {
    const auto idx = region_indices(map, {reg});
    if (idx.empty()) continue;
    r.region[reg] = mae(pred, gt, idx);
    r.region_size[reg] = static_cast<int>(idx.size());
  }
  return r;
}

std::string mae_report_to_json(const MaeReport& report) {
  nlohmann::ordered_json j{{"full", report.full}, {"mouth", report.mouth}, {"eye", report.eye}};
  nlohmann::ordered_json regions = nlohmann::ordered_json::object();
  for (const auto& [reg, value] : report.region) {
    regions[std::string(to_string(reg))] = {{"mae", value}, {"channels", report.region_size.at(reg)}};
  }
  j["regions"] = std::move(regions);
  j["frames"] = report.frames;
  return j.dump(2) + "\n";
}

double LrCorrelation::paired(std::size_t i) const {
  return matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
}

LrCorrelation lr_correlation(const RigSequence& seq, const ControllerMap& map) {
  if (seq.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rig sequence width does not match controller map");
  }
  LrCorrelation out;
  for (const auto& e : map.entries()) {
    if (e.side != Side::Left || !e.pair) continue;
    out.left.push_back(e.index);
    out.right.push_back(*e.pair);
    out.left_names.push_back(e.name);
    out.right_names.push_back(map.at(*e.pair).name);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(out.left.size());
  out.matrix = Eigen::MatrixXd::Zero(n, n);
  out.left_constant.assign(n, false);
  out.right_constant.assign(n, false);
  if (seq.frames() < 2) {
    out.left_constant.assign(n, true);
    out.right_constant.assign(n, true);
    return out;
  }

  // Centered columns. Identical inputs give identical sums, so corr(x, x) and
  // corr(x, -x) come out as exactly 1 and -1.
  auto centered = [&](const std::vector<int>& idx, std::vector<bool>& constant) {
    Eigen::MatrixXd m(seq.frames(), n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto col = seq.values.col(idx[k]);
      m.col(k) = col.array() - col.mean();
      constant[k] = (col.array() == col(0)).all();
    }
    return m;
  };
  const Eigen::MatrixXd L = centered(out.left, out.left_constant);
  const Eigen::MatrixXd R = centered(out.right, out.right_constant);
  const Eigen::VectorXd ll = L.colwise().squaredNorm();
  const Eigen::VectorXd rr = R.colwise().squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (out.left_constant[i]) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (out.right_constant[j]) continue;
      const double sxy = L.col(i).dot(R.col(j));
      out.matrix(i, j) = std::clamp(sxy / std::sqrt(ll(i) * rr(j)), -1.0, 1.0);
    }
  }
  return out;
}

void write_correlation_csv(const std::filesystem::path& path, const LrCorrelation& corr) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "left";
  for (const auto& name : corr.right_names) out << ',' << name;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < corr.left_names.size(); ++i) {
    out << corr.left_names[i];
    for (Eigen::Index j = 0; j < corr.matrix.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", corr.matrix(static_cast<Eigen::Index>(i), j));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace rigsynth
