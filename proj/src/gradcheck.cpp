#include "rigsynth/gradcheck.hpp"

#include "rigsynth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rigsynth {

GradCheckProbe make_probe(const Audio2RigModel& model, Eigen::Index frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, kNumEmotions - 1);
  GradCheckProbe p;
  p.features.resize(frames, model.config.feature_dim);
  for (Eigen::Index i = 0; i < p.features.size(); ++i) p.features.data()[i] = normal(rng);
  for (Eigen::Index t = 0; t < frames; ++t) p.labels.push_back(emotion_from_id(label(rng)));
  p.target.resize(frames, model.config.output_dim);
  for (Eigen::Index i = 0; i < p.target.size(); ++i) p.target.data()[i] = 0.5 * normal(rng);
  return p;
}

GradCheckReport grad_check(const Audio2RigModel& model, const GradCheckProbe& probe,
                           const GradCheckOptions& opts) {
  Audio2RigModel work = model;
  work.config.dropout = 0.0;

  const ForwardTrace trace = trace_forward(work, probe.features, probe.labels);
  ModelParams grads = zeros_like(work.params);
  backward(work, trace, mse_grad(trace.output, probe.target), grads);

  auto loss_at = [&]() { return mse_loss(predict(work, probe.features, probe.labels), probe.target); };

  GradCheckReport report;
  auto params = tensors(work.params);
  const auto analytic = tensors(std::as_const(grads));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (opts.prefix && params[i].name.rfind(*opts.prefix, 0) != 0) continue;
    Eigen::MatrixXd& w = *params[i].value;
    const Eigen::MatrixXd& g = *analytic[i].value;
    const Eigen::Index n = w.size();
    const Eigen::Index stride =
        (opts.max_entries > 0 && n > opts.max_entries) ? (n + opts.max_entries - 1) / opts.max_entries : 1;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (Eigen::Index k = 0; k < n; k += stride) {
      double& slot = w.data()[k];
      const double saved = slot;
      slot = saved + opts.eps;
      const double up = loss_at();
      slot = saved - opts.eps;
      const double down = loss_at();
      slot = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = g.data()[k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a));
    }
    TensorGradError e;
    e.name = params[i].name;
    e.analytic_norm = std::sqrt(a2);
    e.numeric_norm = std::sqrt(n2);
    const double scale = std::max({e.analytic_norm, e.numeric_norm, opts.abs_floor});
    e.relative_error = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
    if (e.relative_error >= report.max_relative_error) {
      report.max_relative_error = e.relative_error;
      report.worst_tensor = e.name;
    }
    report.tensors.push_back(std::move(e));
  }
  return report;
}

}  // namespace rigsynth
