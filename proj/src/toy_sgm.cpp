#include "scone/toy_sgm.hpp"

#include "scone/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace scone {

ToySgmReport run_toy_sgm(const ToySgmOptions& opt, const TrajectoryObserver& observer) {
  Rng rng(opt.seed);
  const SdeSchedule schedule(opt.sigma_min, opt.sigma_max, opt.total_steps, opt.total_steps);
  ScoreNetParams params(ScoreNetConfig{2, opt.outer_dim, opt.inner_dim, opt.time_dim});
  params.init(rng);
  Adam adam(static_cast<std::size_t>(params.values().size()), AdamConfig{opt.learning_rate});

  const double sd = std::sqrt(opt.variance);
  auto draw_data = [&](int n) {
    RowMatrix x = standard_normal(n, 2, rng) * sd;
    x.col(0).array() += opt.mean_x;
    x.col(1).array() += opt.mean_y;
    return x;
  };

  ToySgmReport report;
  double running = 0.0;
  for (int it = 0; it < opt.iterations; ++it) {
    // cosine decay down to final_lr_fraction of the base rate
    const double progress = static_cast<double>(it) / std::max(1, opt.iterations - 1);
    const double frac = opt.final_lr_fraction +
                        (1.0 - opt.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress));
    adam.set_learning_rate(opt.learning_rate * frac);
    const auto dsm = dsm_loss(params, draw_data(opt.batch_size), schedule, rng);
    running = it == 0 ? dsm.loss : 0.98 * running + 0.02 * dsm.loss;
    adam.step({params.values().data(), static_cast<std::size_t>(params.values().size())},
              {dsm.grad.data(), static_cast<std::size_t>(dsm.grad.size())});
  }
  report.final_dsm_loss = running;

  // the prior at step T is N(0, σ_max²) up to the negligible σ_min² term
  RowMatrix start = standard_normal(opt.samples, 2, rng) * opt.sigma_max;
  const RowMatrix out = reverse_sample(std::move(start), opt.total_steps, params, schedule, rng, observer);

  const Eigen::RowVector2d mean = out.colwise().mean();
  const RowMatrix centered = out.rowwise() - mean;
  report.target_mean[0] = opt.mean_x;
  report.target_mean[1] = opt.mean_y;
  report.sample_mean[0] = mean(0);
  report.sample_mean[1] = mean(1);
  report.target_trace = 2.0 * opt.variance;
  report.sample_trace = centered.squaredNorm() / static_cast<double>(opt.samples - 1);
  report.mean_error = std::hypot(mean(0) - opt.mean_x, mean(1) - opt.mean_y);
  report.trace_error = std::abs(report.sample_trace - report.target_trace) / report.target_trace;
  report.passed = std::isfinite(report.mean_error) && std::isfinite(report.trace_error) &&
                  report.mean_error < opt.mean_tolerance && report.trace_error < opt.trace_tolerance;
  return report;
}

void write_toy_report(const ToySgmReport& r, std::ostream& out) {
  out << "metric,value\n";
  auto row = [&](const char* name, double v) { out << fmt::format("{},{:.10g}\n", name, v); };
  row("target_mean_x", r.target_mean[0]);
  row("target_mean_y", r.target_mean[1]);
  row("sample_mean_x", r.sample_mean[0]);
  row("sample_mean_y", r.sample_mean[1]);
  row("target_cov_trace", r.target_trace);
  row("sample_cov_trace", r.sample_trace);
  row("mean_error", r.mean_error);
  row("cov_trace_rel_error", r.trace_error);
  row("final_dsm_loss", r.final_dsm_loss);
  out << "status," << (r.passed ? "PASS" : "FAIL") << "\n";
}

}  // namespace scone
