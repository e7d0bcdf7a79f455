#include "scone/sampler.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace scone {

ScoreFn network_score(const ScoreNetParams& params) {
  return [&params](const RowMatrix& e, double sigma) {
    return score_forward(params, e, std::span<const double>(&sigma, 1));
  };
}

void reverse_step(RowMatrix& e, int step, const ScoreFn& score, const SdeSchedule& schedule,
                  const RowMatrix& noise) {
  if (step < 0 || step >= schedule.total_steps())
    throw std::out_of_range("reverse step " + std::to_string(step) + " outside [0, T)");
  const double dvar = schedule.step_variance(step);
  e += dvar * score(e, schedule.sigma_at(step + 1));
  e += std::sqrt(dvar) * noise;
}

void reverse_step(RowMatrix& e, int step, const ScoreNetParams& params,
                  const SdeSchedule& schedule, const RowMatrix& noise) {
  reverse_step(e, step, network_score(params), schedule, noise);
}

void reverse_step(RowMatrix& e, int step, const ScoreNetParams& params,
                  const SdeSchedule& schedule, Rng& rng) {
  reverse_step(e, step, network_score(params), schedule, standard_normal(e.rows(), e.cols(), rng));
}

RowMatrix reverse_sample(RowMatrix e, int from_step, const ScoreFn& score, const SdeSchedule& schedule,
                         Rng& rng, const TrajectoryObserver& observer) {
  if (observer) observer(from_step, e);
  for (int i = from_step - 1; i >= 0; --i) {
    reverse_step(e, i, score, schedule, standard_normal(e.rows(), e.cols(), rng));
    if (observer) observer(i, e);
  }
  return e;
}

RowMatrix reverse_sample(RowMatrix e, int from_step, const ScoreNetParams& params,
                         const SdeSchedule& schedule, Rng& rng, const TrajectoryObserver& observer) {
  return reverse_sample(std::move(e), from_step, network_score(params), schedule, rng, observer);
}

ViewPair generate_views(const RowMatrix& e0, const ScoreFn& score, const SdeSchedule& schedule,
                        Rng& rng, const TrajectoryObserver& observer) {
  const int n = schedule.sampling_steps();
  ViewPair views;
  views.view_a = n == 0 ? e0 : perturb(e0, schedule, n, rng);
  views.view_b = reverse_sample(views.view_a, n, score, schedule, rng, observer);
  return views;
}

ViewPair generate_views(const RowMatrix& e0, const ScoreNetParams& params,
                        const SdeSchedule& schedule, Rng& rng, const TrajectoryObserver& observer) {
  return generate_views(e0, network_score(params), schedule, rng, observer);
}

RowMatrix generate_hard_negatives(const RowMatrix& e_pos, const RowMatrix& e_neg,
                                  const InjectionConfig& injection, const ScoreFn& score,
                                  const SdeSchedule& schedule, Rng& rng) {
  if (injection.w < 0.0 || injection.w > 1.0) throw ConfigError("injection weight w must lie in [0, 1]");
  if (e_pos.rows() != e_neg.rows() || e_pos.cols() != e_neg.cols())
    throw ConfigError("positive and negative batches differ in shape");
  const int n = schedule.sampling_steps();
  const auto rows = e_neg.rows();
  if (n == 0) return e_neg;

  // rows [0, B) hold the negative track, rows [B, 2B) the positive track
  RowMatrix tracks(2 * rows, e_neg.cols());
  tracks.topRows(rows) = perturb(e_neg, schedule, n, rng);
  tracks.bottomRows(rows) = perturb(e_pos, schedule, n, rng);
  const double w = injection.w;
  for (int i = n - 1; i >= 0; --i) {
    tracks.topRows(rows) = w * tracks.topRows(rows) + (1.0 - w) * tracks.bottomRows(rows);
    reverse_step(tracks, i, score, schedule, standard_normal(tracks.rows(), tracks.cols(), rng));
  }
  return tracks.topRows(rows);
}

RowMatrix generate_hard_negatives(const RowMatrix& e_pos, const RowMatrix& e_neg,
                                  const InjectionConfig& injection, const ScoreNetParams& params,
                                  const SdeSchedule& schedule, Rng& rng) {
  return generate_hard_negatives(e_pos, e_neg, injection, network_score(params), schedule, rng);
}

TrajectoryObserver TrajectoryCsv::observer() {
  return [this](int step, const RowMatrix& state) {
    const auto rows = std::min<Eigen::Index>(state.rows(), static_cast<Eigen::Index>(max_rows_));
    states_.emplace_back(step, state.topRows(rows));
  };
}

void TrajectoryCsv::write(const std::filesystem::path& path) const {
  io::atomic_write(
      path,
      [&](std::ostream& out) {
        const Eigen::Index cols = states_.empty() ? 0 : states_.front().second.cols();
        out << "step,row";
        for (Eigen::Index c = 0; c < cols; ++c) out << ",c" << c;
        out << '\n';
        char buf[32];
        for (const auto& [step, state] : states_) {
          for (Eigen::Index r = 0; r < state.rows(); ++r) {
            out << step << ',' << r;
            for (Eigen::Index c = 0; c < state.cols(); ++c) {
              std::snprintf(buf, sizeof buf, "%.9g", state(r, c));
              out << ',' << buf;
            }
            out << '\n';
          }
        }
      },
      false);
}

}  // namespace scone
