#pragma once

#include "scone/score_model.hpp"
#include "scone/types.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace scone {

/// Receives the batch state after each reverse step (and the start state).
using TrajectoryObserver = std::function<void(int step, const RowMatrix& state)>;

/// S(e, σ) for a batch of rows at one shared noise level.
using ScoreFn = std::function<RowMatrix(const RowMatrix& e, double sigma)>;

/// The score network as a ScoreFn. `params` must outlive the result.
ScoreFn network_score(const ScoreNetParams& params);

/// One reverse-SDE step from step+1 to step:
///   e ← e + (σ²(step+1) − σ²(step)) S_φ(e, σ(step+1)) + sqrt(σ²(step+1) − σ²(step)) z
void reverse_step(RowMatrix& e, int step, const ScoreNetParams& params,
                  const SdeSchedule& schedule, const RowMatrix& noise);
void reverse_step(RowMatrix& e, int step, const ScoreNetParams& params,
                  const SdeSchedule& schedule, Rng& rng);
void reverse_step(RowMatrix& e, int step, const ScoreFn& score, const SdeSchedule& schedule,
                  const RowMatrix& noise);

/// Runs reverse steps from `from_step` down to 0.
RowMatrix reverse_sample(RowMatrix e, int from_step, const ScoreNetParams& params,
                         const SdeSchedule& schedule, Rng& rng,
                         const TrajectoryObserver& observer = {});
RowMatrix reverse_sample(RowMatrix e, int from_step, const ScoreFn& score,
                         const SdeSchedule& schedule, Rng& rng,
                         const TrajectoryObserver& observer = {});

/// Contrastive views: view_a = e(N) from the forward kernel, view_b = ê(0)
/// after N reverse steps from view_a.
struct ViewPair {
  RowMatrix view_a;
  RowMatrix view_b;
};

ViewPair generate_views(const RowMatrix& e0, const ScoreNetParams& params,
                        const SdeSchedule& schedule, Rng& rng,
                        const TrajectoryObserver& observer = {});
ViewPair generate_views(const RowMatrix& e0, const ScoreFn& score, const SdeSchedule& schedule,
                        Rng& rng, const TrajectoryObserver& observer = {});

struct InjectionConfig {
  double w = 0.9;
};

/// Hard negatives by stochastic positive injection. Both tracks are perturbed
/// to step N; before every reverse step the negative track is replaced by
/// w·neg + (1 − w)·pos, then both tracks go through one batched reverse step.
/// Returns the negative track at step 0.
RowMatrix generate_hard_negatives(const RowMatrix& e_pos, const RowMatrix& e_neg,
                                  const InjectionConfig& injection, const ScoreNetParams& params,
                                  const SdeSchedule& schedule, Rng& rng);
RowMatrix generate_hard_negatives(const RowMatrix& e_pos, const RowMatrix& e_neg,
                                  const InjectionConfig& injection, const ScoreFn& score,
                                  const SdeSchedule& schedule, Rng& rng);

/// Writes `step,row,c0,c1,...` lines for recorded trajectory states.
class TrajectoryCsv {
 public:
  explicit TrajectoryCsv(std::size_t max_rows = 1) : max_rows_(max_rows) {}

  TrajectoryObserver observer();
  void write(const std::filesystem::path& path) const;
  std::size_t recorded_states() const noexcept { return states_.size(); }

 private:
  std::size_t max_rows_;
  std::vector<std::pair<int, RowMatrix>> states_;
};

}  // namespace scone
