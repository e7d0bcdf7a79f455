#pragma once

#include "scone/dataset.hpp"
#include "scone/encoder.hpp"
#include "scone/optim.hpp"
#include "scone/sampler.hpp"
#include "scone/score_model.hpp"
#include "scone/train_config.hpp"
#include "scone/types.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace scone {

struct LossReport {
  int epoch = 0;
  double bpr_loss = 0.0;
  double cl_loss = 0.0;
  double sgm_loss = 0.0;
  double l2_term = 0.0;  ///< unweighted; total adds lambda2 · l2_term
  double total_encoder_loss = 0.0;
};

/// The stochastic quantities of one training step, drawn before the encoder
/// loss is evaluated. Holding them fixed makes the encoder objective a
/// deterministic function of Θ.
struct StepSample {
  std::vector<Triplet> triplets;
  /// Distinct users and positive items that receive contrastive views.
  std::vector<index_t> cl_users;
  std::vector<index_t> cl_items;
  /// view_a − e0 for each contrastive row; view_a keeps its dependence on Θ.
  RowMatrix user_view_offset;
  RowMatrix item_view_offset;
  /// Reverse-sampled views, constant with respect to Θ.
  RowMatrix user_view_b;
  RowMatrix item_view_b;
  /// Generated hard negatives, one row per triplet; empty when the random
  /// negative's own embedding is used instead.
  RowMatrix hard_negatives;
};

struct EncoderObjective {
  double bpr = 0.0;
  double cl = 0.0;
  double l2_term = 0.0;
  double total = 0.0;
  RowMatrix grad_theta;
};

/// Rows of the touched Θ entries: distinct users, positive and negative items
/// as node indices.
std::vector<index_t> touched_nodes(const std::vector<Triplet>& triplets, std::size_t user_count);

/// L_Θ = L_BPR + λ1 L_CL + λ2 · L2 and its exact gradient with respect to Θ.
/// `state` must hold embeddings propagated from its own theta.
EncoderObjective encoder_objective(const EmbeddingState& state, const NormalizedAdjacency& adjacency,
                                   std::span<const double> alphas, std::size_t user_count,
                                   const StepSample& sample, const TrainConfig& config);

/// Joint optimizer state for Θ (graph encoder) and φ (score network).
class Trainer {
 public:
  Trainer(const InteractionDataset& dataset, TrainConfig config);

  /// One pass over a shuffled permutation of the train edges.
  LossReport train_epoch(int epoch, Rng& sample_rng, Rng& noise_rng);
  /// Same, with the per-epoch streams derived from config.seed.
  LossReport train_epoch(int epoch);

  /// Draws everything stochastic for one batch of positive edges.
  StepSample draw_step_sample(std::span<const Edge> positives, Rng& sample_rng, Rng& noise_rng);

  const InteractionDataset& dataset() const noexcept { return *dataset_; }
  const NormalizedAdjacency& adjacency() const noexcept { return adjacency_; }
  const TrainConfig& config() const noexcept { return config_; }
  const SdeSchedule& schedule() const noexcept { return schedule_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }

  EmbeddingState& state() noexcept { return state_; }
  const EmbeddingState& state() const noexcept { return state_; }
  ScoreNetParams& score_params() noexcept { return phi_; }
  const ScoreNetParams& score_params() const noexcept { return phi_; }

  /// Recomputes final embeddings from the current Θ.
  const RowMatrix& final_embeddings();

  /// Observer for the view-generation trajectory of the next batch only.
  void trace_next_views(TrajectoryObserver observer) { trace_ = std::move(observer); }

  void save_optimizers(std::ostream& out) const;
  void load_optimizers(std::istream& in);

 private:
  bool score_model_used() const noexcept { return config_.use_cl || config_.use_hard_neg; }
  RowMatrix score_batch(const std::vector<Triplet>& triplets) const;

  const InteractionDataset* dataset_;
  TrainConfig config_;
  NormalizedAdjacency adjacency_;
  std::vector<double> alphas_;
  SdeSchedule schedule_;
  EmbeddingState state_;
  ScoreNetParams phi_;
  Adam theta_opt_;
  Adam phi_opt_;
  TrajectoryObserver trace_;
};

/// Per-epoch RNG streams: 0 drives triplet sampling, 1 drives the SDE noise.
Rng epoch_stream(std::uint64_t seed, int epoch, int stream);

struct EpochRecord {
  LossReport losses;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct FitOptions {
  /// Checkpoints, history.csv and resume state go here; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  bool resume = false;
  std::optional<std::filesystem::path> trajectory_csv;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_recall = -1.0;
  RowMatrix best_theta;
  ScoreNetParams best_phi;
  bool stopped_early = false;
};

/// Trains until max_epochs, or until more than `patience` consecutive epochs
/// fail to improve valid Recall@K. Keeps the best epoch's Θ and φ.
FitResult fit(const InteractionDataset& dataset, const TrainConfig& config,
              const FitOptions& options = {});

void write_history_csv(const std::vector<EpochRecord>& history, int k, std::ostream& out);

}  // namespace scone
