#include "scone/trainer.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"
#include "scone/losses.hpp"
#include "scone/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

namespace scone {

namespace {

RowMatrix gather(const RowMatrix& m, const std::vector<index_t>& rows, std::size_t offset = 0) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(offset + rows[k]));
  return out;
}

void scatter_add(RowMatrix& target, const std::vector<index_t>& rows, const RowMatrix& values,
                 double scale, std::size_t offset = 0) {
  for (std::size_t k = 0; k < rows.size(); ++k)
    target.row(static_cast<Eigen::Index>(offset + rows[k])) += scale * values.row(static_cast<Eigen::Index>(k));
}

std::vector<index_t> distinct_sorted(std::vector<index_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

ScoreNetConfig score_config(const TrainConfig& c) {
  return {c.embed_dim, c.score_outer_dim, c.score_inner_dim, c.time_dim};
}

AdamConfig adam_config(double lr) {
  AdamConfig a;
  a.learning_rate = lr;
  return a;
}

}  // namespace

std::vector<index_t> touched_nodes(const std::vector<Triplet>& triplets, std::size_t user_count) {
  std::vector<index_t> nodes;
  nodes.reserve(3 * triplets.size());
  for (const auto& t : triplets) {
    nodes.push_back(t.user);
    nodes.push_back(static_cast<index_t>(user_count + t.pos_item));
    nodes.push_back(static_cast<index_t>(user_count + t.neg_item));
  }
  return distinct_sorted(std::move(nodes));
}

EncoderObjective encoder_objective(const EmbeddingState& state, const NormalizedAdjacency& adjacency,
                                   std::span<const double> alphas, std::size_t user_count,
                                   const StepSample& sample, const TrainConfig& config) {
  const auto& final_emb = state.final_embeddings;
  const auto batch = sample.triplets.size();
  if (batch == 0) throw ConfigError("empty triplet batch");
  const double inv_batch = 1.0 / static_cast<double>(batch);

  std::vector<index_t> users;
  std::vector<index_t> pos;
  std::vector<index_t> neg;
  for (const auto& t : sample.triplets) {
    users.push_back(t.user);
    pos.push_back(t.pos_item);
    neg.push_back(t.neg_item);
  }

  EncoderObjective obj;
  RowMatrix grad_final = RowMatrix::Zero(final_emb.rows(), final_emb.cols());

  const bool hard = sample.hard_negatives.rows() > 0;
  const RowMatrix neg_rows = hard ? sample.hard_negatives : gather(final_emb, neg, user_count);
  const auto bpr = bpr_loss(gather(final_emb, users), gather(final_emb, pos, user_count), neg_rows);
  obj.bpr = bpr.loss;
  scatter_add(grad_final, users, bpr.grad_user, 1.0);
  scatter_add(grad_final, pos, bpr.grad_pos, 1.0, user_count);
  if (!hard) scatter_add(grad_final, neg, bpr.grad_neg, 1.0, user_count);

  if (config.use_cl && !sample.cl_users.empty()) {
    const RowMatrix user_a = gather(final_emb, sample.cl_users) + sample.user_view_offset;
    const RowMatrix item_a = gather(final_emb, sample.cl_items, user_count) + sample.item_view_offset;
    const bool mean = config.cl_reduction == ClReduction::mean;
    if (config.cl_mode == ClMode::separate) {
      const auto lu = infonce_loss(user_a, sample.user_view_b, config.tau);
      const auto li = infonce_loss(item_a, sample.item_view_b, config.tau);
      const double su = mean ? 1.0 / static_cast<double>(sample.cl_users.size()) : 1.0;
      const double si = mean ? 1.0 / static_cast<double>(sample.cl_items.size()) : 1.0;
      obj.cl = su * lu.loss + si * li.loss;
      scatter_add(grad_final, sample.cl_users, lu.grad_a, config.lambda1 * su);
      scatter_add(grad_final, sample.cl_items, li.grad_a, config.lambda1 * si, user_count);
    } else {
      const auto nu = user_a.rows();
      RowMatrix a(nu + item_a.rows(), user_a.cols());
      RowMatrix b(a.rows(), a.cols());
      a << user_a, item_a;
      b << sample.user_view_b, sample.item_view_b;
      const auto l = infonce_loss(a, b, config.tau);
      const double s = mean ? 1.0 / static_cast<double>(a.rows()) : 1.0;
      obj.cl = s * l.loss;
      scatter_add(grad_final, sample.cl_users, l.grad_a.topRows(nu), config.lambda1 * s);
      scatter_add(grad_final, sample.cl_items, l.grad_a.bottomRows(item_a.rows()), config.lambda1 * s,
                  user_count);
    }
  }

  obj.grad_theta = backward_through_propagation(grad_final, adjacency, alphas).grad_theta;

  // L2 on the initial embeddings, normalized per triplet like the BPR mean
  const auto& theta = state.theta;
  if (config.l2_scope == L2Scope::full) {
    obj.l2_term = theta.squaredNorm() * inv_batch;
    obj.grad_theta += (2.0 * config.lambda2 * inv_batch) * theta;
  } else {
    for (const auto node : touched_nodes(sample.triplets, user_count)) {
      obj.l2_term += theta.row(node).squaredNorm() * inv_batch;
      obj.grad_theta.row(node) += (2.0 * config.lambda2 * inv_batch) * theta.row(node);
    }
  }

  const double cl_weight = config.use_cl ? config.lambda1 : 0.0;
  obj.total = obj.bpr + cl_weight * obj.cl + config.lambda2 * obj.l2_term;
  return obj;
}

Trainer::Trainer(const InteractionDataset& dataset, TrainConfig config)
    : dataset_(&dataset),
      config_((config.validate(), std::move(config))),
      adjacency_(build_adjacency(dataset)),
      alphas_(uniform_alphas(config_.layers)),
      schedule_(config_.sigma_min, config_.sigma_max, config_.total_steps, config_.sampling_steps),
      phi_(score_config(config_)),
      theta_opt_(dataset.node_count() * static_cast<std::size_t>(config_.embed_dim),
                 adam_config(config_.learning_rate)),
      phi_opt_(static_cast<std::size_t>(phi_.layout().size()), adam_config(config_.score_learning_rate)) {
  Rng init_rng = epoch_stream(config_.seed, 0, 0);
  state_.theta = init_theta(dataset.node_count(), static_cast<std::size_t>(config_.embed_dim),
                            config_.init_std, init_rng);
  phi_.init(init_rng);
  state_.refresh(adjacency_, alphas_);
}

const RowMatrix& Trainer::final_embeddings() {
  state_.refresh(adjacency_, alphas_);
  return state_.final_embeddings;
}

RowMatrix Trainer::score_batch(const std::vector<Triplet>& triplets) const {
  const auto nodes = touched_nodes(triplets, dataset_->user_count());
  return gather(state_.final_embeddings, nodes);
}

StepSample Trainer::draw_step_sample(std::span<const Edge> positives, Rng& sample_rng, Rng& noise_rng) {
  StepSample s;
  s.triplets.reserve(positives.size());
  for (const auto& e : positives)
    s.triplets.push_back({e.user, e.item, draw_negative(*dataset_, e.user, sample_rng)});

  const auto users = dataset_->user_count();
  const auto& final_emb = state_.final_embeddings;
  if (config_.use_cl) {
    std::vector<index_t> u;
    std::vector<index_t> i;
    for (const auto& t : s.triplets) {
      u.push_back(t.user);
      i.push_back(t.pos_item);
    }
    s.cl_users = distinct_sorted(std::move(u));
    s.cl_items = distinct_sorted(std::move(i));
    const RowMatrix eu = gather(final_emb, s.cl_users);
    const RowMatrix ei = gather(final_emb, s.cl_items, users);
    auto vu = generate_views(eu, phi_, schedule_, noise_rng, trace_);
    trace_ = {};
    auto vi = generate_views(ei, phi_, schedule_, noise_rng);
    s.user_view_offset = vu.view_a - eu;
    s.item_view_offset = vi.view_a - ei;
    s.user_view_b = std::move(vu.view_b);
    s.item_view_b = std::move(vi.view_b);
  }
  if (config_.use_hard_neg) {
    std::vector<index_t> pos;
    std::vector<index_t> neg;
    for (const auto& t : s.triplets) {
      pos.push_back(t.pos_item);
      neg.push_back(t.neg_item);
    }
    s.hard_negatives = generate_hard_negatives(gather(final_emb, pos, users), gather(final_emb, neg, users),
                                               InjectionConfig{config_.w}, phi_, schedule_, noise_rng);
  }
  return s;
}

LossReport Trainer::train_epoch(int epoch, Rng& sample_rng, Rng& noise_rng) {
  std::vector<Edge> order = dataset_->train_edges();
  std::shuffle(order.begin(), order.end(), sample_rng);

  LossReport report;
  report.epoch = epoch;
  std::size_t batches = 0;
  const auto bs = config_.batch_size;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::span<const Edge> positives(order.data() + start, std::min(bs, order.size() - start));
    state_.refresh(adjacency_, alphas_);

    std::optional<DsmResult> dsm;
    StepSample sample;
    if (config_.update_order == UpdateOrder::phi_first && score_model_used()) {
      // φ steps on this batch's nodes before any sampling uses it
      StepSample triplets_only;
      Rng peek = sample_rng;
      for (const auto& e : positives)
        triplets_only.triplets.push_back({e.user, e.item, draw_negative(*dataset_, e.user, peek)});
      dsm = dsm_loss(phi_, score_batch(triplets_only.triplets), schedule_, noise_rng);
      phi_opt_.step({phi_.values().data(), static_cast<std::size_t>(phi_.values().size())},
                    {dsm->grad.data(), static_cast<std::size_t>(dsm->grad.size())});
    }
    sample = draw_step_sample(positives, sample_rng, noise_rng);
    const auto obj = encoder_objective(state_, adjacency_, alphas_, dataset_->user_count(), sample, config_);
    if (config_.update_order == UpdateOrder::simultaneous && score_model_used())
      dsm = dsm_loss(phi_, score_batch(sample.triplets), schedule_, noise_rng);

    const double sgm = dsm ? dsm->loss : 0.0;
    if (!std::isfinite(obj.total) || !std::isfinite(sgm))
      throw NonFiniteLossError(epoch, "non-finite loss (bpr=" + std::to_string(obj.bpr) +
                                          ", cl=" + std::to_string(obj.cl) +
                                          ", sgm=" + std::to_string(sgm) + ")");

    theta_opt_.step({state_.theta.data(), static_cast<std::size_t>(state_.theta.size())},
                    {obj.grad_theta.data(), static_cast<std::size_t>(obj.grad_theta.size())});
    if (config_.update_order == UpdateOrder::simultaneous && dsm)
      phi_opt_.step({phi_.values().data(), static_cast<std::size_t>(phi_.values().size())},
                    {dsm->grad.data(), static_cast<std::size_t>(dsm->grad.size())});

    report.bpr_loss += obj.bpr;
    report.cl_loss += obj.cl;
    report.sgm_loss += sgm;
    report.l2_term += obj.l2_term;
    ++batches;
  }
  const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
  report.bpr_loss /= n;
  report.cl_loss /= n;
  report.sgm_loss /= n;
  report.l2_term /= n;
  const double cl_weight = config_.use_cl ? config_.lambda1 : 0.0;
  report.total_encoder_loss = report.bpr_loss + cl_weight * report.cl_loss + config_.lambda2 * report.l2_term;
  state_.refresh(adjacency_, alphas_);
  return report;
}

LossReport Trainer::train_epoch(int epoch) {
  Rng sample_rng = epoch_stream(config_.seed, epoch, 0);
  Rng noise_rng = epoch_stream(config_.seed, epoch, 1);
  return train_epoch(epoch, sample_rng, noise_rng);
}

void Trainer::save_optimizers(std::ostream& out) const {
  theta_opt_.save(out);
  phi_opt_.save(out);
}

void Trainer::load_optimizers(std::istream& in) {
  theta_opt_.load(in);
  phi_opt_.load(in);
}

Rng epoch_stream(std::uint64_t seed, int epoch, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream), 0x5c0e5eedu};
  return Rng(seq);
}

void write_history_csv(const std::vector<EpochRecord>& history, int k, std::ostream& out) {
  out << "epoch,bpr_loss,cl_loss,sgm_loss,recall@" << k << ",ndcg@" << k << '\n';
  for (const auto& r : history) {
    out << r.losses.epoch << ',' << format_metric_value(r.losses.bpr_loss) << ','
        << format_metric_value(r.losses.cl_loss) << ',' << format_metric_value(r.losses.sgm_loss) << ','
        << format_metric_value(r.recall) << ',' << format_metric_value(r.ndcg) << '\n';
  }
}

namespace {

constexpr std::string_view kRunMagic = "SCONERUN";
constexpr std::uint32_t kRunVersion = 1;

struct RunState {
  int epoch = 0;
  int best_epoch = 0;
  double best_recall = -1.0;
  int bad_epochs = 0;
  std::vector<EpochRecord> history;
};

void write_matrix_f64(std::ostream& out, const double* data, Eigen::Index count) {
  io::write_u32(out, static_cast<std::uint32_t>(count));
  for (Eigen::Index k = 0; k < count; ++k) io::write_f64(out, data[k]);
}

void read_matrix_f64(std::istream& in, double* data, Eigen::Index count, const char* what) {
  if (io::read_u32(in) != static_cast<std::uint32_t>(count))
    throw IoError(std::string("resume state: ") + what + " size mismatch");
  for (Eigen::Index k = 0; k < count; ++k) data[k] = io::read_f64(in);
}

void save_run_state(const std::filesystem::path& path, const Trainer& trainer, const RunState& s) {
  io::atomic_write(path, [&](std::ostream& out) {
    io::write_bytes(out, kRunMagic);
    io::write_u32(out, kRunVersion);
    io::write_u32(out, static_cast<std::uint32_t>(s.epoch));
    io::write_u32(out, static_cast<std::uint32_t>(s.best_epoch));
    io::write_f64(out, s.best_recall);
    io::write_u32(out, static_cast<std::uint32_t>(s.bad_epochs));
    const auto& theta = trainer.state().theta;
    write_matrix_f64(out, theta.data(), theta.size());
    const auto& phi = trainer.score_params().values();
    write_matrix_f64(out, phi.data(), phi.size());
    trainer.save_optimizers(out);
    io::write_u32(out, static_cast<std::uint32_t>(s.history.size()));
    for (const auto& r : s.history) {
      io::write_u32(out, static_cast<std::uint32_t>(r.losses.epoch));
      for (double v : {r.losses.bpr_loss, r.losses.cl_loss, r.losses.sgm_loss, r.losses.l2_term,
                       r.losses.total_encoder_loss, r.recall, r.ndcg})
        io::write_f64(out, v);
    }
  });
}

RunState load_run_state(const std::filesystem::path& path, Trainer& trainer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open resume state " + path.string());
  if (io::read_bytes(in, kRunMagic.size()) != kRunMagic) throw InputError(path.string() + ": not a run state");
  if (io::read_u32(in) != kRunVersion) throw InputError(path.string() + ": unsupported run state version");
  RunState s;
  s.epoch = static_cast<int>(io::read_u32(in));
  s.best_epoch = static_cast<int>(io::read_u32(in));
  s.best_recall = io::read_f64(in);
  s.bad_epochs = static_cast<int>(io::read_u32(in));
  auto& theta = trainer.state().theta;
  read_matrix_f64(in, theta.data(), theta.size(), "theta");
  auto& phi = trainer.score_params().values();
  read_matrix_f64(in, phi.data(), phi.size(), "phi");
  trainer.load_optimizers(in);
  const auto rows = io::read_u32(in);
  for (std::uint32_t k = 0; k < rows; ++k) {
    EpochRecord r;
    r.losses.epoch = static_cast<int>(io::read_u32(in));
    r.losses.bpr_loss = io::read_f64(in);
    r.losses.cl_loss = io::read_f64(in);
    r.losses.sgm_loss = io::read_f64(in);
    r.losses.l2_term = io::read_f64(in);
    r.losses.total_encoder_loss = io::read_f64(in);
    r.recall = io::read_f64(in);
    r.ndcg = io::read_f64(in);
    s.history.push_back(r);
  }
  return s;
}

}  // namespace

FitResult fit(const InteractionDataset& dataset, const TrainConfig& config, const FitOptions& options) {
  Trainer trainer(dataset, config);
  const bool persist = !options.out_dir.empty();
  if (persist) std::filesystem::create_directories(options.out_dir);
  const auto state_path = options.out_dir / "state.bin";

  FitResult result;
  RunState run;
  if (options.resume) {
    if (!persist) throw ConfigError("resume needs an output directory");
    run = load_run_state(state_path, trainer);
    result.history = run.history;
    result.best_epoch = run.best_epoch;
    result.best_recall = run.best_recall;
    if (std::filesystem::exists(options.out_dir / "theta.bin"))
      result.best_theta = load_theta(options.out_dir / "theta.bin");
    if (std::filesystem::exists(options.out_dir / "phi.bin"))
      result.best_phi = load_score_net(options.out_dir / "phi.bin");
    if (run.bad_epochs > config.patience) {
      result.stopped_early = true;
      return result;
    }
  }

  std::optional<TrajectoryCsv> trajectory;
  const auto truth = ground_truth(dataset, EvalSplit::valid);
  const auto k = static_cast<std::size_t>(config.eval_k);

  for (int epoch = run.epoch + 1; epoch <= config.max_epochs; ++epoch) {
    if (options.trajectory_csv && epoch == 1) {
      trajectory.emplace(1);
      trainer.trace_next_views(trajectory->observer());
    }
    EpochRecord record;
    record.losses = trainer.train_epoch(epoch);
    if (trajectory && epoch == 1) trajectory->write(*options.trajectory_csv);

    const auto topk = rank_all_users(trainer.final_embeddings(), dataset, k, EvalSplit::valid);
    const auto metrics = recall_ndcg(topk, truth, k);
    record.recall = metrics.recall_at_k;
    record.ndcg = metrics.ndcg_at_k;
    result.history.push_back(record);
    run.history.push_back(record);
    run.epoch = epoch;

    if (record.recall > run.best_recall) {
      run.best_recall = record.recall;
      run.best_epoch = epoch;
      run.bad_epochs = 0;
      result.best_theta = trainer.state().theta;
      result.best_phi = trainer.score_params();
      if (persist) {
        save_theta(result.best_theta, options.out_dir / "theta.bin");
        save_score_net(result.best_phi, options.out_dir / "phi.bin");
      }
    } else {
      ++run.bad_epochs;
    }
    result.best_epoch = run.best_epoch;
    result.best_recall = run.best_recall;

    if (persist) {
      io::atomic_write(options.out_dir / "history.csv",
                       [&](std::ostream& out) { write_history_csv(result.history, config.eval_k, out); }, false);
      save_run_state(state_path, trainer, run);
    }
    if (options.on_epoch) options.on_epoch(record);
    if (run.bad_epochs > config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace scone
