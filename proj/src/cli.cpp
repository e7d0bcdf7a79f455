#include "scone/cli.hpp"

#include "scone/binary_io.hpp"
#include "scone/dataset.hpp"
#include "scone/encoder.hpp"
#include "scone/error.hpp"
#include "scone/manifest.hpp"
#include "scone/metrics.hpp"
#include "scone/synthetic.hpp"
#include "scone/toy_sgm.hpp"
#include "scone/train_config.hpp"
#include "scone/trainer.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace scone {

namespace {

struct UsageError : InputError {
  using InputError::InputError;
};

/// Creates `dir` if needed; an existing non-directory is a usage error.
void prepare_out_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("output directory must not be empty");
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec))
    throw UsageError("output path is not a directory: " + dir.string());
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
}

RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args) {
  RunManifest m;
  m.command = command;
  m.arguments = args;
  m.started_at = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& dir) {
  m.finished_at = utc_timestamp();
  write_manifest(m, dir);
}

// --- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string input;
  std::string out;
  std::vector<double> split{0.7, 0.1, 0.2};
  std::uint64_t seed = 2024;
};

int cmd_prepare(const PrepareArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.split.size() != 3) throw UsageError("--split takes three ratios");
  if (!fs::exists(a.input)) throw InputError("input file not found: " + a.input);
  prepare_out_dir(a.out);
  auto manifest = start_manifest("prepare", argv);
  manifest.seed = a.seed;

  const auto raw = load_interactions(a.input);
  const auto ds = split_dataset(raw, SplitRatios{a.split[0], a.split[1], a.split[2]}, a.seed);
  write_split(ds, a.out);
  manifest.outputs = {"train.tsv", "valid.tsv", "test.tsv", "user_map.tsv", "item_map.tsv"};
  finish_manifest(manifest, a.out);
  out << fmt::format("users={} items={} train={} valid={} test={}\n", ds.user_count(), ds.item_count(),
                     ds.train_edges().size(), ds.valid_edges().size(), ds.test_edges().size());
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string ablation = "none";
  std::string out;
  bool resume = false;
  std::string trajectory;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  auto config = load_config(a.config);
  apply_ablation(config, parse_ablation(a.ablation));
  if (a.seed) config.seed = *a.seed;
  if (a.max_epochs) config.max_epochs = *a.max_epochs;
  config.validate();
  const auto ds = read_split(a.data);
  prepare_out_dir(a.out);

  auto manifest = start_manifest("train", argv);
  manifest.seed = config.seed;
  manifest.config = format_config(config);

  FitOptions options;
  options.out_dir = a.out;
  options.resume = a.resume;
  if (!a.trajectory.empty()) options.trajectory_csv = fs::path(a.trajectory);
  options.on_epoch = [&](const EpochRecord& r) {
    out << fmt::format("epoch {} bpr={:.6f} cl={:.6f} sgm={:.6f} recall@{}={:.6f} ndcg@{}={:.6f}\n",
                       r.losses.epoch, r.losses.bpr_loss, r.losses.cl_loss, r.losses.sgm_loss,
                       config.eval_k, r.recall, config.eval_k, r.ndcg);
    out.flush();
  };
  const auto result = fit(ds, config, options);

  manifest.outputs = {"theta.bin", "phi.bin", "history.csv", "state.bin"};
  if (!a.trajectory.empty()) manifest.outputs.push_back(a.trajectory);
  finish_manifest(manifest, a.out);
  out << fmt::format("best epoch {} recall@{}={:.6f}{}\n", result.best_epoch, config.eval_k,
                     result.best_recall, result.stopped_early ? " (early stop)" : "");
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  int k = 20;
  bool strata = false;
  bool uniformity = false;
  int layers = 2;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.k <= 0) throw UsageError("--k must be positive");
  if (a.layers < 0) throw UsageError("--layers must be non-negative");
  const auto ds = read_split(a.data);
  fs::path ckpt = a.checkpoint;
  if (fs::is_directory(ckpt)) ckpt /= "theta.bin";
  if (!fs::exists(ckpt)) throw InputError("checkpoint not found: " + ckpt.string());
  const RowMatrix theta = load_theta(ckpt);
  if (static_cast<std::size_t>(theta.rows()) != ds.node_count())
    throw InputError(fmt::format("checkpoint has {} embedding rows but the data has {} nodes ({} users + {} items)",
                                 theta.rows(), ds.node_count(), ds.user_count(), ds.item_count()));

  const auto adjacency = build_adjacency(ds);
  const auto layers = propagate(theta, adjacency, a.layers);
  const auto alphas = uniform_alphas(a.layers);
  const RowMatrix final_emb = finalize(layers, alphas);

  const auto k = static_cast<std::size_t>(a.k);
  const auto topk = rank_all_users(final_emb, ds, k, EvalSplit::test);
  const auto truth = ground_truth(ds, EvalSplit::test);
  const auto overall = recall_ndcg(topk, truth, k);

  const std::string rk = fmt::format("recall@{}", a.k);
  const std::string nk = fmt::format("ndcg@{}", a.k);
  std::vector<MetricRow> rows{{rk, "all", overall.recall_at_k}, {nk, "all", overall.ndcg_at_k}};

  if (a.strata) {
    const auto user_deg = ds.user_train_degrees();
    const auto item_deg = ds.item_train_degrees();
    const auto user_strata = assign_strata(user_deg);
    const auto item_strata = assign_strata(item_deg);
    const auto groups = stratified_user_eval(overall, user_strata);
    for (auto s : kStrata) {
      const auto& g = groups[static_cast<int>(s)];
      const std::string name = fmt::format("user_{}", stratum_name(s));
      rows.push_back({rk, name, g ? g->recall_at_k : 0.0});
      rows.push_back({nk, name, g ? g->ndcg_at_k : 0.0});
    }
    const auto parts = decomposed_recall(topk, truth, item_strata, k);
    for (auto s : kStrata)
      rows.push_back({fmt::format("decomposed_recall@{}", a.k), fmt::format("item_{}", stratum_name(s)),
                      parts[static_cast<int>(s)]});
    if (!a.out.empty()) {
      const fs::path dir = fs::path(a.out).parent_path();
      write_strata_tsv(user_strata, dir / "user_strata.tsv");
      write_strata_tsv(item_strata, dir / "item_strata.tsv");
    }
  }

  if (a.uniformity) {
    Rng rng(a.seed);
    const auto pools = select_uniformity_pools(ds, UniformitySampleSpec{}, rng);
    if (pools.users.size() >= 2)
      rows.push_back({"uniformity", "users", uniformity(gather_user_rows(final_emb, pools.users), rng)});
    if (pools.items.size() >= 2)
      rows.push_back({"uniformity", "items",
                      uniformity(gather_item_rows(final_emb, ds.user_count(), pools.items), rng)});
  }

  if (a.out.empty()) {
    write_metrics_csv(rows, out);
  } else {
    io::atomic_write(a.out, [&](std::ostream& o) { write_metrics_csv(rows, o); }, false);
  }
  return 0;
}

// --- toysgm ----------------------------------------------------------------

struct ToyArgs {
  std::uint64_t seed = 1;
  std::string out;
  std::string trajectory;
};

int cmd_toysgm(const ToyArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  prepare_out_dir(a.out);
  auto manifest = start_manifest("toysgm", argv);
  manifest.seed = a.seed;
  ToySgmOptions options;
  options.seed = a.seed;

  std::optional<TrajectoryCsv> trajectory;
  if (!a.trajectory.empty()) trajectory.emplace(8);
  const auto report = run_toy_sgm(options, trajectory ? trajectory->observer() : TrajectoryObserver{});
  io::atomic_write(fs::path(a.out) / "report.csv", [&](std::ostream& o) { write_toy_report(report, o); },
                   false);
  manifest.outputs = {"report.csv"};
  if (trajectory) {
    trajectory->write(a.trajectory);
    manifest.outputs.push_back(a.trajectory);
  }
  finish_manifest(manifest, a.out);
  out << fmt::format("mean_error={:.6f} cov_trace_rel_error={:.6f} {}\n", report.mean_error,
                     report.trace_error, report.passed ? "PASS" : "FAIL");
  return report.passed ? 0 : 1;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
  bool planted = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto edges = a.planted ? planted_blocks(PlantedSpec{.seed = a.spec.seed}) : generate_interactions(a.spec);
  io::atomic_write(a.out, [&](std::ostream& o) {
    for (const auto& e : edges) o << e.user << '\t' << e.item << '\n';
  }, false);
  out << fmt::format("{} interactions written to {}\n", edges.size(), a.out);
  return 0;
}

}  // namespace

void apply_thread_limit() {
  const char* env = std::getenv("SCONE_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) return;
  Eigen::setNbThreads(static_cast<int>(n));
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SCONE: score-based contrastive views and hard negatives for graph recommenders", "scone"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "split an interaction TSV into train/valid/test");
  prepare->add_option("--input", prep.input, "interaction TSV")->required();
  prepare->add_option("--out", prep.out, "output directory")->required();
  prepare->add_option("--split", prep.split, "train valid test ratios")->expected(3);
  prepare->add_option("--seed", prep.seed, "split seed");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train encoder and score model");
  train->add_option("--data", tr.data, "prepared data directory")->required();
  train->add_option("--config", tr.config, "config file or preset name")->required();
  train->add_option("--ablation", tr.ablation, "none|no-cl|no-ns|lightgcn")
      ->check(CLI::IsMember({"none", "no-cl", "no-ns", "lightgcn"}));
  train->add_option("--out", tr.out, "run directory")->required();
  train->add_flag("--resume", tr.resume, "continue from state.bin in the run directory");
  train->add_option("--dump-trajectory", tr.trajectory, "write first-batch reverse trajectories to CSV");
  train->add_option("--seed", tr.seed, "override the config seed");
  train->add_option("--max-epochs", tr.max_epochs, "override the config epoch budget");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "rank test items with a checkpoint");
  eval->add_option("--data", ev.data, "prepared data directory")->required();
  eval->add_option("--checkpoint", ev.checkpoint, "theta.bin or run directory")->required();
  eval->add_option("--k", ev.k, "cutoff");
  eval->add_flag("--strata", ev.strata, "user-group and decomposed item-group metrics");
  eval->add_flag("--uniformity", ev.uniformity, "embedding uniformity of users and popular items");
  eval->add_option("--layers", ev.layers, "propagation layers");
  eval->add_option("--seed", ev.seed, "seed for uniformity sampling");
  eval->add_option("--out", ev.out, "metrics CSV (stdout if omitted)");

  ToyArgs toy;
  auto* toysgm = app.add_subcommand("toysgm", "score-model self-check on a 2-D Gaussian");
  toysgm->add_option("--seed", toy.seed, "seed");
  toysgm->add_option("--out", toy.out, "report directory")->required();
  toysgm->add_option("--trajectory", toy.trajectory, "write reverse trajectories to CSV");

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth", "write a synthetic interaction TSV");
  synth->add_option("--out", syn.out, "output TSV")->required();
  synth->add_option("--users", syn.spec.users, "user count");
  synth->add_option("--items", syn.spec.items, "item count");
  synth->add_option("--interactions", syn.spec.interactions, "target interaction count");
  synth->add_option("--clusters", syn.spec.clusters, "preference clusters");
  synth->add_option("--seed", syn.spec.seed, "generator seed");
  synth->add_flag("--planted", syn.planted, "small block-structured set instead");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  apply_thread_limit();
  try {
    if (*prepare) return cmd_prepare(prep, args, out);
    if (*train) return cmd_train(tr, args, out);
    if (*eval) return cmd_eval(ev, out);
    if (*toysgm) return cmd_toysgm(toy, args, out);
    if (*synth) return cmd_synth(syn, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace scone
