#pragma once

#include "scone/dataset.hpp"
#include "scone/encoder.hpp"
#include "scone/losses.hpp"
#include "scone/sampler.hpp"
#include "scone/score_model.hpp"
#include "scone/trainer.hpp"
#include "scone/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace scone::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "scone") {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Dataset over users u0.. and items i0.. with the given dense edges.
inline InteractionDataset make_dataset(std::size_t users, std::size_t items, std::vector<Edge> train,
                                       std::vector<Edge> valid = {}, std::vector<Edge> test = {}) {
  IdMap u;
  IdMap i;
  for (std::size_t k = 0; k < users; ++k) u.intern("u" + std::to_string(k));
  for (std::size_t k = 0; k < items; ++k) i.intern("i" + std::to_string(k));
  return InteractionDataset(std::move(u), std::move(i), std::move(train), std::move(valid), std::move(test));
}

inline RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  return standard_normal(rows, cols, rng) * scale;
}

/// Central differences of f at x, coordinate by coordinate.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x, double h) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Vector flatten(const RowMatrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline RowMatrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale < 1e-300 ? 0.0 : (a - b).norm() / scale;
}

// Randomized gradient oracles. Each draws a fresh small instance from `rng`
// and returns the relative error between the analytic and the central
// finite-difference gradient.

/// φ-gradient of the denoising score-matching loss, plus the input gradient
/// of the network output contracted with a random cotangent.
inline double score_net_gradient_error(Rng& rng) {
  ScoreNetParams params(ScoreNetConfig{4, 5, 6, 4});
  params.init(rng);
  params.values() += 0.1 * standard_normal(params.values().size(), 1, rng);  // non-zero biases
  const SdeSchedule schedule(0.01, 2.0, 10, 10);
  const RowMatrix e0 = random_matrix(3, 4, rng, 0.5);
  const RowMatrix noise = random_matrix(3, 4, rng);
  std::uniform_int_distribution<int> step(1, 10);
  const std::vector<int> steps{step(rng), step(rng), step(rng)};

  const auto analytic = dsm_loss(params, e0, schedule, steps, noise).grad;
  const auto numeric = numeric_gradient(
      [&](const Vector& phi) {
        ScoreNetParams p = params;
        p.values() = phi;
        return dsm_loss(p, e0, schedule, steps, noise).loss;
      },
      params.values(), 1e-5);
  double err = relative_error(analytic, numeric);

  const std::vector<double> sigmas{schedule.sigma_at(steps[0]), schedule.sigma_at(steps[1]),
                                   schedule.sigma_at(steps[2])};
  const RowMatrix cot = random_matrix(3, 4, rng);
  const auto trace = score_forward_trace(params, e0, sigmas);
  RowMatrix grad_in;
  score_backward(params, trace, cot, &grad_in);
  const auto numeric_in = numeric_gradient(
      [&](const Vector& x) {
        return (score_forward(params, unflatten(x, 3, 4), sigmas).array() * cot.array()).sum();
      },
      flatten(e0), 1e-5);
  err = std::max(err, relative_error(flatten(grad_in), numeric_in));
  return err;
}

inline double bpr_gradient_error(Rng& rng) {
  const RowMatrix u = random_matrix(5, 8, rng);
  const RowMatrix p = random_matrix(5, 8, rng);
  const RowMatrix n = random_matrix(5, 8, rng);
  const auto r = bpr_loss(u, p, n);
  Vector all(3 * u.size());
  all << flatten(u), flatten(p), flatten(n);
  const auto numeric = numeric_gradient(
      [&](const Vector& x) {
        const auto s = u.size();
        return bpr_loss(unflatten(x.segment(0, s), 5, 8), unflatten(x.segment(s, s), 5, 8),
                        unflatten(x.segment(2 * s, s), 5, 8))
            .loss;
      },
      all, 1e-6);
  Vector analytic(all.size());
  analytic << flatten(r.grad_user), flatten(r.grad_pos), flatten(r.grad_neg);
  return relative_error(analytic, numeric);
}

inline double infonce_gradient_error(Rng& rng) {
  std::uniform_int_distribution<int> rows(2, 6);
  const int b = rows(rng);
  const RowMatrix a = random_matrix(b, 5, rng);
  const RowMatrix v = random_matrix(b, 5, rng);
  const double tau = 0.2 + 0.8 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto r = infonce_loss(a, v, tau);
  Vector all(2 * a.size());
  all << flatten(a), flatten(v);
  const auto numeric = numeric_gradient(
      [&](const Vector& x) {
        return infonce_loss(unflatten(x.head(a.size()), b, 5), unflatten(x.tail(a.size()), b, 5), tau).loss;
      },
      all, 1e-6);
  Vector analytic(all.size());
  analytic << flatten(r.grad_a), flatten(r.grad_b);
  return relative_error(analytic, numeric);
}

/// Random bipartite graph with every user and item touched at least once.
inline InteractionDataset random_graph(std::size_t users, std::size_t items, Rng& rng) {
  std::vector<Edge> train;
  std::bernoulli_distribution coin(0.4);
  for (index_t u = 0; u < users; ++u)
    for (index_t i = 0; i < items; ++i)
      if (coin(rng) || i == u % items || u == i % users) train.push_back({u, i});
  return make_dataset(users, items, std::move(train));
}

/// Adjoint of propagate + finalize against a scalar loss ⟨final, G⟩ + ½‖final‖².
inline double adjoint_gradient_error(Rng& rng) {
  const auto ds = random_graph(3, 4, rng);
  const auto adj = build_adjacency(ds);
  std::uniform_int_distribution<int> layer_pick(0, 3);
  const int layers = layer_pick(rng);
  std::vector<double> alphas(static_cast<std::size_t>(layers) + 1);
  double total = 0.0;
  for (auto& a : alphas) total += (a = 0.1 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  for (auto& a : alphas) a /= total;
  const RowMatrix theta = random_matrix(7, 3, rng);
  const RowMatrix g = random_matrix(7, 3, rng);

  auto loss = [&](const RowMatrix& t) {
    const RowMatrix f = finalize(propagate(t, adj, layers), alphas);
    return (f.array() * g.array()).sum() + 0.5 * f.squaredNorm();
  };
  const RowMatrix f = finalize(propagate(theta, adj, layers), alphas);
  const auto analytic = backward_through_propagation(g + f, adj, alphas).grad_theta;
  const auto numeric =
      numeric_gradient([&](const Vector& x) { return loss(unflatten(x, 7, 3)); }, flatten(theta), 1e-5);
  return relative_error(flatten(analytic), numeric);
}

/// Everything random in one encoder step on a 3-user/3-item graph; the
/// sampled offsets and constant targets are held fixed across the FD sweep.
struct EncoderInstance {
  InteractionDataset dataset;
  NormalizedAdjacency adjacency;
  std::vector<double> alphas;
  EmbeddingState state;
  StepSample sample;
  TrainConfig config;
};

inline EncoderInstance random_encoder_instance(Rng& rng, bool hard_negatives, ClMode mode) {
  auto ds = make_dataset(3, 3, {{0, 0}, {0, 1}, {1, 1}, {2, 2}, {1, 0}});
  auto adj = build_adjacency(ds);
  TrainConfig config;
  config.embed_dim = 4;
  config.lambda1 = 0.7;
  config.lambda2 = 0.05;
  config.tau = 0.3;
  config.cl_mode = mode;
  config.use_hard_neg = hard_negatives;
  EncoderInstance inst{std::move(ds), std::move(adj), uniform_alphas(2), {}, {}, config};
  inst.state.theta = random_matrix(6, 4, rng, 0.5);
  inst.state.refresh(inst.adjacency, inst.alphas);

  auto& s = inst.sample;
  s.triplets = {{0, 0, 2}, {1, 1, 2}, {2, 2, 0}, {0, 1, 2}};
  s.cl_users = {0, 1, 2};
  s.cl_items = {0, 1, 2};
  s.user_view_offset = random_matrix(3, 4, rng, 0.1);
  s.item_view_offset = random_matrix(3, 4, rng, 0.1);
  s.user_view_b = random_matrix(3, 4, rng, 0.5);
  s.item_view_b = random_matrix(3, 4, rng, 0.5);
  if (hard_negatives) s.hard_negatives = random_matrix(4, 4, rng, 0.5);
  return inst;
}

inline double end_to_end_gradient_error(Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  auto inst = random_encoder_instance(rng, coin(rng), coin(rng) ? ClMode::separate : ClMode::joint);
  const auto analytic =
      encoder_objective(inst.state, inst.adjacency, inst.alphas, 3, inst.sample, inst.config).grad_theta;
  const auto numeric = numeric_gradient(
      [&](const Vector& x) {
        EmbeddingState st;
        st.theta = unflatten(x, 6, 4);
        st.refresh(inst.adjacency, inst.alphas);
        return encoder_objective(st, inst.adjacency, inst.alphas, 3, inst.sample, inst.config).total;
      },
      flatten(inst.state.theta), 1e-5);
  return relative_error(flatten(analytic), numeric);
}

/// Two-sample energy-distance permutation test; returns the p-value.
inline double energy_test_pvalue(const RowMatrix& x, const RowMatrix& y, int permutations, Rng& rng) {
  const Eigen::Index n = x.rows(), m = y.rows(), total = n + m;
  RowMatrix z(total, x.cols());
  z << x, y;
  // packed upper triangle of pairwise distances
  std::vector<float> dist(static_cast<std::size_t>(total) * (total - 1) / 2);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < total; ++i)
    for (Eigen::Index j = i + 1; j < total; ++j) dist[k++] = static_cast<float>((z.row(i) - z.row(j)).norm());
  double all = 0.0;
  for (float d : dist) all += d;

  std::vector<unsigned char> label(static_cast<std::size_t>(total));
  for (Eigen::Index i = 0; i < total; ++i) label[i] = i < n ? 0 : 1;
  auto statistic = [&] {
    double within[3] = {0.0, 0.0, 0.0};
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < total; ++i) {
      const unsigned li = label[i];
      for (Eigen::Index j = i + 1; j < total; ++j) within[li + label[j]] += dist[idx++];
    }
    const double sxx = within[0], syy = within[2], sxy = all - sxx - syy;
    const double nn = static_cast<double>(n), mm = static_cast<double>(m);
    return 2.0 * sxy / (nn * mm) - 2.0 * sxx / (nn * nn) - 2.0 * syy / (mm * mm);
  };
  const double observed = statistic();
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(label.begin(), label.end(), rng);
    if (statistic() >= observed) ++exceed;
  }
  return (1.0 + exceed) / (1.0 + permutations);
}

/// Exact score of a point mass at the origin diffused to noise level σ.
inline ScoreFn point_mass_score(const SdeSchedule& schedule) {
  return [&schedule](const RowMatrix& e, double sigma) -> RowMatrix {
    const double s0 = schedule.sigma_min();
    return -e / (sigma * sigma - s0 * s0);
  };
}

}  // namespace scone::testing
