#include "scone/metrics.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace scone {

namespace {

// Merges the sorted masks of one user into the set of rankable items.
std::vector<index_t> candidates(const InteractionDataset& ds, index_t user, EvalSplit split) {
  auto train = ds.train_items(user);
  std::span<const index_t> valid;
  if (split == EvalSplit::test) valid = ds.valid_items(user);
  std::vector<index_t> out;
  out.reserve(ds.item_count());
  std::size_t a = 0;
  std::size_t b = 0;
  for (index_t i = 0; i < ds.item_count(); ++i) {
    while (a < train.size() && train[a] < i) ++a;
    while (b < valid.size() && valid[b] < i) ++b;
    const bool masked = (a < train.size() && train[a] == i) || (b < valid.size() && valid[b] == i);
    if (!masked) out.push_back(i);
  }
  return out;
}

std::vector<index_t> top_k(std::vector<index_t> items, const double* scores, std::size_t k) {
  const auto better = [scores](index_t x, index_t y) {
    return scores[x] > scores[y] || (scores[x] == scores[y] && x < y);
  };
  const std::size_t n = std::min(k, items.size());
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n), items.end(), better);
  items.resize(n);
  return items;
}

}  // namespace

std::vector<index_t> rank_items(index_t user, const RowMatrix& final_embeddings,
                                const InteractionDataset& dataset, std::size_t k, EvalSplit split) {
  if (k == 0) throw ConfigError("k must be >= 1");
  const auto users = static_cast<Eigen::Index>(dataset.user_count());
  const auto items = static_cast<Eigen::Index>(dataset.item_count());
  if (final_embeddings.rows() != users + items) throw ConfigError("embedding rows do not match dataset");
  const Vector scores = final_embeddings.middleRows(users, items) * final_embeddings.row(user).transpose();
  return top_k(candidates(dataset, user, split), scores.data(), k);
}

std::vector<std::vector<index_t>> rank_all_users(const RowMatrix& final_embeddings,
                                                 const InteractionDataset& dataset, std::size_t k,
                                                 EvalSplit split) {
  if (k == 0) throw ConfigError("k must be >= 1");
  const auto users = static_cast<Eigen::Index>(dataset.user_count());
  const auto items = static_cast<Eigen::Index>(dataset.item_count());
  if (final_embeddings.rows() != users + items)
    throw ConfigError("embedding rows (" + std::to_string(final_embeddings.rows()) +
                      ") do not match dataset nodes (" + std::to_string(users + items) + ")");
  std::vector<std::vector<index_t>> out(dataset.user_count());
  constexpr Eigen::Index kBlock = 256;
  const auto item_rows = final_embeddings.middleRows(users, items);
  for (Eigen::Index start = 0; start < users; start += kBlock) {
    const Eigen::Index count = std::min(kBlock, users - start);
    const RowMatrix scores = final_embeddings.middleRows(start, count) * item_rows.transpose();
    for (Eigen::Index r = 0; r < count; ++r) {
      const auto u = static_cast<index_t>(start + r);
      out[u] = top_k(candidates(dataset, u, split), scores.row(r).data(), k);
    }
  }
  return out;
}

std::vector<std::vector<index_t>> ground_truth(const InteractionDataset& dataset, EvalSplit split) {
  std::vector<std::vector<index_t>> out(dataset.user_count());
  for (index_t u = 0; u < dataset.user_count(); ++u) {
    auto row = split == EvalSplit::test ? dataset.test_items(u) : dataset.valid_items(u);
    out[u].assign(row.begin(), row.end());
  }
  return out;
}

RankingResult recall_ndcg(std::span<const std::vector<index_t>> topk,
                          std::span<const std::vector<index_t>> truth, std::size_t k) {
  if (topk.size() != truth.size()) throw ConfigError("top-k lists and ground truth differ in length");
  RankingResult r;
  r.k = k;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    const auto& held = truth[u];
    if (held.empty()) continue;
    std::vector<index_t> sorted(held.begin(), held.end());
    std::sort(sorted.begin(), sorted.end());
    double hits = 0.0;
    double dcg = 0.0;
    const std::size_t depth = std::min(k, topk[u].size());
    for (std::size_t rank = 0; rank < depth; ++rank) {
      if (std::binary_search(sorted.begin(), sorted.end(), topk[u][rank])) {
        hits += 1.0;
        dcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
      }
    }
    double idcg = 0.0;
    for (std::size_t j = 0; j < std::min(k, sorted.size()); ++j)
      idcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
    r.users.push_back(static_cast<index_t>(u));
    r.per_user_recall.push_back(hits / static_cast<double>(sorted.size()));
    r.per_user_ndcg.push_back(dcg / idcg);
  }
  if (!r.users.empty()) {
    const double n = static_cast<double>(r.users.size());
    r.recall_at_k = std::accumulate(r.per_user_recall.begin(), r.per_user_recall.end(), 0.0) / n;
    r.ndcg_at_k = std::accumulate(r.per_user_ndcg.begin(), r.per_user_ndcg.end(), 0.0) / n;
  }
  return r;
}

std::string_view stratum_name(Stratum s) {
  switch (s) {
    case Stratum::low: return "low";
    case Stratum::mid: return "mid";
    case Stratum::top: return "top";
  }
  return "?";
}

std::vector<Stratum> assign_strata(std::span<const std::size_t> counts, const StrataSpec& spec) {
  if (!(0.0 <= spec.low && spec.low <= spec.mid && spec.mid <= 1.0))
    throw ConfigError("strata boundaries must satisfy 0 <= low <= mid <= 1");
  const std::size_t n = counts.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });
  const auto low_end = static_cast<std::size_t>(std::floor(spec.low * static_cast<double>(n) + 1e-9));
  const auto mid_end = static_cast<std::size_t>(std::floor(spec.mid * static_cast<double>(n) + 1e-9));
  std::vector<Stratum> out(n, Stratum::top);
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (pos < low_end)
      out[order[pos]] = Stratum::low;
    else if (pos < mid_end)
      out[order[pos]] = Stratum::mid;
  }
  return out;
}

std::array<std::optional<RankingResult>, 3> stratified_user_eval(const RankingResult& overall,
                                                                 std::span<const Stratum> user_strata) {
  std::array<RankingResult, 3> groups;
  for (auto& g : groups) g.k = overall.k;
  for (std::size_t j = 0; j < overall.users.size(); ++j) {
    const auto u = overall.users[j];
    if (u >= user_strata.size()) throw ConfigError("user outside strata assignment");
    auto& g = groups[static_cast<std::size_t>(user_strata[u])];
    g.users.push_back(u);
    g.per_user_recall.push_back(overall.per_user_recall[j]);
    g.per_user_ndcg.push_back(overall.per_user_ndcg[j]);
  }
  std::array<std::optional<RankingResult>, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    auto& g = groups[s];
    if (g.users.empty()) continue;
    const double n = static_cast<double>(g.users.size());
    g.recall_at_k = std::accumulate(g.per_user_recall.begin(), g.per_user_recall.end(), 0.0) / n;
    g.ndcg_at_k = std::accumulate(g.per_user_ndcg.begin(), g.per_user_ndcg.end(), 0.0) / n;
    out[s] = std::move(g);
  }
  return out;
}

std::array<double, 3> decomposed_recall(std::span<const std::vector<index_t>> topk,
                                        std::span<const std::vector<index_t>> truth,
                                        std::span<const Stratum> item_strata, std::size_t k) {
  if (topk.size() != truth.size()) throw ConfigError("top-k lists and ground truth differ in length");
  std::array<double, 3> sums{0.0, 0.0, 0.0};
  std::size_t evaluated = 0;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    if (truth[u].empty()) continue;
    ++evaluated;
    std::vector<index_t> sorted(truth[u].begin(), truth[u].end());
    std::sort(sorted.begin(), sorted.end());
    std::array<double, 3> hits{0.0, 0.0, 0.0};
    const std::size_t depth = std::min(k, topk[u].size());
    for (std::size_t rank = 0; rank < depth; ++rank) {
      const auto item = topk[u][rank];
      if (std::binary_search(sorted.begin(), sorted.end(), item)) {
        if (item >= item_strata.size()) throw ConfigError("item outside strata assignment");
        hits[static_cast<std::size_t>(item_strata[item])] += 1.0;
      }
    }
    for (std::size_t s = 0; s < 3; ++s) sums[s] += hits[s] / static_cast<double>(sorted.size());
  }
  if (evaluated > 0)
    for (auto& s : sums) s /= static_cast<double>(evaluated);
  return sums;
}

double uniformity(const RowMatrix& embeddings, Rng& rng, const UniformityOptions& options) {
  const auto n = embeddings.rows();
  if (n < 2) throw ConfigError("uniformity needs at least 2 embeddings");
  const Vector norms = embeddings.rowwise().norm();
  if (norms.minCoeff() <= 0.0) throw Error("uniformity: zero-norm embedding");
  const RowMatrix g = norms.cwiseInverse().asDiagonal() * embeddings;

  // running log-sum-exp of −2‖g_i − g_j‖²
  double shift = -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  double pairs = 0.0;
  auto add = [&](double x) {
    if (x > shift) {
      acc = acc * std::exp(shift - x) + 1.0;
      shift = x;
    } else {
      acc += std::exp(x - shift);
    }
    pairs += 1.0;
  };
  auto potential = [&](Eigen::Index i, Eigen::Index j) {
    return -2.0 * (g.row(i) - g.row(j)).squaredNorm();
  };

  if (static_cast<std::size_t>(n) <= options.exact_limit) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) add(potential(i, j));
  } else {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (std::size_t s = 0; s < options.sampled_pairs; ++s) {
      const Eigen::Index i = pick(rng);
      Eigen::Index j = pick(rng);
      while (j == i) j = pick(rng);
      add(potential(i, j));
    }
  }
  return shift + std::log(acc / pairs);
}

UniformityPools select_uniformity_pools(const InteractionDataset& dataset,
                                        const UniformitySampleSpec& spec, Rng& rng) {
  UniformityPools pools;
  pools.users.resize(dataset.user_count());
  std::iota(pools.users.begin(), pools.users.end(), index_t{0});
  if (pools.users.size() > spec.user_sample) {
    std::shuffle(pools.users.begin(), pools.users.end(), rng);
    pools.users.resize(spec.user_sample);
    std::sort(pools.users.begin(), pools.users.end());
  }
  const auto degrees = dataset.item_train_degrees();
  for (index_t i = 0; i < degrees.size(); ++i)
    if (degrees[i] > spec.item_min_interactions) pools.items.push_back(i);
  return pools;
}

RowMatrix gather_user_rows(const RowMatrix& final_embeddings, std::span<const index_t> users) {
  RowMatrix out(static_cast<Eigen::Index>(users.size()), final_embeddings.cols());
  for (std::size_t k = 0; k < users.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = final_embeddings.row(users[k]);
  return out;
}

RowMatrix gather_item_rows(const RowMatrix& final_embeddings, std::size_t user_count,
                           std::span<const index_t> items) {
  RowMatrix out(static_cast<Eigen::Index>(items.size()), final_embeddings.cols());
  for (std::size_t k = 0; k < items.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) =
        final_embeddings.row(static_cast<Eigen::Index>(user_count + items[k]));
  return out;
}

std::string format_metric_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out) {
  out << "metric,group,value\n";
  for (const auto& r : rows) out << r.metric << ',' << r.group << ',' << format_metric_value(r.value) << '\n';
}

void write_strata_tsv(std::span<const Stratum> strata, const std::filesystem::path& path) {
  io::atomic_write(
      path,
      [&](std::ostream& out) {
        out << "entity_index\tgroup\n";
        for (std::size_t i = 0; i < strata.size(); ++i) out << i << '\t' << stratum_name(strata[i]) << '\n';
      },
      false);
}

}  // namespace scone
