#pragma once

#include "scone/dataset.hpp"
#include "scone/types.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scone {

/// Which held-out split is being ranked. Ranking for `valid` masks train
/// items; ranking for `test` masks train and valid items.
enum class EvalSplit { valid, test };

/// Top-k items for one user by inner product of final embeddings, masked
/// items removed, ties broken by ascending item index.
std::vector<index_t> rank_items(index_t user, const RowMatrix& final_embeddings,
                                const InteractionDataset& dataset, std::size_t k, EvalSplit split);

/// rank_items for every user.
std::vector<std::vector<index_t>> rank_all_users(const RowMatrix& final_embeddings,
                                                 const InteractionDataset& dataset, std::size_t k,
                                                 EvalSplit split);

/// Held-out items of each user (sorted).
std::vector<std::vector<index_t>> ground_truth(const InteractionDataset& dataset, EvalSplit split);

struct RankingResult {
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::size_t k = 0;
  /// Users with at least one held-out item, and their individual scores.
  std::vector<index_t> users;
  std::vector<double> per_user_recall;
  std::vector<double> per_user_ndcg;
};

/// Macro-averaged Recall@K and NDCG@K with binary gains. Users without
/// held-out items are skipped.
RankingResult recall_ndcg(std::span<const std::vector<index_t>> topk,
                          std::span<const std::vector<index_t>> truth, std::size_t k);

enum class Stratum { low = 0, mid = 1, top = 2 };
inline constexpr std::array<Stratum, 3> kStrata = {Stratum::low, Stratum::mid, Stratum::top};
std::string_view stratum_name(Stratum s);

/// Degree quantile cut points. Entities sorted by (count, index) ascending:
/// the first ⌊low·n⌋ are `low`, up to ⌊mid·n⌋ are `mid`, the rest `top`.
struct StrataSpec {
  double low = 0.80;
  double mid = 0.95;
};

std::vector<Stratum> assign_strata(std::span<const std::size_t> counts, const StrataSpec& spec = {});

/// Macro metrics inside each user group; groups without evaluated users are
/// empty optionals.
std::array<std::optional<RankingResult>, 3> stratified_user_eval(const RankingResult& overall,
                                                                 std::span<const Stratum> user_strata);

/// Share of Recall@K contributed by each item group. The three values sum to
/// the overall Recall@K.
std::array<double, 3> decomposed_recall(std::span<const std::vector<index_t>> topk,
                                        std::span<const std::vector<index_t>> truth,
                                        std::span<const Stratum> item_strata, std::size_t k);

/// log E exp(−2‖g(u) − g(v)‖²) over distinct pairs of L2-normalized rows.
/// Exact over all pairs for up to `exact_limit` rows, otherwise estimated
/// from `sampled_pairs` uniform pairs.
struct UniformityOptions {
  std::size_t exact_limit = 5000;
  std::size_t sampled_pairs = 1000000;
};
double uniformity(const RowMatrix& embeddings, Rng& rng, const UniformityOptions& options = {});

/// Entity pools for the uniformity metric: a random sample of users and the
/// items with more than `item_min_interactions` train interactions.
struct UniformityPools {
  std::vector<index_t> users;
  std::vector<index_t> items;
};
struct UniformitySampleSpec {
  std::size_t user_sample = 5000;
  std::size_t item_min_interactions = 200;
};
UniformityPools select_uniformity_pools(const InteractionDataset& dataset,
                                        const UniformitySampleSpec& spec, Rng& rng);

/// Gathers rows of final embeddings: users by user index, items by item index.
RowMatrix gather_user_rows(const RowMatrix& final_embeddings, std::span<const index_t> users);
RowMatrix gather_item_rows(const RowMatrix& final_embeddings, std::size_t user_count,
                           std::span<const index_t> items);

/// One `metric,group,value` row.
struct MetricRow {
  std::string metric;
  std::string group;
  double value;
};

std::string format_metric_value(double v);
void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out);
void write_strata_tsv(std::span<const Stratum> strata, const std::filesystem::path& path);

}  // namespace scone
