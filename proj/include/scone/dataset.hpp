#pragma once

#include "scone/types.hpp"

#include <Eigen/SparseCore>

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scone {

/// A user-item interaction keyed by the raw identifiers found in the input file.
struct RawInteraction {
  std::string user;
  std::string item;

  bool operator==(const RawInteraction&) const = default;
};

/// A user-item interaction over dense indices.
struct Edge {
  index_t user = 0;
  index_t item = 0;

  auto operator<=>(const Edge&) const = default;
};

/// Parses `<user>\t<item>[\t...]` lines. Extra columns are ignored and exact
/// repeats are dropped, keeping the order of first occurrence.
std::vector<RawInteraction> parse_interactions(std::istream& in, const std::string& source_name);
std::vector<RawInteraction> load_interactions(const std::filesystem::path& path);

/// Bijection between raw identifiers and dense indices, assigned in order of
/// first appearance.
class IdMap {
 public:
  index_t intern(const std::string& raw_id);
  index_t at(const std::string& raw_id) const;
  const std::string& raw(index_t index) const { return raw_ids_.at(index); }
  std::size_t size() const noexcept { return raw_ids_.size(); }
  const std::vector<std::string>& raw_ids() const noexcept { return raw_ids_; }

 private:
  std::vector<std::string> raw_ids_;
  std::unordered_map<std::string, index_t> index_;
};

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
};

/// Users, items and the three disjoint interaction splits. Immutable once built.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  InteractionDataset(IdMap users, IdMap items, std::vector<Edge> train, std::vector<Edge> valid,
                     std::vector<Edge> test);

  std::size_t user_count() const noexcept { return users_.size(); }
  std::size_t item_count() const noexcept { return items_.size(); }
  std::size_t node_count() const noexcept { return user_count() + item_count(); }

  const std::vector<Edge>& train_edges() const noexcept { return train_; }
  const std::vector<Edge>& valid_edges() const noexcept { return valid_; }
  const std::vector<Edge>& test_edges() const noexcept { return test_; }

  const IdMap& users() const noexcept { return users_; }
  const IdMap& items() const noexcept { return items_; }

  /// Sorted item lists per user.
  std::span<const index_t> train_items(index_t user) const { return train_index_.row(user); }
  std::span<const index_t> valid_items(index_t user) const { return valid_index_.row(user); }
  std::span<const index_t> test_items(index_t user) const { return test_index_.row(user); }

  bool is_train_edge(index_t user, index_t item) const;

  /// Train-interaction degree of every user / item.
  std::vector<std::size_t> user_train_degrees() const;
  std::vector<std::size_t> item_train_degrees() const;

  /// Users that were dropped for lacking interactions while splitting.
  std::size_t excluded_users = 0;

 private:
  struct UserIndex {
    std::vector<std::size_t> offsets;
    std::vector<index_t> items;

    void build(std::size_t user_count, const std::vector<Edge>& edges);
    std::span<const index_t> row(index_t user) const {
      return {items.data() + offsets.at(user), items.data() + offsets.at(user + 1)};
    }
  };

  IdMap users_;
  IdMap items_;
  std::vector<Edge> train_;
  std::vector<Edge> valid_;
  std::vector<Edge> test_;
  UserIndex train_index_;
  UserIndex valid_index_;
  UserIndex test_index_;
};

/// Per-user shuffled split. Each user's valid and test shares are rounded
/// down and the remainder goes to train, so every user keeps a train edge.
InteractionDataset split_dataset(const std::vector<RawInteraction>& interactions,
                                 const SplitRatios& ratios, std::uint64_t seed);

/// D^{-1/2} A D^{-1/2} over the bipartite user-item graph built from the train
/// split. Nodes are users first, then items (item i is node user_count + i).
class NormalizedAdjacency {
 public:
  using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;

  struct Entry {
    index_t row;
    index_t col;
    double value;
  };

  explicit NormalizedAdjacency(Sparse matrix) : matrix_(std::move(matrix)) {}

  std::size_t node_count() const noexcept { return static_cast<std::size_t>(matrix_.rows()); }
  std::size_t nonzeros() const noexcept { return static_cast<std::size_t>(matrix_.nonZeros()); }
  const Sparse& matrix() const noexcept { return matrix_; }

  /// Entries in (row, col) lexicographic order.
  std::vector<Entry> entries() const;
  double value(index_t row, index_t col) const { return matrix_.coeff(row, col); }

 private:
  Sparse matrix_;
};

NormalizedAdjacency build_adjacency(const InteractionDataset& dataset);

struct Triplet {
  index_t user;
  index_t pos_item;
  index_t neg_item;
};

struct TripletBatch {
  std::vector<Triplet> triplets;
  std::size_t size() const noexcept { return triplets.size(); }
};

inline constexpr int kNegativeRejectionCap = 100;

/// Uniform item the user has not interacted with in train. Throws
/// SaturationError after kNegativeRejectionCap rejected draws.
index_t draw_negative(const InteractionDataset& dataset, index_t user, Rng& rng);

/// Positives uniform over train edges (with replacement), negatives by
/// rejection sampling.
TripletBatch sample_triplets(const InteractionDataset& dataset, std::size_t batch_size, Rng& rng);

/// Split manifest: train.tsv / valid.tsv / test.tsv with dense index pairs
/// and user_map.tsv / item_map.tsv with `index\traw_id` rows.
void write_split(const InteractionDataset& dataset, const std::filesystem::path& dir);
InteractionDataset read_split(const std::filesystem::path& dir);

}  // namespace scone
