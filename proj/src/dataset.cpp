#include "scone/dataset.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace scone {

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const noexcept {
    const std::size_t h1 = std::hash<std::string>{}(p.first);
    const std::size_t h2 = std::hash<std::string>{}(p.second);
    return h1 ^ (h2 + 0x9e3779b97f4a7c15ULL + (h1 << 6) + (h1 >> 2));
  }
};

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r') ++pos;
    if (pos > start) tokens.emplace_back(line.substr(start, pos - start));
  }
  return tokens;
}

// floor with slack for ratios like 0.1 * 10 that land a hair under an integer
std::size_t share(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

void check_edges(const std::vector<Edge>& edges, std::size_t users, std::size_t items,
                 const char* split) {
  for (const auto& e : edges) {
    if (e.user >= users || e.item >= items)
      throw InputError(std::string(split) + " edge (" + std::to_string(e.user) + "," +
                       std::to_string(e.item) + ") out of range");
  }
}

}  // namespace

std::vector<RawInteraction> parse_interactions(std::istream& in, const std::string& source_name) {
  std::vector<RawInteraction> out;
  std::unordered_set<std::pair<std::string, std::string>, PairHash> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (tokens.size() < 2)
      throw ParseError(source_name, line_no, "expected at least 2 columns (user, item)");
    auto key = std::make_pair(tokens[0], tokens[1]);
    if (seen.insert(key).second) out.push_back({std::move(tokens[0]), std::move(tokens[1])});
  }
  if (out.empty()) throw EmptyDatasetError(source_name + ": no interactions");
  return out;
}

std::vector<RawInteraction> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open interaction file " + path.string());
  return parse_interactions(in, path.string());
}

index_t IdMap::intern(const std::string& raw_id) {
  auto [it, inserted] = index_.try_emplace(raw_id, static_cast<index_t>(raw_ids_.size()));
  if (inserted) raw_ids_.push_back(raw_id);
  return it->second;
}

index_t IdMap::at(const std::string& raw_id) const {
  auto it = index_.find(raw_id);
  if (it == index_.end()) throw InputError("unknown id " + raw_id);
  return it->second;
}

void InteractionDataset::UserIndex::build(std::size_t user_count, const std::vector<Edge>& edges) {
  offsets.assign(user_count + 1, 0);
  for (const auto& e : edges) ++offsets[e.user + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  items.assign(edges.size(), 0);
  auto cursor = offsets;
  for (const auto& e : edges) items[cursor[e.user]++] = e.item;
  for (std::size_t u = 0; u < user_count; ++u)
    std::sort(items.begin() + static_cast<std::ptrdiff_t>(offsets[u]),
              items.begin() + static_cast<std::ptrdiff_t>(offsets[u + 1]));
}

InteractionDataset::InteractionDataset(IdMap users, IdMap items, std::vector<Edge> train,
                                       std::vector<Edge> valid, std::vector<Edge> test)
    : users_(std::move(users)),
      items_(std::move(items)),
      train_(std::move(train)),
      valid_(std::move(valid)),
      test_(std::move(test)) {
  check_edges(train_, user_count(), item_count(), "train");
  check_edges(valid_, user_count(), item_count(), "valid");
  check_edges(test_, user_count(), item_count(), "test");

  std::vector<Edge> all;
  all.reserve(train_.size() + valid_.size() + test_.size());
  all.insert(all.end(), train_.begin(), train_.end());
  all.insert(all.end(), valid_.begin(), valid_.end());
  all.insert(all.end(), test_.begin(), test_.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw InputError("train/valid/test splits overlap or contain duplicates");

  train_index_.build(user_count(), train_);
  valid_index_.build(user_count(), valid_);
  test_index_.build(user_count(), test_);
}

bool InteractionDataset::is_train_edge(index_t user, index_t item) const {
  auto row = train_items(user);
  return std::binary_search(row.begin(), row.end(), item);
}

std::vector<std::size_t> InteractionDataset::user_train_degrees() const {
  std::vector<std::size_t> deg(user_count(), 0);
  for (const auto& e : train_) ++deg[e.user];
  return deg;
}

std::vector<std::size_t> InteractionDataset::item_train_degrees() const {
  std::vector<std::size_t> deg(item_count(), 0);
  for (const auto& e : train_) ++deg[e.item];
  return deg;
}

InteractionDataset split_dataset(const std::vector<RawInteraction>& interactions,
                                 const SplitRatios& ratios, std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0)
    throw ConfigError("split ratios must be non-negative");
  if (interactions.empty()) throw EmptyDatasetError("no interactions to split");

  IdMap users;
  IdMap items;
  std::vector<std::vector<index_t>> per_user;
  for (const auto& r : interactions) {
    const index_t u = users.intern(r.user);
    const index_t i = items.intern(r.item);
    if (u >= per_user.size()) per_user.resize(u + 1);
    per_user[u].push_back(i);
  }

  Rng rng(seed);
  std::vector<Edge> train;
  std::vector<Edge> valid;
  std::vector<Edge> test;
  std::size_t excluded = 0;
  for (index_t u = 0; u < per_user.size(); ++u) {
    auto& row = per_user[u];
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    if (row.empty()) {
      ++excluded;
      continue;
    }
    std::shuffle(row.begin(), row.end(), rng);
    const std::size_t n = row.size();
    const std::size_t n_test = share(ratios.test, n);
    const std::size_t n_valid = share(ratios.valid, n);
    const std::size_t n_train = n - n_test - n_valid;
    for (std::size_t k = 0; k < n; ++k) {
      const Edge e{u, row[k]};
      if (k < n_train)
        train.push_back(e);
      else if (k < n_train + n_valid)
        valid.push_back(e);
      else
        test.push_back(e);
    }
  }
  std::sort(train.begin(), train.end());
  std::sort(valid.begin(), valid.end());
  std::sort(test.begin(), test.end());

  InteractionDataset ds(std::move(users), std::move(items), std::move(train), std::move(valid),
                        std::move(test));
  ds.excluded_users = excluded;
  return ds;
}

std::vector<NormalizedAdjacency::Entry> NormalizedAdjacency::entries() const {
  std::vector<Entry> out;
  out.reserve(nonzeros());
  for (Eigen::Index r = 0; r < matrix_.outerSize(); ++r)
    for (Sparse::InnerIterator it(matrix_, r); it; ++it)
      out.push_back({static_cast<index_t>(it.row()), static_cast<index_t>(it.col()), it.value()});
  return out;
}

NormalizedAdjacency build_adjacency(const InteractionDataset& dataset) {
  if (dataset.train_edges().empty()) throw InputError("adjacency needs at least one train edge");
  const auto users = dataset.user_count();
  const auto nodes = static_cast<Eigen::Index>(dataset.node_count());
  const auto udeg = dataset.user_train_degrees();
  const auto ideg = dataset.item_train_degrees();

  std::vector<Eigen::Triplet<double, std::int64_t>> triplets;
  triplets.reserve(2 * dataset.train_edges().size());
  for (const auto& e : dataset.train_edges()) {
    const double v = 1.0 / std::sqrt(static_cast<double>(udeg[e.user]) *
                                     static_cast<double>(ideg[e.item]));
    const auto row = static_cast<std::int64_t>(e.user);
    const auto col = static_cast<std::int64_t>(users + e.item);
    triplets.emplace_back(row, col, v);
    triplets.emplace_back(col, row, v);
  }
  NormalizedAdjacency::Sparse m(nodes, nodes);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return NormalizedAdjacency(std::move(m));
}

index_t draw_negative(const InteractionDataset& dataset, index_t user, Rng& rng) {
  std::uniform_int_distribution<index_t> pick(0, static_cast<index_t>(dataset.item_count() - 1));
  for (int attempt = 0; attempt < kNegativeRejectionCap; ++attempt) {
    const index_t item = pick(rng);
    if (!dataset.is_train_edge(user, item)) return item;
  }
  throw SaturationError("negative sampling saturated for user " + std::to_string(user) + " after " +
                        std::to_string(kNegativeRejectionCap) + " attempts");
}

TripletBatch sample_triplets(const InteractionDataset& dataset, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const auto& edges = dataset.train_edges();
  if (edges.empty()) throw InputError("no train edges to sample from");
  std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
  TripletBatch batch;
  batch.triplets.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const Edge& e = edges[pick(rng)];
    batch.triplets.push_back({e.user, e.item, draw_negative(dataset, e.user, rng)});
  }
  return batch;
}

namespace {

void write_edges(const std::filesystem::path& path, const std::vector<Edge>& edges) {
  io::atomic_write(
      path,
      [&](std::ostream& out) {
        for (const auto& e : edges) out << e.user << '\t' << e.item << '\n';
      },
      false);
}

void write_map(const std::filesystem::path& path, const IdMap& map) {
  io::atomic_write(
      path,
      [&](std::ostream& out) {
        for (std::size_t i = 0; i < map.size(); ++i) out << i << '\t' << map.raw_ids()[i] << '\n';
      },
      false);
}

std::vector<Edge> read_edges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open split file " + path.string());
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 2) throw ParseError(path.string(), line_no, "expected 2 columns");
    try {
      edges.push_back({static_cast<index_t>(std::stoul(tokens[0])),
                       static_cast<index_t>(std::stoul(tokens[1]))});
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), line_no, "non-numeric index");
    }
  }
  return edges;
}

IdMap read_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open id map " + path.string());
  IdMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), line_no, "expected 2 columns");
    std::size_t index = 0;
    try {
      index = std::stoul(line.substr(0, tab));
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), line_no, "non-numeric index");
    }
    if (index != map.size()) throw ParseError(path.string(), line_no, "indices must be dense");
    if (map.intern(line.substr(tab + 1)) != index)
      throw ParseError(path.string(), line_no, "duplicate raw id");
  }
  return map;
}

}  // namespace

void write_split(const InteractionDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_edges(dir / "train.tsv", dataset.train_edges());
  write_edges(dir / "valid.tsv", dataset.valid_edges());
  write_edges(dir / "test.tsv", dataset.test_edges());
  write_map(dir / "user_map.tsv", dataset.users());
  write_map(dir / "item_map.tsv", dataset.items());
}

InteractionDataset read_split(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("data directory not found: " + dir.string());
  return InteractionDataset(read_map(dir / "user_map.tsv"), read_map(dir / "item_map.tsv"),
                            read_edges(dir / "train.tsv"), read_edges(dir / "valid.tsv"),
                            read_edges(dir / "test.tsv"));
}

}  // namespace scone
