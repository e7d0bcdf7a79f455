#pragma once

#include "scone/dataset.hpp"

#include <cstdint>
#include <vector>

namespace scone {

/// Clustered interaction generator with heavy-tailed user activity and
/// item popularity. Defaults give a MovieLens-100K-sized catalogue.
struct SyntheticSpec {
  std::size_t users = 943;
  std::size_t items = 1682;
  std::size_t interactions = 100000;
  std::size_t clusters = 16;
  std::size_t min_user_interactions = 20;
  double popularity_exponent = 0.9;  ///< Zipf exponent of within-cluster popularity
  double activity_sigma = 0.9;       ///< log-normal spread of user activity
  double focus = 0.8;                ///< share of a user's picks from preferred clusters
  std::uint64_t seed = 7;
};

std::vector<RawInteraction> generate_interactions(const SyntheticSpec& spec);

/// Block-diagonal planted structure: user b·(U/B)+j mostly interacts with
/// items of block b.
struct PlantedSpec {
  std::size_t users = 50;
  std::size_t items = 50;
  std::size_t blocks = 5;
  double p_in = 0.6;
  double p_out = 0.02;
  std::uint64_t seed = 11;
};

std::vector<RawInteraction> planted_blocks(const PlantedSpec& spec);

}  // namespace scone
