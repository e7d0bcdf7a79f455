#include "scone/synthetic.hpp"

#include "scone/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

namespace scone {

namespace {

std::string user_id(std::size_t u) { return "u" + std::to_string(u); }
std::string item_id(std::size_t i) { return "i" + std::to_string(i); }

}  // namespace

std::vector<RawInteraction> generate_interactions(const SyntheticSpec& spec) {
  if (spec.users == 0 || spec.items == 0 || spec.clusters == 0 || spec.clusters > spec.items)
    throw ConfigError("synthetic spec needs users, items and 1 <= clusters <= items");
  Rng rng(spec.seed);

  // items: random cluster, Zipf popularity by rank within the cluster
  std::vector<std::size_t> cluster_of(spec.items);
  std::vector<std::vector<std::size_t>> members(spec.clusters);
  std::vector<std::size_t> perm(spec.items);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t k = 0; k < spec.items; ++k) {
    cluster_of[perm[k]] = k % spec.clusters;
    members[k % spec.clusters].push_back(perm[k]);
  }
  std::vector<std::discrete_distribution<std::size_t>> within;
  std::vector<double> global_weight(spec.items);
  for (auto& m : members) {
    std::vector<double> wts(m.size());
    for (std::size_t r = 0; r < m.size(); ++r) {
      wts[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.popularity_exponent);
      global_weight[m[r]] = wts[r];
    }
    within.emplace_back(wts.begin(), wts.end());
  }
  std::discrete_distribution<std::size_t> global(global_weight.begin(), global_weight.end());

  // user activity: log-normal, rescaled to the interaction budget
  std::lognormal_distribution<double> activity(0.0, spec.activity_sigma);
  std::vector<double> raw(spec.users);
  for (auto& a : raw) a = activity(rng);
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  const double spare = static_cast<double>(spec.interactions) -
                       static_cast<double>(spec.min_user_interactions * spec.users);
  const std::size_t cap = spec.items / 2;

  std::vector<RawInteraction> out;
  out.reserve(spec.interactions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.clusters - 1);
  for (std::size_t u = 0; u < spec.users; ++u) {
    const auto want = std::min<std::size_t>(
        cap, spec.min_user_interactions +
                 static_cast<std::size_t>(std::max(0.0, std::round(spare * raw[u] / total))));
    // two or three preferred clusters per user
    const std::size_t n_pref = 2 + (unit(rng) < 0.5 ? 1 : 0);
    std::vector<std::size_t> pref;
    while (pref.size() < n_pref) {
      const auto c = pick_cluster(rng);
      if (std::find(pref.begin(), pref.end(), c) == pref.end()) pref.push_back(c);
    }
    std::unordered_set<std::size_t> chosen;
    std::size_t guard = 0;
    while (chosen.size() < want && guard++ < 50 * want) {
      std::size_t item;
      if (unit(rng) < spec.focus) {
        const auto c = pref[static_cast<std::size_t>(unit(rng) * static_cast<double>(pref.size())) % pref.size()];
        item = members[c][within[c](rng)];
      } else {
        item = global(rng);
      }
      if (chosen.insert(item).second) out.push_back({user_id(u), item_id(item)});
    }
  }
  return out;
}

std::vector<RawInteraction> planted_blocks(const PlantedSpec& spec) {
  if (spec.blocks == 0 || spec.users < spec.blocks || spec.items < spec.blocks)
    throw ConfigError("planted spec needs at least one user and item per block");
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RawInteraction> out;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t ub = u * spec.blocks / spec.users;
    bool any = false;
    for (std::size_t i = 0; i < spec.items; ++i) {
      const std::size_t ib = i * spec.blocks / spec.items;
      if (unit(rng) < (ub == ib ? spec.p_in : spec.p_out)) {
        out.push_back({user_id(u), item_id(i)});
        any = true;
      }
    }
    if (!any) out.push_back({user_id(u), item_id(ub * spec.items / spec.blocks)});
  }
  return out;
}

}  // namespace scone
