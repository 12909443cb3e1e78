#pragma once

// Seeded synthetic catalogs with planted cluster structure: tops, bottoms and
// queries drawn around shared cluster centres, each query paired with tops of
// its own cluster. Used for fixtures, demos and recovery tests.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hybridmatch/catalog.hpp"
#include "hybridmatch/rng.hpp"

namespace hm {

struct SyntheticConfig {
  int n_tops = 200;
  int n_bottoms = 200;  // one query per bottom
  int pairs_per_query = 2;
  int clusters = 2;
  std::uint32_t d_raw = 16;
  std::uint32_t d_sem = 8;
  double feature_noise = 0.3;
  double query_noise = 0.05;
  std::uint64_t seed = 0;
};

struct SyntheticStore {
  EmbeddingStore store;
  std::map<std::string, int> cluster;  // for items and queries
};

inline std::string padded_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04d", prefix, i);
  return buf;
}

inline SyntheticStore make_cluster_store(const SyntheticConfig& cfg) {
  if (cfg.clusters < 1 || cfg.n_tops < cfg.clusters || cfg.n_bottoms < 0 || cfg.pairs_per_query < 0)
    throw Error(ErrorKind::InvalidArgument, "bad synthetic store configuration");
  SplitMix64 rng(cfg.seed);
  auto gaussian_vec = [&](std::size_t n, double scale) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(scale * rng.gaussian());
    return v;
  };
  auto around = [&](const std::vector<float>& centre, double noise) {
    std::vector<float> v = centre;
    for (auto& x : v) x += static_cast<float>(noise * rng.gaussian());
    return v;
  };

  std::vector<std::vector<float>> raw_centres, sem_centres;
  for (int c = 0; c < cfg.clusters; ++c) {
    raw_centres.push_back(gaussian_vec(cfg.d_raw, 1.0));
    sem_centres.push_back(gaussian_vec(cfg.d_sem, 1.0));
  }

  SyntheticStore out;
  EmbeddingStore& s = out.store;
  s.d_raw = cfg.d_raw;
  s.d_sem = cfg.d_sem;
  std::vector<std::vector<std::string>> tops_by_cluster(static_cast<std::size_t>(cfg.clusters));

  for (int i = 0; i < cfg.n_tops; ++i) {
    const int c = i % cfg.clusters;
    ItemRecord item{padded_id("top", i), Role::Top, around(raw_centres[static_cast<std::size_t>(c)], cfg.feature_noise),
                    around(sem_centres[static_cast<std::size_t>(c)], cfg.feature_noise), false, std::nullopt};
    out.cluster[item.id] = c;
    tops_by_cluster[static_cast<std::size_t>(c)].push_back(item.id);
    s.items.emplace(item.id, std::move(item));
  }
  for (int i = 0; i < cfg.n_bottoms; ++i) {
    const int c = i % cfg.clusters;
    ItemRecord bottom{padded_id("bot", i), Role::Bottom,
                      around(raw_centres[static_cast<std::size_t>(c)], cfg.feature_noise),
                      around(sem_centres[static_cast<std::size_t>(c)], cfg.feature_noise), false, std::nullopt};
    QueryRecord q{padded_id("q", i), around(bottom.feature, cfg.query_noise), bottom.id, std::nullopt};

    const auto& pool = tops_by_cluster[static_cast<std::size_t>(c)];
    const int want = std::min<int>(cfg.pairs_per_query, static_cast<int>(pool.size()));
    std::set<std::string> chosen;
    while (static_cast<int>(chosen.size()) < want) {
      const std::string& top = pool[rng.below(pool.size())];
      if (chosen.insert(top).second) {
        if (!q.ground_truth_top) q.ground_truth_top = top;
        s.pairs.push_back({q.id, top});
      }
    }
    out.cluster[bottom.id] = c;
    out.cluster[q.id] = c;
    s.items.emplace(bottom.id, std::move(bottom));
    s.queries.emplace(q.id, std::move(q));
  }
  validate(s);
  return out;
}

}  // namespace hm
