#pragma once

// Adaptive fusion: ground generated candidates to the most similar retrieved
// catalog item when their cosine similarity exceeds a threshold p.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hybridmatch/candidates.hpp"
#include "hybridmatch/catalog.hpp"
#include "hybridmatch/error.hpp"
#include "hybridmatch/retrieval.hpp"

namespace hm {

/// Cosine similarity, clamped to [-1, 1].
inline float cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::DimensionMismatch, "cosine of vectors with lengths " +
                                                  std::to_string(a.size()) + " and " +
                                                  std::to_string(b.size()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(ErrorKind::ZeroVector, "cosine of a zero vector");
  return static_cast<float>(std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0));
}

struct Retrieved {
  std::string item_id;
  float grounding_similarity = 0.0f;

  bool operator==(const Retrieved&) const = default;
};

struct Generated {
  std::string gen_id;

  bool operator==(const Generated&) const = default;
};

struct HybridEntry {
  std::size_t slot = 0;
  std::variant<Retrieved, Generated> source;

  bool is_retrieved() const noexcept { return std::holds_alternative<Retrieved>(source); }
  bool operator==(const HybridEntry&) const = default;
};

struct FusionConfig {
  float threshold_p = 0.5f;
  std::size_t k = 10;
  bool dedup = false;  // drop later entries grounded to an already-listed item
};

/// One entry per generated candidate, in input order. Candidate n becomes
/// Retrieved(i*, s*) when its best cosine s* over the retrieved list is
/// strictly greater than p, otherwise stays Generated. Ties in s* go to the
/// smaller item id. With config.dedup, repeated grounding targets are dropped
/// and slots renumbered.
inline std::vector<HybridEntry> ground(std::span<const GeneratedCandidate> generated,
                                       std::span<const ScoredItem> retrieved,
                                       const EmbeddingStore& store, const FusionConfig& config) {
  if (!(config.threshold_p >= -1.0f && config.threshold_p <= 1.0f))
    throw Error(ErrorKind::InvalidArgument, "threshold p must lie in [-1, 1]");
  if (generated.empty()) return {};
  if (retrieved.empty()) throw Error(ErrorKind::EmptyRetrievalList, "no retrieved items to ground to");

  std::vector<const ItemRecord*> items;
  items.reserve(retrieved.size());
  for (const auto& r : retrieved) items.push_back(&store.item(r.item_id));

  std::vector<HybridEntry> out;
  out.reserve(generated.size());
  std::set<std::string> used;
  for (const auto& g : generated) {
    const ItemRecord* best = nullptr;
    float best_sim = 0.0f;
    for (const ItemRecord* item : items) {
      const float s = cosine(g.semantic_embedding, item->semantic_embedding);
      if (!best || s > best_sim || (s == best_sim && item->id < best->id)) {
        best = item;
        best_sim = s;
      }
    }
    HybridEntry entry;
    entry.slot = out.size();
    if (best_sim > config.threshold_p) {
      if (config.dedup && !used.insert(best->id).second) continue;
      entry.source = Retrieved{best->id, best_sim};
    } else {
      entry.source = Generated{g.gen_id};
    }
    out.push_back(std::move(entry));
  }
  return out;
}

inline float retrieved_fraction(std::span<const HybridEntry> entries) {
  if (entries.empty()) throw Error(ErrorKind::EmptyList, "retrieved_fraction of an empty list");
  const auto n = std::count_if(entries.begin(), entries.end(),
                               [](const HybridEntry& e) { return e.is_retrieved(); });
  return static_cast<float>(static_cast<double>(n) / static_cast<double>(entries.size()));
}

struct SweepRow {
  float p = 0.0f;
  float retrieved_fraction = 0.0f;
  std::optional<float> score;
};

/// A single fusion instance: one query's generated and retrieved lists.
struct FusionInstance {
  std::vector<GeneratedCandidate> generated;
  std::vector<ScoredItem> retrieved;
};

/// retrieved_fraction over the pooled entries of all instances, for each p of
/// an ascending grid.
inline std::vector<SweepRow> sweep(std::span<const FusionInstance> instances,
                                   const EmbeddingStore& store, std::span<const float> p_grid) {
  for (std::size_t i = 0; i < p_grid.size(); ++i) {
    if (!(p_grid[i] >= -1.0f && p_grid[i] <= 1.0f))
      throw Error(ErrorKind::InvalidArgument, "grid values must lie in [-1, 1]");
    if (i > 0 && p_grid[i] < p_grid[i - 1]) throw Error(ErrorKind::InvalidArgument, "grid must be ascending");
  }
  std::vector<SweepRow> rows;
  rows.reserve(p_grid.size());
  for (float p : p_grid) {
    std::vector<HybridEntry> pooled;
    for (const auto& inst : instances) {
      auto entries = ground(inst.generated, inst.retrieved, store, {p, inst.generated.size(), false});
      pooled.insert(pooled.end(), entries.begin(), entries.end());
    }
    rows.push_back({p, retrieved_fraction(pooled), std::nullopt});
  }
  return rows;
}

inline std::vector<SweepRow> sweep(std::span<const GeneratedCandidate> generated,
                                   std::span<const ScoredItem> retrieved, const EmbeddingStore& store,
                                   std::span<const float> p_grid) {
  const FusionInstance inst{{generated.begin(), generated.end()}, {retrieved.begin(), retrieved.end()}};
  return sweep(std::span<const FusionInstance>(&inst, 1), store, p_grid);
}

/// Parses "lo:hi:step" into lo, lo+step, ... up to hi. A last point within
/// 1e-6 step of hi is snapped to hi exactly.
inline std::vector<float> parse_grid(const std::string& spec) {
  double lo = 0, hi = 0, step = 0;
  char tail = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &tail) != 3)
    throw Error(ErrorKind::InvalidArgument, "grid must look like lo:hi:step, got '" + spec + "'");
  if (!(step > 0) || hi < lo) throw Error(ErrorKind::InvalidArgument, "grid needs step > 0 and lo <= hi");
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-6));
  std::vector<float> grid;
  for (long i = 0; i <= n; ++i) {
    double v = lo + static_cast<double>(i) * step;
    if (std::abs(v - hi) < 1e-6 * step) v = hi;
    if (std::abs(v) < 1e-9 * step) v = 0.0;
    grid.push_back(static_cast<float>(v));
  }
  return grid;
}

/// CSV with header "p,retrieved_fraction,score"; 6 decimals; empty score when absent.
inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "p,retrieved_fraction,score\n";
  char buf[96];
  for (const auto& r : rows) {
    int n = std::snprintf(buf, sizeof buf, "%.6f,%.6f,", static_cast<double>(r.p),
                          static_cast<double>(r.retrieved_fraction));
    out.append(buf, static_cast<std::size_t>(n));
    if (r.score) {
      n = std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(*r.score));
      out.append(buf, static_cast<std::size_t>(n));
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace hm
