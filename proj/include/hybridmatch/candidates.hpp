#pragma once

// Generated-candidate lists: the GEN1 ingestion format for embeddings produced
// offline by the generative pipeline, and a seeded pseudo-generator used as a
// stand-in at desk scale.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hybridmatch/binary_io.hpp"
#include "hybridmatch/catalog.hpp"
#include "hybridmatch/error.hpp"
#include "hybridmatch/rng.hpp"

namespace hm {

struct GeneratedCandidate {
  std::string gen_id;
  std::vector<float> semantic_embedding;
  std::string source_query;
  std::uint32_t round = 0;
  // Set by pseudo_generate only: the Top item the candidate was perturbed from.
  std::string anchor_item;

  bool operator==(const GeneratedCandidate&) const = default;
};

using CandidateMap = std::map<std::string, std::vector<GeneratedCandidate>>;

struct CandidateSet {
  std::uint32_t d_sem = 0;
  CandidateMap by_query;

  bool operator==(const CandidateSet&) const = default;
};

struct PseudoGenConfig {
  float anchor_noise_sigma = 0.1f;
  int per_query_count = 5;
  std::uint64_t seed = 0;
};

// GEN1: "GEN1", u32 d_sem, u32 count, records (str16 gen_id, str16 source_query,
// u32 round, f32 x d_sem). Records are written grouped by query, in list order.

inline std::string encode_candidates(const CandidateSet& set) {
  io::Writer w;
  w.bytes("GEN1");
  w.u32(set.d_sem);
  std::uint32_t count = 0;
  for (const auto& [q, list] : set.by_query) count += static_cast<std::uint32_t>(list.size());
  w.u32(count);
  for (const auto& [q, list] : set.by_query) {
    for (const auto& c : list) {
      if (c.source_query != q)
        throw Error(ErrorKind::MalformedFile, "candidate " + c.gen_id + " filed under wrong query");
      detail::check_length(c.semantic_embedding.size(), set.d_sem, "candidate " + c.gen_id);
      detail::check_finite(c.semantic_embedding, "candidate " + c.gen_id);
      w.str16(c.gen_id);
      w.str16(c.source_query);
      w.u32(c.round);
      w.floats(c.semantic_embedding);
    }
  }
  return w.buffer();
}

/// An empty body (zero-length file) decodes to an empty set with d_sem = 0.
inline CandidateSet decode_candidates(std::string bytes) {
  CandidateSet set;
  if (bytes.empty()) return set;
  io::Reader r(std::move(bytes));
  r.expect_magic("GEN1");
  set.d_sem = r.u32();
  const std::uint32_t count = r.u32();
  if (set.d_sem == 0 && count > 0) throw Error(ErrorKind::MalformedFile, "d_sem must be positive");
  for (std::uint32_t i = 0; i < count; ++i) {
    GeneratedCandidate c;
    c.gen_id = r.str16();
    c.source_query = r.str16();
    c.round = r.u32();
    c.semantic_embedding = r.floats(set.d_sem);
    detail::check_finite(c.semantic_embedding, "candidate " + c.gen_id);
    set.by_query[c.source_query].push_back(std::move(c));
  }
  if (!r.at_end()) throw Error(ErrorKind::MalformedFile, "trailing bytes after candidate records");
  return set;
}

inline CandidateSet load_candidates(const std::filesystem::path& path) {
  return decode_candidates(io::read_file(path));
}

/// As load_candidates, additionally checking the embedding width against a store.
inline CandidateSet load_candidates(const std::filesystem::path& path, const EmbeddingStore& store) {
  CandidateSet set = load_candidates(path);
  if (!set.by_query.empty() && set.d_sem != store.d_sem)
    throw Error(ErrorKind::DimensionMismatch, "candidate d_sem " + std::to_string(set.d_sem) +
                                                  " vs store d_sem " + std::to_string(store.d_sem));
  return set;
}

inline void save_candidates(const CandidateSet& set, const std::filesystem::path& path) {
  io::write_file(path, encode_candidates(set));
}

inline std::vector<float> l2_normalized(std::vector<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq == 0.0) throw Error(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
  return v;
}

/// For every query: per_query_count candidates, each the L2-normalized
/// embedding of a seeded random Top item plus sigma-scaled Gaussian noise.
inline CandidateSet pseudo_generate(const EmbeddingStore& store, const PseudoGenConfig& config) {
  if (config.anchor_noise_sigma < 0.0f) throw Error(ErrorKind::InvalidArgument, "sigma must be >= 0");
  if (config.per_query_count < 0) throw Error(ErrorKind::InvalidArgument, "per_query_count must be >= 0");
  const auto tops = store.item_ids(Role::Top);
  if (tops.empty() || store.queries.empty())
    throw Error(ErrorKind::InvalidArgument, "pseudo_generate needs at least one query and one top item");

  SplitMix64 rng(config.seed);
  CandidateSet set;
  set.d_sem = store.d_sem;
  for (const auto& [qid, q] : store.queries) {
    auto& list = set.by_query[qid];
    for (int n = 0; n < config.per_query_count; ++n) {
      const std::string& anchor = tops[rng.below(tops.size())];
      std::vector<float> e = store.item(anchor).semantic_embedding;
      for (float& x : e) x += static_cast<float>(config.anchor_noise_sigma * rng.gaussian());
      GeneratedCandidate c;
      c.gen_id = qid + "#g" + std::to_string(n);
      c.semantic_embedding = l2_normalized(std::move(e));
      c.source_query = qid;
      c.round = static_cast<std::uint32_t>(n);
      c.anchor_item = anchor;
      list.push_back(std::move(c));
    }
  }
  return set;
}

}  // namespace hm
