#pragma once

// Item/query data model, the EMB1 embedding-store format, n-core filtering
// and alignment bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hybridmatch/binary_io.hpp"
#include "hybridmatch/error.hpp"

namespace hm {

enum class Role : std::uint8_t { Top = 0, Bottom = 1 };

/// How a bottom image was placed on the canvas before feature extraction.
/// The pixel work happens in the offline extractor; the engine only keeps provenance.
struct AlignmentDescriptor {
  float scale = 0.5f;            // rescale factor applied to the product image
  float vertical_offset = 0.5f;  // top edge of the placed image, as a fraction of canvas height

  bool operator==(const AlignmentDescriptor&) const = default;
};

struct ItemRecord {
  std::string id;
  Role role = Role::Top;
  std::vector<float> feature;             // backbone feature, length d_raw
  std::vector<float> semantic_embedding;  // joint vision-language embedding, length d_sem
  bool aligned = false;
  // In-memory only; EMB1 persists just the aligned flag.
  std::optional<AlignmentDescriptor> alignment;

  bool operator==(const ItemRecord&) const = default;
};

struct QueryRecord {
  std::string id;
  std::vector<float> feature;  // feature of the partially-masked query image
  std::optional<std::string> shown_bottom;
  std::optional<std::string> ground_truth_top;

  bool operator==(const QueryRecord&) const = default;
};

struct InteractionPair {
  std::string query_id;
  std::string item_id;

  bool operator==(const InteractionPair&) const = default;
  auto operator<=>(const InteractionPair&) const = default;
};

/// Immutable after construction by convention; share by const reference.
struct EmbeddingStore {
  std::uint32_t d_raw = 0;
  std::uint32_t d_sem = 0;
  std::map<std::string, ItemRecord> items;  // ordered: canonical serialization order
  std::map<std::string, QueryRecord> queries;
  std::vector<InteractionPair> pairs;

  bool operator==(const EmbeddingStore&) const = default;

  const ItemRecord& item(const std::string& id) const {
    auto it = items.find(id);
    if (it == items.end()) throw Error(ErrorKind::UnknownEntity, "no item '" + id + "'");
    return it->second;
  }

  const QueryRecord& query(const std::string& id) const {
    auto it = queries.find(id);
    if (it == queries.end()) throw Error(ErrorKind::UnknownEntity, "no query '" + id + "'");
    return it->second;
  }

  std::vector<std::string> item_ids(Role role) const {
    std::vector<std::string> ids;
    for (const auto& [id, item] : items)
      if (item.role == role) ids.push_back(id);
    return ids;
  }
};

namespace detail {

inline void check_finite(std::span<const float> values, const std::string& what) {
  for (float v : values)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, what);
}

inline void check_length(std::size_t got, std::size_t want, const std::string& what) {
  if (got != want) {
    throw Error(ErrorKind::DimensionMismatch,
                what + ": length " + std::to_string(got) + ", expected " + std::to_string(want));
  }
}

}  // namespace detail

/// Checks every store invariant; throws the first violation found.
inline void validate(const EmbeddingStore& store) {
  if (store.d_raw == 0 || store.d_sem == 0)
    throw Error(ErrorKind::MalformedFile, "dimensions must be positive");

  for (const auto& [key, item] : store.items) {
    if (key != item.id) throw Error(ErrorKind::MalformedFile, "item key/id mismatch for " + item.id);
    detail::check_length(item.feature.size(), store.d_raw, "item " + item.id + " feature");
    detail::check_length(item.semantic_embedding.size(), store.d_sem,
                         "item " + item.id + " semantic_embedding");
    detail::check_finite(item.feature, "item " + item.id + " feature");
    detail::check_finite(item.semantic_embedding, "item " + item.id + " semantic_embedding");
  }

  for (const auto& [key, q] : store.queries) {
    if (key != q.id) throw Error(ErrorKind::MalformedFile, "query key/id mismatch for " + q.id);
    if (store.items.contains(q.id))
      throw Error(ErrorKind::MalformedFile, "query id '" + q.id + "' collides with an item id");
    detail::check_length(q.feature.size(), store.d_raw, "query " + q.id + " feature");
    detail::check_finite(q.feature, "query " + q.id + " feature");
    if (q.shown_bottom) {
      auto it = store.items.find(*q.shown_bottom);
      if (it == store.items.end() || it->second.role != Role::Bottom)
        throw Error(ErrorKind::DanglingReference,
                    "query " + q.id + " shown_bottom '" + *q.shown_bottom + "' is not a bottom item");
    }
    if (q.ground_truth_top) {
      auto it = store.items.find(*q.ground_truth_top);
      if (it == store.items.end() || it->second.role != Role::Top)
        throw Error(ErrorKind::DanglingReference, "query " + q.id + " ground_truth_top '" +
                                                      *q.ground_truth_top + "' is not a top item");
    }
  }

  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& p : store.pairs) {
    if (!store.queries.contains(p.query_id))
      throw Error(ErrorKind::DanglingReference, "pair references unknown query '" + p.query_id + "'");
    if (!store.items.contains(p.item_id))
      throw Error(ErrorKind::DanglingReference, "pair references unknown item '" + p.item_id + "'");
    if (!seen.emplace(p.query_id, p.item_id).second)
      throw Error(ErrorKind::MalformedFile, "duplicate pair (" + p.query_id + ", " + p.item_id + ")");
  }
}

/// Serializes to the EMB1 byte layout. Items then queries, each in ascending id order.
inline std::string encode_store(const EmbeddingStore& store) {
  validate(store);
  io::Writer w;
  w.bytes("EMB1");
  w.u32(store.d_raw);
  w.u32(store.d_sem);
  w.u32(static_cast<std::uint32_t>(store.items.size()));
  w.u32(static_cast<std::uint32_t>(store.queries.size()));
  for (const auto& [id, item] : store.items) {
    w.str16(id);
    w.u8(static_cast<std::uint8_t>(item.role));
    w.u8(item.aligned ? 1 : 0);
    w.floats(item.feature);
    w.floats(item.semantic_embedding);
  }
  for (const auto& [id, q] : store.queries) {
    w.str16(id);
    w.str16(q.shown_bottom.value_or(""));
    w.str16(q.ground_truth_top.value_or(""));
    w.floats(q.feature);
  }
  w.u32(static_cast<std::uint32_t>(store.pairs.size()));
  for (const auto& p : store.pairs) {
    w.str16(p.query_id);
    w.str16(p.item_id);
  }
  return w.buffer();
}

inline EmbeddingStore decode_store(std::string bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("EMB1");
  EmbeddingStore store;
  store.d_raw = r.u32();
  store.d_sem = r.u32();
  const std::uint32_t item_count = r.u32();
  const std::uint32_t query_count = r.u32();
  if (store.d_raw == 0 || store.d_sem == 0)
    throw Error(ErrorKind::MalformedFile, "dimensions must be positive");

  for (std::uint32_t i = 0; i < item_count; ++i) {
    ItemRecord item;
    item.id = r.str16();
    const std::uint8_t role = r.u8();
    if (role > 1) throw Error(ErrorKind::MalformedFile, "bad role byte for item " + item.id);
    item.role = static_cast<Role>(role);
    const std::uint8_t aligned = r.u8();
    if (aligned > 1) throw Error(ErrorKind::MalformedFile, "bad aligned flag for item " + item.id);
    item.aligned = aligned == 1;
    item.feature = r.floats(store.d_raw);
    item.semantic_embedding = r.floats(store.d_sem);
    std::string key = item.id;
    if (!store.items.emplace(std::move(key), std::move(item)).second)
      throw Error(ErrorKind::MalformedFile, "duplicate item id");
  }
  for (std::uint32_t i = 0; i < query_count; ++i) {
    QueryRecord q;
    q.id = r.str16();
    if (auto s = r.str16(); !s.empty()) q.shown_bottom = std::move(s);
    if (auto s = r.str16(); !s.empty()) q.ground_truth_top = std::move(s);
    q.feature = r.floats(store.d_raw);
    std::string key = q.id;
    if (!store.queries.emplace(std::move(key), std::move(q)).second)
      throw Error(ErrorKind::MalformedFile, "duplicate query id");
  }
  const std::uint32_t pair_count = r.u32();
  store.pairs.reserve(pair_count);
  for (std::uint32_t i = 0; i < pair_count; ++i) {
    InteractionPair p;
    p.query_id = r.str16();
    p.item_id = r.str16();
    store.pairs.push_back(std::move(p));
  }
  if (!r.at_end()) throw Error(ErrorKind::MalformedFile, "trailing bytes after pair table");
  validate(store);
  return store;
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
  return decode_store(io::read_file(path));
}

inline void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  io::write_file(path, encode_store(store));
}

struct NCoreResult {
  std::set<std::string> kept_items;
  std::vector<InteractionPair> kept_pairs;
};

/// Keeps ids whose occurrence count over both pair endpoints lies in
/// [min_count, max_count], counted once on the input. Pairs survive when both
/// endpoints survive. Input order of pairs is preserved.
inline NCoreResult ncore_filter(std::span<const InteractionPair> pairs, int min_count = 5,
                                int max_count = 100) {
  if (min_count < 1 || max_count < min_count)
    throw Error(ErrorKind::InvalidBounds, "need 1 <= min_count <= max_count");

  std::unordered_map<std::string, int> counts;
  for (const auto& p : pairs) {
    ++counts[p.query_id];
    ++counts[p.item_id];
  }
  NCoreResult result;
  for (const auto& [id, c] : counts)
    if (c >= min_count && c <= max_count) result.kept_items.insert(id);
  for (const auto& p : pairs)
    if (result.kept_items.contains(p.query_id) && result.kept_items.contains(p.item_id))
      result.kept_pairs.push_back(p);
  return result;
}

/// Store-level n-core filter. Each pair counts as one top-bottom co-occurrence
/// (the paired top and the query's shown bottom); bounds apply to both roles.
/// Items outside the bounds are dropped, along with queries and pairs that
/// would reference them.
inline EmbeddingStore ncore_filter_store(const EmbeddingStore& store, int min_count = 5,
                                         int max_count = 100) {
  std::vector<InteractionPair> top_bottom;
  top_bottom.reserve(store.pairs.size());
  for (const auto& p : store.pairs) {
    const auto& q = store.query(p.query_id);
    if (q.shown_bottom) top_bottom.push_back({*q.shown_bottom, p.item_id});
  }
  const NCoreResult kept = ncore_filter(top_bottom, min_count, max_count);

  EmbeddingStore out;
  out.d_raw = store.d_raw;
  out.d_sem = store.d_sem;
  for (const auto& [id, item] : store.items)
    if (kept.kept_items.contains(id)) out.items.emplace(id, item);
  for (const auto& [id, q] : store.queries) {
    if (q.shown_bottom && !out.items.contains(*q.shown_bottom)) continue;
    if (q.ground_truth_top && !out.items.contains(*q.ground_truth_top)) continue;
    out.queries.emplace(id, q);
  }
  for (const auto& p : store.pairs) {
    const auto& q = store.query(p.query_id);
    if (!q.shown_bottom) continue;
    if (out.queries.contains(p.query_id) && out.items.contains(p.item_id)) out.pairs.push_back(p);
  }
  return out;
}

inline ItemRecord mark_aligned(const ItemRecord& item, const AlignmentDescriptor& descriptor = {}) {
  if (item.role != Role::Bottom)
    throw Error(ErrorKind::WrongRole, "only bottom items are aligned, got top '" + item.id + "'");
  ItemRecord out = item;
  out.aligned = true;
  out.alignment = descriptor;
  return out;
}

}  // namespace hm
