#pragma once

// Recommendation requests over an immutable model snapshot. The CLI and the
// HTTP service both go through recommend(), so identical requests produce
// identical JSON.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridmatch/candidates.hpp"
#include "hybridmatch/catalog.hpp"
#include "hybridmatch/fusion.hpp"
#include "hybridmatch/retrieval.hpp"

namespace hm {

struct RecommendRequest {
  std::optional<std::string> query_id;
  std::optional<std::vector<float>> query_feature;
  int k = 10;
  float threshold_p = 0.5f;
  bool include_generated = false;
};

/// Loaded state for serving. Never mutated once published.
struct ModelSnapshot {
  EmbeddingStore store;
  MatchModelParams params;
  CandidateSet candidates;
  std::string model_version;
  std::vector<std::string> top_ids;

  static std::shared_ptr<const ModelSnapshot> make(EmbeddingStore store, MatchModelParams params,
                                                   CandidateSet candidates, std::string model_version) {
    if (params.d_raw != store.d_raw)
      throw Error(ErrorKind::DimensionMismatch, "checkpoint d_raw does not match the store");
    if (!candidates.by_query.empty() && candidates.d_sem != store.d_sem)
      throw Error(ErrorKind::DimensionMismatch, "candidate d_sem does not match the store");
    auto snap = std::make_shared<ModelSnapshot>();
    snap->top_ids = store.item_ids(Role::Top);
    snap->store = std::move(store);
    snap->params = std::move(params);
    snap->candidates = std::move(candidates);
    snap->model_version = std::move(model_version);
    return snap;
  }
};

/// "vbpr1-" followed by the FNV-1a 64-bit hash of the checkpoint bytes.
inline std::string model_version_of(std::string_view checkpoint_bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : checkpoint_bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "vbpr1-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Validates a request body. Throws InvalidArgument on any schema violation.
inline RecommendRequest parse_request(const nlohmann::json& body) {
  if (!body.is_object()) throw Error(ErrorKind::InvalidArgument, "request body must be a JSON object");
  RecommendRequest req;
  const bool has_id = body.contains("query_id") && !body["query_id"].is_null();
  const bool has_feature = body.contains("query_feature") && !body["query_feature"].is_null();
  if (has_id == has_feature)
    throw Error(ErrorKind::InvalidArgument, "exactly one of query_id and query_feature is required");
  try {
    if (has_id) {
      if (!body["query_id"].is_string()) throw Error(ErrorKind::InvalidArgument, "query_id must be a string");
      req.query_id = body["query_id"].get<std::string>();
    } else {
      const auto& f = body["query_feature"];
      if (!f.is_array()) throw Error(ErrorKind::InvalidArgument, "query_feature must be an array");
      std::vector<float> feature;
      for (const auto& v : f) {
        if (!v.is_number()) throw Error(ErrorKind::InvalidArgument, "query_feature must hold numbers");
        feature.push_back(v.get<float>());
      }
      detail::check_finite(feature, "query_feature");
      req.query_feature = std::move(feature);
    }
    if (body.contains("k")) {
      if (!body["k"].is_number_integer()) throw Error(ErrorKind::InvalidArgument, "k must be an integer");
      req.k = body["k"].get<int>();
    }
    if (body.contains("threshold_p")) {
      if (!body["threshold_p"].is_number()) throw Error(ErrorKind::InvalidArgument, "threshold_p must be a number");
      req.threshold_p = body["threshold_p"].get<float>();
    }
    if (body.contains("include_generated")) {
      if (!body["include_generated"].is_boolean())
        throw Error(ErrorKind::InvalidArgument, "include_generated must be a boolean");
      req.include_generated = body["include_generated"].get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NonFiniteValue) throw Error(ErrorKind::InvalidArgument, e.what());
    throw;
  }
  if (req.k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (!(req.threshold_p >= -1.0f && req.threshold_p <= 1.0f))
    throw Error(ErrorKind::InvalidArgument, "threshold_p must lie in [-1, 1]");
  return req;
}

inline nlohmann::json to_json(const RecommendRequest& req) {
  nlohmann::json j;
  if (req.query_id) j["query_id"] = *req.query_id;
  if (req.query_feature) j["query_feature"] = *req.query_feature;
  j["k"] = req.k;
  j["threshold_p"] = req.threshold_p;
  j["include_generated"] = req.include_generated;
  return j;
}

/// Ranks the catalog's tops for the query (top-k). With include_generated and
/// generated candidates on file for the query, the first k candidates are
/// grounded against that ranked list and the hybrid list is returned instead.
/// Unknown query ids raise UnknownEntity.
inline nlohmann::json recommend(const ModelSnapshot& snap, const RecommendRequest& req) {
  const auto k = static_cast<std::size_t>(req.k);
  std::vector<ScoredItem> retrieved;
  const std::vector<GeneratedCandidate>* generated = nullptr;
  if (req.query_id) {
    const QueryRecord& q = snap.store.query(*req.query_id);
    retrieved = top_k(q, snap.top_ids, k, snap.store, snap.params);
    if (auto it = snap.candidates.by_query.find(q.id); it != snap.candidates.by_query.end()) generated = &it->second;
  } else {
    retrieved = top_k_cold(*req.query_feature, snap.top_ids, k, snap.store, snap.params);
  }

  nlohmann::json entries = nlohmann::json::array();
  if (req.include_generated && generated && !generated->empty()) {
    const std::size_t n = std::min(k, generated->size());
    const auto hybrid = ground(std::span(generated->data(), n), retrieved, snap.store, {req.threshold_p, k, false});
    for (const auto& e : hybrid) {
      nlohmann::json item;
      item["slot"] = e.slot;
      if (const auto* r = std::get_if<Retrieved>(&e.source)) {
        item["kind"] = "retrieved";
        item["id"] = r->item_id;
        item["grounding_similarity"] = r->grounding_similarity;
      } else {
        item["kind"] = "generated";
        item["id"] = std::get<Generated>(e.source).gen_id;
      }
      entries.push_back(std::move(item));
    }
  } else {
    for (std::size_t i = 0; i < retrieved.size(); ++i) {
      nlohmann::json item;
      item["slot"] = i;
      item["kind"] = "retrieved";
      item["id"] = retrieved[i].item_id;
      item["score"] = retrieved[i].score;
      entries.push_back(std::move(item));
    }
  }
  nlohmann::json out;
  out["entries"] = std::move(entries);
  out["model_version"] = snap.model_version;
  return out;
}

/// Canonical wire text for a response: compact JSON plus a trailing newline.
inline std::string response_text(const nlohmann::json& response) { return response.dump() + "\n"; }

/// Holder for the served snapshot. Readers take a shared_ptr copy and keep
/// using it for the whole request; replace() swaps the pointer under a lock.
class SnapshotHolder {
 public:
  explicit SnapshotHolder(std::shared_ptr<const ModelSnapshot> initial) : current_(std::move(initial)) {}

  std::shared_ptr<const ModelSnapshot> get() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  void replace(std::shared_ptr<const ModelSnapshot> next) {
    std::lock_guard lock(mu_);
    current_.swap(next);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ModelSnapshot> current_;
};

}  // namespace hm
