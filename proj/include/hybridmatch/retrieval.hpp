#pragma once

// Visual-BPR retrieval: linear projection of backbone features, the biased
// bilinear matching score, BPR loss/gradients, SGD training, exact top-k.
//
// Everything is templated on the scalar type. The stored model and the
// checkpoint format are f32; the f64 instantiation exists so gradient checks
// can run at a precision finite differences can resolve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hybridmatch/binary_io.hpp"
#include "hybridmatch/catalog.hpp"
#include "hybridmatch/error.hpp"
#include "hybridmatch/rng.hpp"

namespace hm {

template <class T>
struct BasicMatchModelParams {
  std::uint32_t d_raw = 0;
  std::uint32_t d = 0;
  std::uint64_t seed = 0;
  std::vector<T> w1;  // d_raw x d, row-major
  T alpha{};
  std::map<std::string, T> beta;
  std::map<std::string, std::vector<T>> id_emb;

  bool operator==(const BasicMatchModelParams&) const = default;

  T& w(std::size_t row, std::size_t col) { return w1[row * d + col]; }
  T w(std::size_t row, std::size_t col) const { return w1[row * d + col]; }

  template <class U>
  BasicMatchModelParams<U> cast() const {
    BasicMatchModelParams<U> out;
    out.d_raw = d_raw;
    out.d = d;
    out.seed = seed;
    out.w1.assign(w1.begin(), w1.end());
    out.alpha = static_cast<U>(alpha);
    for (const auto& [id, b] : beta) out.beta[id] = static_cast<U>(b);
    for (const auto& [id, e] : id_emb) out.id_emb[id] = std::vector<U>(e.begin(), e.end());
    return out;
  }
};

using MatchModelParams = BasicMatchModelParams<float>;

struct TrainingTriple {
  std::string q;
  std::string j;  // positive
  std::string k;  // negative
};

struct ScoredItem {
  std::string item_id;
  float score = 0.0f;

  bool operator==(const ScoredItem&) const = default;
};

/// Defaults for the quantities the method leaves open (learning rate, latent
/// size, regularization). "iterations" in the training recipe maps to epochs.
struct TrainConfig {
  float learning_rate = 0.01f;
  float l2_reg = 1e-4f;  // applied to id embeddings and W1
  int epochs = 100;
  int negatives_per_positive = 1;
  std::uint32_t latent_dim = 64;
  std::uint64_t seed = 0;
};

/// W1 and id embeddings ~ U(-0.01, 0.01) from the seed; biases and alpha start at 0.
/// Every item and query in the store gets an entry.
inline MatchModelParams init_params(const EmbeddingStore& store, std::uint32_t d,
                                    std::uint64_t seed) {
  if (d == 0) throw Error(ErrorKind::InvalidArgument, "latent dimension must be positive");
  SplitMix64 rng(seed);
  MatchModelParams params;
  params.d_raw = store.d_raw;
  params.d = d;
  params.seed = seed;
  params.w1.resize(static_cast<std::size_t>(store.d_raw) * d);
  for (auto& v : params.w1) v = static_cast<float>(rng.uniform(-0.01, 0.01));
  auto add_entity = [&](const std::string& id) {
    params.beta[id] = 0.0f;
    auto& e = params.id_emb[id];
    e.resize(d);
    for (auto& v : e) v = static_cast<float>(rng.uniform(-0.01, 0.01));
  };
  for (const auto& [id, item] : store.items) add_entity(id);
  for (const auto& [id, q] : store.queries) add_entity(id);
  return params;
}

/// v = feature^T W1.
template <class T>
std::vector<T> project(std::span<const float> feature, const BasicMatchModelParams<T>& params) {
  if (feature.size() != params.d_raw)
    throw Error(ErrorKind::DimensionMismatch, "feature length " + std::to_string(feature.size()) +
                                                  ", model expects " + std::to_string(params.d_raw));
  std::vector<T> v(params.d, T{});
  for (std::size_t r = 0; r < params.d_raw; ++r) {
    const T f = static_cast<T>(feature[r]);
    if (f == T{}) continue;
    const T* row = params.w1.data() + r * params.d;
    for (std::size_t c = 0; c < params.d; ++c) v[c] += f * row[c];
  }
  return v;
}

namespace detail {

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class T>
const std::vector<T>& embedding_of(const BasicMatchModelParams<T>& params, const std::string& id) {
  auto it = params.id_emb.find(id);
  if (it == params.id_emb.end()) throw Error(ErrorKind::UnknownEntity, "no embedding for '" + id + "'");
  if (it->second.size() != params.d)
    throw Error(ErrorKind::DimensionMismatch, "embedding of '" + id + "' has wrong length");
  return it->second;
}

template <class T>
T bias_of(const BasicMatchModelParams<T>& params, const std::string& id) {
  auto it = params.beta.find(id);
  if (it == params.beta.end()) throw Error(ErrorKind::UnknownEntity, "no bias for '" + id + "'");
  return it->second;
}

/// Query-side terms of the score, computed once per ranking.
template <class T>
struct QueryTerms {
  std::vector<T> v;
  std::vector<T> e;
  T beta{};
};

template <class T>
QueryTerms<T> query_terms(const QueryRecord& q, const BasicMatchModelParams<T>& params) {
  return {project(q.feature, params), embedding_of(params, q.id), bias_of(params, q.id)};
}

/// Cold-start query: no id embedding or bias; only the visual path contributes.
template <class T>
QueryTerms<T> cold_query_terms(std::span<const float> feature, const BasicMatchModelParams<T>& params) {
  return {project(feature, params), std::vector<T>(params.d, T{}), T{}};
}

template <class T>
T score_with(const QueryTerms<T>& qt, const ItemRecord& j, const BasicMatchModelParams<T>& params) {
  const std::vector<T> vj = project(j.feature, params);
  const auto& ej = embedding_of(params, j.id);
  return params.alpha + qt.beta + bias_of(params, j.id) + dot<T>(qt.e, ej) + dot<T>(qt.v, vj);
}

}  // namespace detail

/// alpha + beta_q + beta_j + e_q^T e_j + v_q^T v_j.
template <class T>
T match_score(const QueryRecord& q, const ItemRecord& j, const BasicMatchModelParams<T>& params) {
  return detail::score_with(detail::query_terms(q, params), j, params);
}

/// -ln(sigmoid(x)) without overflow for large |x|.
template <class T>
T softplus_neg(T x) {
  return x > T{} ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  if (x >= T{}) return T{1} / (T{1} + std::exp(-x));
  const T ex = std::exp(x);
  return ex / (T{1} + ex);
}

template <class T>
struct BprLoss {
  T data{};            // sum over triples of -ln sigmoid(x_qj - x_qk)
  T regularization{};  // l2_reg * (sum ||e||^2 + ||W1||^2)
  T total() const { return data + regularization; }
};

/// Summed (not averaged) BPR loss. The regularizer covers every id embedding
/// and W1; pass l2_reg = 0 for the pure ranking loss.
template <class T>
BprLoss<T> bpr_loss(std::span<const TrainingTriple> triples, const EmbeddingStore& store,
                    const BasicMatchModelParams<T>& params, T l2_reg = T{}) {
  BprLoss<T> loss;
  for (const auto& t : triples) {
    const auto qt = detail::query_terms(store.query(t.q), params);
    const T diff = detail::score_with(qt, store.item(t.j), params) -
                   detail::score_with(qt, store.item(t.k), params);
    loss.data += softplus_neg(diff);
  }
  if (l2_reg != T{}) {
    T sq{};
    for (const auto& [id, e] : params.id_emb)
      for (T v : e) sq += v * v;
    for (T v : params.w1) sq += v * v;
    loss.regularization = l2_reg * sq;
  }
  return loss;
}

template <class T>
struct BprGradient {
  std::vector<T> d_w1;  // d_raw x d
  T d_alpha{};          // always 0: alpha cancels in the score difference
  T d_beta_q{};         // always 0: beta_q cancels too
  T d_beta_j{};
  T d_beta_k{};
  std::vector<T> d_e_q;
  std::vector<T> d_e_j;
  std::vector<T> d_e_k;
  T loss{};
};

/// Analytic gradient of -ln sigmoid(x_qj - x_qk) for one triple.
///
/// With x = (beta_j - beta_k) + e_q.(e_j - e_k) + f_q^T W W^T (f_j - f_k) and
/// g = dL/dx = -sigmoid(-x):
///   d beta_j = g, d beta_k = -g
///   d e_q = g (e_j - e_k), d e_j = g e_q, d e_k = -g e_q
///   d W   = g [ f_q (v_j - v_k)^T + (f_j - f_k) v_q^T ]
template <class T>
BprGradient<T> bpr_gradients(const TrainingTriple& triple, const EmbeddingStore& store,
                             const BasicMatchModelParams<T>& params) {
  if (triple.j == triple.k) throw Error(ErrorKind::InvalidArgument, "positive equals negative");
  const QueryRecord& q = store.query(triple.q);
  const ItemRecord& j = store.item(triple.j);
  const ItemRecord& k = store.item(triple.k);
  const auto vq = project(q.feature, params);
  const auto vj = project(j.feature, params);
  const auto vk = project(k.feature, params);
  const auto& eq = detail::embedding_of(params, q.id);
  const auto& ej = detail::embedding_of(params, j.id);
  const auto& ek = detail::embedding_of(params, k.id);
  const std::size_t d = params.d;

  T x = detail::bias_of(params, j.id) - detail::bias_of(params, k.id);
  for (std::size_t c = 0; c < d; ++c) x += eq[c] * (ej[c] - ek[c]) + vq[c] * (vj[c] - vk[c]);
  // Touch beta_q so an unknown query still fails loudly.
  (void)detail::bias_of(params, q.id);

  BprGradient<T> g;
  g.loss = softplus_neg(x);
  const T dx = -sigmoid(-x);
  g.d_beta_j = dx;
  g.d_beta_k = -dx;
  g.d_e_q.resize(d);
  g.d_e_j.resize(d);
  g.d_e_k.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    g.d_e_q[c] = dx * (ej[c] - ek[c]);
    g.d_e_j[c] = dx * eq[c];
    g.d_e_k[c] = -dx * eq[c];
  }
  g.d_w1.assign(params.w1.size(), T{});
  for (std::size_t r = 0; r < params.d_raw; ++r) {
    const T fq = static_cast<T>(q.feature[r]);
    const T df = static_cast<T>(j.feature[r]) - static_cast<T>(k.feature[r]);
    T* row = g.d_w1.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) row[c] = dx * (fq * (vj[c] - vk[c]) + df * vq[c]);
  }
  return g;
}

struct TrainResult {
  MatchModelParams params;
  float final_loss = 0.0f;  // data loss summed over the last epoch's triples (pre-update)
  std::size_t triples_per_epoch = 0;
};

/// Single-threaded SGD over BPR triples. Bitwise deterministic for a given
/// store and config. Negatives are drawn uniformly from items sharing the
/// positive's role, excluding every positive of the query.
inline TrainResult train(const EmbeddingStore& store, const TrainConfig& config) {
  if (store.pairs.empty()) throw Error(ErrorKind::EmptyTrainingSet, "store has no positive pairs");
  if (!(config.learning_rate > 0.0f)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be > 0");
  if (config.l2_reg < 0.0f) throw Error(ErrorKind::InvalidArgument, "l2_reg must be >= 0");
  if (config.epochs < 0) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 0");
  if (config.negatives_per_positive < 1)
    throw Error(ErrorKind::InvalidArgument, "negatives_per_positive must be >= 1");

  TrainResult result;
  result.params = init_params(store, config.latent_dim, config.seed);
  MatchModelParams& p = result.params;

  std::unordered_map<std::string, std::unordered_set<std::string>> positives;
  for (const auto& pair : store.pairs) positives[pair.query_id].insert(pair.item_id);
  const std::vector<std::string> pools[2] = {store.item_ids(Role::Top), store.item_ids(Role::Bottom)};

  SplitMix64 rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
  std::vector<std::size_t> order(store.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const float lr = config.learning_rate;
  const float decay = 2.0f * config.l2_reg;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    float epoch_loss = 0.0f;
    std::size_t n_triples = 0;
    for (std::size_t idx : order) {
      const InteractionPair& pair = store.pairs[idx];
      const auto& pool = pools[static_cast<int>(store.item(pair.item_id).role)];
      const auto& pos = positives[pair.query_id];
      if (pool.size() <= pos.size()) continue;  // no admissible negative
      for (int n = 0; n < config.negatives_per_positive; ++n) {
        std::string neg;
        do {
          neg = pool[rng.below(pool.size())];
        } while (pos.contains(neg));

        const TrainingTriple triple{pair.query_id, pair.item_id, neg};
        const BprGradient<float> g = bpr_gradients(triple, store, p);
        epoch_loss += g.loss;
        ++n_triples;

        p.beta[triple.j] -= lr * g.d_beta_j;
        p.beta[triple.k] -= lr * g.d_beta_k;
        auto step = [&](std::vector<float>& e, const std::vector<float>& grad) {
          for (std::size_t c = 0; c < e.size(); ++c) e[c] -= lr * (grad[c] + decay * e[c]);
        };
        step(p.id_emb[triple.q], g.d_e_q);
        step(p.id_emb[triple.j], g.d_e_j);
        step(p.id_emb[triple.k], g.d_e_k);
        step(p.w1, g.d_w1);
      }
    }
    result.final_loss = epoch_loss;
    result.triples_per_epoch = n_triples;
  }
  return result;
}

namespace detail {

inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item_id < b.item_id;
}

template <class T>
std::vector<ScoredItem> rank(const QueryTerms<T>& qt, std::span<const std::string> candidates,
                             std::size_t k, const EmbeddingStore& store,
                             const BasicMatchModelParams<T>& params) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  std::vector<std::string> ids(candidates.begin(), candidates.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<ScoredItem> scored;
  scored.reserve(ids.size());
  for (const auto& id : ids) {
    const ItemRecord& item = store.item(id);
    if (item.role != Role::Top) continue;
    scored.push_back({id, static_cast<float>(score_with(qt, item, params))});
  }
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    ranks_before);
  scored.resize(n);
  return scored;
}

}  // namespace detail

/// Exact top-k over the Top items among `candidates`; descending score, ties
/// by ascending item id.
template <class T>
std::vector<ScoredItem> top_k(const QueryRecord& q, std::span<const std::string> candidates,
                              std::size_t k, const EmbeddingStore& store,
                              const BasicMatchModelParams<T>& params) {
  return detail::rank(detail::query_terms(q, params), candidates, k, store, params);
}

/// top_k for a query known only by its feature vector.
template <class T>
std::vector<ScoredItem> top_k_cold(std::span<const float> feature,
                                   std::span<const std::string> candidates, std::size_t k,
                                   const EmbeddingStore& store, const BasicMatchModelParams<T>& params) {
  return detail::rank(detail::cold_query_terms(feature, params), candidates, k, store, params);
}

// Checkpoint: "VBPR1", u32 d_raw, u32 d, u64 seed, f32 alpha, u32 entity_count,
// entities (str16 id, f32 beta, f32 x d), then W1 row-major.

inline std::string encode_checkpoint(const MatchModelParams& params) {
  if (params.w1.size() != static_cast<std::size_t>(params.d_raw) * params.d)
    throw Error(ErrorKind::DimensionMismatch, "W1 size does not match d_raw x d");
  detail::check_finite(params.w1, "W1");
  if (!std::isfinite(params.alpha)) throw Error(ErrorKind::NonFiniteValue, "alpha");
  io::Writer w;
  w.bytes("VBPR1");
  w.u32(params.d_raw);
  w.u32(params.d);
  w.u64(params.seed);
  w.f32(params.alpha);
  w.u32(static_cast<std::uint32_t>(params.id_emb.size()));
  for (const auto& [id, e] : params.id_emb) {
    auto b = params.beta.find(id);
    if (b == params.beta.end()) throw Error(ErrorKind::UnknownEntity, "entity '" + id + "' has no bias");
    detail::check_length(e.size(), params.d, "embedding of " + id);
    detail::check_finite(e, "embedding of " + id);
    if (!std::isfinite(b->second)) throw Error(ErrorKind::NonFiniteValue, "bias of " + id);
    w.str16(id);
    w.f32(b->second);
    w.floats(e);
  }
  if (params.beta.size() != params.id_emb.size())
    throw Error(ErrorKind::UnknownEntity, "bias table and embedding table disagree");
  w.floats(params.w1);
  return w.buffer();
}

inline MatchModelParams decode_checkpoint(std::string bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("VBPR1");
  MatchModelParams p;
  p.d_raw = r.u32();
  p.d = r.u32();
  p.seed = r.u64();
  p.alpha = r.f32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id = r.str16();
    const float beta = r.f32();
    auto e = r.floats(p.d);
    if (p.beta.contains(id)) throw Error(ErrorKind::MalformedFile, "duplicate entity '" + id + "'");
    detail::check_finite(e, "embedding of " + id);
    if (!std::isfinite(beta)) throw Error(ErrorKind::NonFiniteValue, "bias of " + id);
    p.beta[id] = beta;
    p.id_emb[id] = std::move(e);
  }
  p.w1 = r.floats(static_cast<std::size_t>(p.d_raw) * p.d);
  if (!r.at_end()) throw Error(ErrorKind::MalformedFile, "trailing bytes after W1");
  detail::check_finite(p.w1, "W1");
  if (!std::isfinite(p.alpha)) throw Error(ErrorKind::NonFiniteValue, "alpha");
  return p;
}

inline void save_checkpoint(const MatchModelParams& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

inline MatchModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace hm
