#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "hybridmatch/candidates.hpp"
#include "hybridmatch/catalog.hpp"
#include "hybridmatch/evaluation.hpp"
#include "hybridmatch/fusion.hpp"
#include "hybridmatch/http_service.hpp"
#include "hybridmatch/retrieval.hpp"
#include "hybridmatch/selfcheck.hpp"
#include "hybridmatch/service.hpp"
#include "hybridmatch/synthetic.hpp"

namespace hm::cli {
namespace {

using nlohmann::json;

/// Reads CLI11 configuration from JSON. Nested objects address subcommands:
/// {"seed": 3, "train": {"epochs": 50}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        // Marks the subcommand as present so CLI11 routes the nested items.
        items.push_back({next, "++", {}});
        collect(value, next, items);
        items.push_back({next, "--", {}});
        continue;
      }
      CLI::ConfigItem item{parents, key, {}};
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar_text(v));
      else
        item.inputs.push_back(scalar_text(value));
      items.push_back(std::move(item));
    }
  }
};

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto l = std::make_shared<spdlog::logger>("hm", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  const char* env = std::getenv("HM_LOG_LEVEL");
  const std::string level = env ? env : "warn";
  if (level == "error")
    log->set_level(spdlog::level::err);
  else if (level == "info")
    log->set_level(spdlog::level::info);
  else if (level == "debug")
    log->set_level(spdlog::level::debug);
  else
    log->set_level(spdlog::level::warn);
  return log;
}

std::vector<float> parse_float_list(const std::string& text) {
  std::vector<float> values;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      // Parse as double, then narrow: the same path JSON request bodies take.
      values.push_back(static_cast<float>(std::stod(cell, &used)));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "not a number: '" + cell + "'");
    }
  }
  return values;
}

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::string& store_path, const std::string& checkpoint_path,
                                                   const std::string& candidates_path) {
  EmbeddingStore store = load_store(store_path);
  const std::string ckpt_bytes = io::read_file(checkpoint_path);
  MatchModelParams params = decode_checkpoint(ckpt_bytes);
  CandidateSet candidates;
  if (!candidates_path.empty()) candidates = load_candidates(candidates_path, store);
  return ModelSnapshot::make(std::move(store), std::move(params), std::move(candidates), model_version_of(ckpt_bytes));
}

struct Options {
  std::string store, checkpoint, candidates, out;
  std::uint64_t seed = 0;
  int k = 10;
  double threshold = 0.5;
  std::string grid = "-1:1:0.1";

  // ingest
  bool synthetic = false, align_bottoms = false, no_filter = false;
  int min_count = 5, max_count = 100;
  SyntheticConfig synth;
  // train
  TrainConfig train;
  // generate / sweep pseudo-candidates
  PseudoGenConfig pseudo;
  // recommend / fuse
  std::string query, feature;
  bool include_generated = false, dedup = false;
  // evaluate
  bool table1 = false;
  std::string ballots, matrix, weights, expert_scores;
  // kernels selfcheck
  int instances = 100;
  // serve
  std::string bind = "127.0.0.1:8080";
};

int cmd_ingest(const Options& o, std::ostream& out) {
  EmbeddingStore store;
  if (o.synthetic) {
    SyntheticConfig cfg = o.synth;
    cfg.seed = o.seed;
    store = make_cluster_store(cfg).store;
  } else {
    if (o.store.empty()) throw CLI::RequiredError("--store (or --synthetic)");
    store = load_store(o.store);
    if (!o.no_filter) store = ncore_filter_store(store, o.min_count, o.max_count);
  }
  if (o.align_bottoms)
    for (auto& [id, item] : store.items)
      if (item.role == Role::Bottom) item = mark_aligned(item);
  save_store(store, o.out);
  out << "items=" << store.items.size() << " tops=" << store.item_ids(Role::Top).size()
      << " bottoms=" << store.item_ids(Role::Bottom).size() << " queries=" << store.queries.size()
      << " pairs=" << store.pairs.size() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const EmbeddingStore store = load_store(o.store);
  TrainConfig cfg = o.train;
  cfg.seed = o.seed;
  logger()->info("training: epochs={} lr={} l2={} d={} seed={}", cfg.epochs, cfg.learning_rate, cfg.l2_reg,
                 cfg.latent_dim, cfg.seed);
  const TrainResult result = train(store, cfg);
  save_checkpoint(result.params, o.out);
  json summary{{"epochs", cfg.epochs},
               {"final_loss", result.final_loss},
               {"triples_per_epoch", result.triples_per_epoch},
               {"model_version", model_version_of(encode_checkpoint(result.params))}};
  out << summary.dump() << "\n";
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const EmbeddingStore store = load_store(o.store);
  PseudoGenConfig cfg = o.pseudo;
  cfg.seed = o.seed;
  const CandidateSet set = pseudo_generate(store, cfg);
  save_candidates(set, o.out);
  std::size_t n = 0;
  for (const auto& [q, list] : set.by_query) n += list.size();
  out << "candidates=" << n << " queries=" << set.by_query.size() << "\n";
  return 0;
}

RecommendRequest request_from(const Options& o) {
  RecommendRequest req;
  if (o.query.empty() == o.feature.empty())
    throw CLI::ValidationError("recommend", "exactly one of --query and --feature is required");
  if (!o.query.empty())
    req.query_id = o.query;
  else
    req.query_feature = parse_float_list(o.feature);
  req.k = o.k;
  req.threshold_p = static_cast<float>(o.threshold);
  req.include_generated = o.include_generated;
  // Same validation as the HTTP path.
  return parse_request(to_json(req));
}

int cmd_recommend(const Options& o, std::ostream& out) {
  const RecommendRequest req = request_from(o);
  const auto snap = load_snapshot(o.store, o.checkpoint, o.candidates);
  out << response_text(recommend(*snap, req));
  return 0;
}

CandidateSet candidates_or_pseudo(const Options& o, const EmbeddingStore& store) {
  if (!o.candidates.empty()) return load_candidates(o.candidates, store);
  PseudoGenConfig cfg = o.pseudo;
  cfg.seed = o.seed;
  logger()->info("no --candidates given; pseudo-generating {} per query (sigma={})", cfg.per_query_count,
                 cfg.anchor_noise_sigma);
  return pseudo_generate(store, cfg);
}

std::vector<FusionInstance> fusion_instances(const ModelSnapshot& snap, const CandidateSet& set, std::size_t k,
                                             const std::string& only_query) {
  std::vector<FusionInstance> instances;
  for (const auto& [qid, list] : set.by_query) {
    if (!only_query.empty() && qid != only_query) continue;
    if (list.empty()) continue;
    FusionInstance inst;
    inst.retrieved = top_k(snap.store.query(qid), snap.top_ids, k, snap.store, snap.params);
    inst.generated.assign(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size())));
    instances.push_back(std::move(inst));
  }
  return instances;
}

int cmd_fuse(const Options& o, std::ostream& out) {
  auto snap = load_snapshot(o.store, o.checkpoint, "");
  const CandidateSet set = candidates_or_pseudo(o, snap->store);
  const auto k = static_cast<std::size_t>(o.k);
  const FusionConfig cfg{static_cast<float>(o.threshold), k, o.dedup};
  for (const auto& [qid, list] : set.by_query) {
    if (!o.query.empty() && qid != o.query) continue;
    if (list.empty()) continue;
    const auto retrieved = top_k(snap->store.query(qid), snap->top_ids, k, snap->store, snap->params);
    const auto entries =
        ground(std::span(list.data(), std::min(k, list.size())), retrieved, snap->store, cfg);
    json row{{"query_id", qid}, {"entries", json::array()}};
    for (const auto& e : entries) {
      if (const auto* r = std::get_if<Retrieved>(&e.source))
        row["entries"].push_back(
            {{"slot", e.slot}, {"kind", "retrieved"}, {"id", r->item_id}, {"grounding_similarity", r->grounding_similarity}});
      else
        row["entries"].push_back({{"slot", e.slot}, {"kind", "generated"}, {"id", std::get<Generated>(e.source).gen_id}});
    }
    row["retrieved_fraction"] = entries.empty() ? 0.0f : retrieved_fraction(entries);
    out << row.dump() << "\n";
  }
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  auto snap = load_snapshot(o.store, o.checkpoint, "");
  const CandidateSet set = candidates_or_pseudo(o, snap->store);
  const auto grid = parse_grid(o.grid);
  const auto instances = fusion_instances(*snap, set, static_cast<std::size_t>(o.k), o.query);
  if (instances.empty()) throw Error(ErrorKind::EmptyList, "no queries with generated candidates");
  const std::string csv = sweep_csv(sweep(instances, snap->store, grid));
  if (o.out.empty())
    out << csv;
  else
    io::write_file(o.out, csv);
  return 0;
}

json level_row_json(const LevelRow& row) { return json(std::vector<double>(row.begin(), row.end())); }

int cmd_evaluate(const Options& o, std::ostream& out) {
  if (o.table1) {
    const WeightVector a = published_weights();
    out << "model            VS      S       A       D       VD      score\n";
    for (const auto& row : published_expert_study()) {
      const LevelRow b = weighted_proportions(row.ratings, a);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-14s %7.4f %7.4f %7.4f %7.4f %7.4f  %.3f\n", row.model.c_str(), b[0], b[1],
                    b[2], b[3], b[4], likert_score(b));
      out << buf;
    }
    const auto percent = derive_weight_percents(published_expert_scores());
    out << "weights(%) from expert scores: " << percent[0] << " " << percent[1] << " " << percent[2] << " "
        << percent[3] << "\n";
    return 0;
  }

  if (!o.expert_scores.empty() && o.ballots.empty() && o.matrix.empty()) {
    std::ifstream in(o.expert_scores);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + o.expert_scores);
    const WeightVector w = derive_weights(read_expert_scores_csv(in));
    out << json{{"weights", w.values()}}.dump() << "\n";
    return 0;
  }

  RatingMatrix r;
  if (!o.ballots.empty()) {
    std::ifstream in(o.ballots);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + o.ballots);
    r = aggregate_votes(read_votes_csv(in));
  } else if (!o.matrix.empty()) {
    std::ifstream in(o.matrix);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + o.matrix);
    r = read_rating_matrix_csv(in);
  } else {
    throw CLI::ValidationError("evaluate", "need one of --table1-fixture, --ballots, --matrix, --expert-scores");
  }

  WeightVector a = published_weights();
  if (!o.weights.empty()) {
    const auto w = parse_float_list(o.weights);
    if (w.size() != kCriteria) throw Error(ErrorKind::InvalidArgument, "--weights needs four values");
    a = WeightVector({w[0], w[1], w[2], w[3]});
  } else if (!o.expert_scores.empty()) {
    std::ifstream in(o.expert_scores);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + o.expert_scores);
    a = derive_weights(read_expert_scores_csv(in));
  }
  const LevelRow b = weighted_proportions(r, a);
  out << json{{"weighted", level_row_json(b)}, {"score", likert_score(b)}, {"weights", a.values()}}.dump() << "\n";
  return 0;
}

int cmd_selfcheck(const Options& o, std::ostream& out) {
  const auto results = run_kernel_selfcheck<float>(o.seed, o.instances);
  bool ok = true;
  out << std::left << std::setw(36) << "kernel" << std::setw(6) << "n" << std::setw(14) << "max_rel_err"
      << std::setw(12) << "tolerance" << "result\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    out << std::left << std::setw(36) << r.name << std::setw(6) << r.instances << std::setw(14)
        << std::setprecision(3) << r.max_error << std::setw(12) << r.tolerance << (r.passed ? "PASS" : "FAIL")
        << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const auto colon = o.bind.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--bind", "expected host:port");
  const std::string host = o.bind.substr(0, colon);
  const int port = std::stoi(o.bind.substr(colon + 1));
  SnapshotHolder holder(load_snapshot(o.store, o.checkpoint, o.candidates));
  httplib::Server server;
  mount_routes(server, holder);
  logger()->info("serving {} on {}", holder.get()->model_version, o.bind);
  out << "listening on " << o.bind << std::endl;
  if (!server.listen(host, port)) throw Error(ErrorKind::IoFailure, "cannot bind " + o.bind);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid mix-and-match recommendation engine", args.empty() ? "hmctl" : args[0]};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON configuration file; command-line flags take precedence");

  Options o;
  app.add_option("--seed", o.seed, "Seed for every random choice")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "Validate, n-core filter and align an embedding store");
  ingest->add_option("--store", o.store, "Input EMB1 store");
  ingest->add_option("--out", o.out, "Output EMB1 store")->required();
  ingest->add_option("--min-count", o.min_count, "Lower occurrence bound (inclusive)")->capture_default_str();
  ingest->add_option("--max-count", o.max_count, "Upper occurrence bound (inclusive)")->capture_default_str();
  ingest->add_flag("--no-filter", o.no_filter, "Skip n-core filtering");
  ingest->add_flag("--align-bottoms", o.align_bottoms, "Mark every bottom item as alignment-preprocessed");
  ingest->add_flag("--synthetic", o.synthetic, "Write a seeded two-cluster synthetic store instead of reading one");
  ingest->add_option("--tops", o.synth.n_tops)->capture_default_str();
  ingest->add_option("--bottoms", o.synth.n_bottoms)->capture_default_str();
  ingest->add_option("--pairs-per-query", o.synth.pairs_per_query)->capture_default_str();
  ingest->add_option("--d-raw", o.synth.d_raw)->capture_default_str();
  ingest->add_option("--d-sem", o.synth.d_sem)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train the retrieval model with BPR");
  train_cmd->add_option("--store", o.store)->required();
  train_cmd->add_option("--out", o.out, "Checkpoint path (VBPR1)")->required();
  train_cmd->add_option("--epochs", o.train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", o.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--l2", o.train.l2_reg)->capture_default_str();
  train_cmd->add_option("--dim", o.train.latent_dim)->capture_default_str();
  train_cmd->add_option("--negatives", o.train.negatives_per_positive)->capture_default_str();

  auto* gen = app.add_subcommand("generate", "Pseudo-generate candidate embeddings (GEN1)");
  gen->add_option("--store", o.store)->required();
  gen->add_option("--out", o.out)->required();
  gen->add_option("--per-query", o.pseudo.per_query_count)->capture_default_str();
  gen->add_option("--sigma", o.pseudo.anchor_noise_sigma)->capture_default_str();

  auto* rec = app.add_subcommand("recommend", "Rank tops for one query, optionally fused with generated candidates");
  rec->add_option("--store", o.store)->required();
  rec->add_option("--checkpoint", o.checkpoint)->required();
  rec->add_option("--candidates", o.candidates, "GEN1 file");
  rec->add_option("--query", o.query, "Query id");
  rec->add_option("--feature", o.feature, "Inline query feature, comma separated");
  rec->add_option("--k", o.k)->capture_default_str();
  rec->add_option("--threshold", o.threshold)->capture_default_str();
  rec->add_flag("--include-generated", o.include_generated);

  auto* fuse = app.add_subcommand("fuse", "Ground generated candidates for every query; JSON lines");
  fuse->add_option("--store", o.store)->required();
  fuse->add_option("--checkpoint", o.checkpoint)->required();
  fuse->add_option("--candidates", o.candidates, "GEN1 file (pseudo-generated when absent)");
  fuse->add_option("--query", o.query, "Restrict to one query");
  fuse->add_option("--k", o.k)->capture_default_str();
  fuse->add_option("--threshold", o.threshold)->capture_default_str();
  fuse->add_flag("--dedup", o.dedup, "Drop repeated grounding targets");
  fuse->add_option("--per-query", o.pseudo.per_query_count)->capture_default_str();
  fuse->add_option("--sigma", o.pseudo.anchor_noise_sigma)->capture_default_str();

  auto* sw = app.add_subcommand("sweep", "Retrieved fraction across a threshold grid (CSV)");
  sw->add_option("--store", o.store)->required();
  sw->add_option("--checkpoint", o.checkpoint)->required();
  sw->add_option("--candidates", o.candidates, "GEN1 file (pseudo-generated when absent)");
  sw->add_option("--query", o.query, "Restrict to one query");
  sw->add_option("--grid", o.grid, "lo:hi:step")->capture_default_str();
  sw->add_option("--k", o.k)->capture_default_str();
  sw->add_option("--out", o.out, "CSV path (stdout when absent)");
  sw->add_option("--per-query", o.pseudo.per_query_count)->capture_default_str();
  sw->add_option("--sigma", o.pseudo.anchor_noise_sigma)->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "Expert-study scoring");
  ev->add_flag("--table1-fixture", o.table1, "Score the published per-criterion rows");
  ev->add_option("--ballots", o.ballots, "Ballot CSV rater_id,criterion,level");
  ev->add_option("--matrix", o.matrix, "Rating matrix CSV");
  ev->add_option("--weights", o.weights, "Four comma-separated criterion weights");
  ev->add_option("--expert-scores", o.expert_scores, "Expert weight-scoring CSV");

  auto* kernels = app.add_subcommand("kernels", "Loss-kernel utilities");
  kernels->require_subcommand(1);
  auto* selfcheck = kernels->add_subcommand("selfcheck", "Compare every kernel with its reference");
  selfcheck->add_option("--instances", o.instances)->capture_default_str();

  auto* serve = app.add_subcommand("serve", "JSON-over-HTTP recommendation service");
  serve->add_option("--store", o.store)->required();
  serve->add_option("--checkpoint", o.checkpoint)->required();
  serve->add_option("--candidates", o.candidates);
  serve->add_option("--bind", o.bind)->capture_default_str();

  std::vector<std::string> argv_rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(argv_rest.begin(), argv_rest.end());
  try {
    app.parse(argv_rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(o, out);
    if (*train_cmd) return cmd_train(o, out);
    if (*gen) return cmd_generate(o, out);
    if (*rec) return cmd_recommend(o, out);
    if (*fuse) return cmd_fuse(o, out);
    if (*sw) return cmd_sweep(o, out);
    if (*ev) return cmd_evaluate(o, out);
    if (*selfcheck) return cmd_selfcheck(o, out);
    if (*serve) return cmd_serve(o, out);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace hm::cli
