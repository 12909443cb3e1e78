#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "hybridmatch/binary_io.hpp"
#include "hybridmatch/candidates.hpp"
#include "hybridmatch/evaluation.hpp"
#include "hybridmatch/retrieval.hpp"
#include "hybridmatch/service.hpp"

namespace hm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kFixtures = HM_FIXTURES;
const std::string kStore = kFixtures + "/store.emb1";
const std::string kModel = kFixtures + "/model.vbpr1";
const std::string kCandidates = kFixtures + "/candidates.gen1";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "hmctl");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string temp(const std::string& name) { return (fs::temp_directory_path() / ("hm_cli_" + name)).string(); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"train"}).code, 2);  // missing required options
  const auto r = run({"recommend", "--store", kStore, "--checkpoint", kModel});
  EXPECT_EQ(r.code, 2);  // neither --query nor --feature
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, DomainErrorsExitOne) {
  const auto r = run({"recommend", "--store", kStore, "--checkpoint", kModel, "--query", "nobody"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("UnknownEntity"), std::string::npos);
  EXPECT_EQ(run({"train", "--store", "/nonexistent.emb1", "--out", temp("x.vbpr1")}).code, 1);
}

TEST(Cli, SweepOnFixtures) {
  const auto r = run({"sweep", "--store", kStore, "--checkpoint", kModel, "--candidates", kCandidates, "--grid",
                      "-1:1:0.1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 22u);
  EXPECT_EQ(rows[0], "p,retrieved_fraction,score");
  double previous = 2.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double frac = std::stod(rows[i].substr(rows[i].find(',') + 1));
    EXPECT_LE(frac, previous) << rows[i];
    previous = frac;
  }
  EXPECT_EQ(rows[1].rfind("-1.000000,1.000000,", 0), 0u);
  EXPECT_EQ(rows.back(), "1.000000,0.000000,");

  const std::string out = temp("sweep.csv");
  ASSERT_EQ(run({"sweep", "--store", kStore, "--checkpoint", kModel, "--candidates", kCandidates, "--grid",
                 "-1:1:0.1", "--out", out})
                .code,
            0);
  EXPECT_EQ(io::read_file(out), r.out);
}

TEST(Cli, EvaluateTable1Fixture) {
  const auto r = run({"evaluate", "--table1-fixture"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto study = published_expert_study();
  for (const auto& row : study) {
    const auto pos = r.out.find(row.model + " ");
    ASSERT_NE(pos, std::string::npos) << row.model;
    const auto line = r.out.substr(pos, r.out.find('\n', pos) - pos);
    const double score = std::stod(line.substr(line.find_last_of(' ') + 1));
    EXPECT_NEAR(score, row.score, 0.005) << row.model;
  }
  EXPECT_NE(r.out.find("24 25 21 30"), std::string::npos);
}

TEST(Cli, EvaluateMatrixAndBallots) {
  const std::string matrix = temp("matrix.csv");
  io::write_file(matrix, rating_matrix_csv(published_expert_study().back().ratings));
  const auto r = run({"evaluate", "--matrix", matrix});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = json::parse(r.out);
  EXPECT_NEAR(report["score"].get<double>(), 3.578, 0.005);
  EXPECT_EQ(report["weighted"].size(), 5u);
  EXPECT_EQ(report["weights"], json({0.24, 0.25, 0.21, 0.30}));

  const std::string ballots = temp("ballots.csv");
  io::write_file(ballots, "rater_id,criterion,level\nr1,D1,5\nr1,D2,5\nr1,D3,5\nr1,D4,5\n");
  const auto b = run({"evaluate", "--ballots", ballots, "--weights", "0.25,0.25,0.25,0.25"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(b.out)["score"].get<double>(), 5.0);

  const std::string experts = temp("experts.csv");
  io::write_file(experts, "criterion,e1,e2,e3,e4,e5\nD1,4,2,4,3,4\nD2,4,3,4,3,4\nD3,3,2,4,3,3\nD4,4,4,4,4,5\n");
  const auto w = run({"evaluate", "--expert-scores", experts});
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_EQ(json::parse(w.out)["weights"], json({0.24, 0.25, 0.21, 0.30}));

  EXPECT_EQ(run({"evaluate"}).code, 2);
}

TEST(Cli, TrainZeroEpochsIsInitialization) {
  const std::string out = temp("init.vbpr1");
  const auto r = run({"--seed", "17", "train", "--store", kStore, "--out", out, "--epochs", "0", "--dim", "6"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_checkpoint(out), init_params(load_store(kStore), 6, 17));
}

TEST(Cli, TrainIsSeedDeterministic) {
  const std::string a = temp("a.vbpr1"), b = temp("b.vbpr1");
  for (const auto& path : {a, b})
    ASSERT_EQ(run({"--seed", "5", "train", "--store", kStore, "--out", path, "--epochs", "3", "--dim", "4"}).code, 0);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const std::string cfg = temp("config.json");
  io::write_file(cfg, R"({"seed": 17, "train": {"epochs": 0, "dim": 3}})");
  const std::string out = temp("cfg.vbpr1");
  ASSERT_EQ(run({"--config", cfg, "train", "--store", kStore, "--out", out}).code, 0);
  EXPECT_EQ(load_checkpoint(out), init_params(load_store(kStore), 3, 17));
  // Flags win over the file.
  ASSERT_EQ(run({"--config", cfg, "train", "--store", kStore, "--out", out, "--dim", "5"}).code, 0);
  EXPECT_EQ(load_checkpoint(out).d, 5u);

  io::write_file(cfg, "{broken");
  EXPECT_EQ(run({"--config", cfg, "train", "--store", kStore, "--out", out}).code, 2);
}

TEST(Cli, RecommendMatchesLibrary) {
  const auto r = run({"recommend", "--store", kStore, "--checkpoint", kModel, "--candidates", kCandidates,
                      "--query", "q-0003", "--k", "4", "--threshold", "0.3", "--include-generated"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto snap = ModelSnapshot::make(load_store(kStore), load_checkpoint(kModel),
                                        load_candidates(kCandidates), model_version_of(io::read_file(kModel)));
  RecommendRequest req;
  req.query_id = "q-0003";
  req.k = 4;
  req.threshold_p = 0.3f;
  req.include_generated = true;
  EXPECT_EQ(r.out, response_text(recommend(*snap, req)));
}

TEST(Cli, IngestGenerateFuse) {
  const std::string raw = temp("raw.emb1"), filtered = temp("filtered.emb1"), gen = temp("gen.gen1");
  ASSERT_EQ(run({"--seed", "3", "ingest", "--synthetic", "--tops", "10", "--bottoms", "10", "--out", raw}).code, 0);
  EXPECT_EQ(load_store(raw).item_ids(Role::Top).size(), 10u);

  const auto f = run({"ingest", "--store", raw, "--out", filtered, "--min-count", "1", "--max-count", "100",
                      "--align-bottoms"});
  ASSERT_EQ(f.code, 0) << f.err;
  for (const auto& [id, item] : load_store(filtered).items)
    if (item.role == Role::Bottom) {
      EXPECT_TRUE(item.aligned);
    }

  ASSERT_EQ(run({"--seed", "4", "generate", "--store", kStore, "--out", gen, "--per-query", "2"}).code, 0);
  const auto set = load_candidates(gen);
  EXPECT_EQ(set.by_query.size(), load_store(kStore).queries.size());

  const auto fused = run({"fuse", "--store", kStore, "--checkpoint", kModel, "--candidates", gen, "--k", "2"});
  ASSERT_EQ(fused.code, 0) << fused.err;
  const auto rows = lines(fused.out);
  ASSERT_EQ(rows.size(), set.by_query.size());
  const json first = json::parse(rows[0]);
  EXPECT_EQ(first["entries"].size(), 2u);
  EXPECT_TRUE(first.contains("retrieved_fraction"));
}

TEST(Cli, KernelSelfcheck) {
  const auto r = run({"kernels", "selfcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("warp"), std::string::npos);
  EXPECT_EQ(run({"kernels"}).code, 2);
}

}  // namespace
}  // namespace hm
