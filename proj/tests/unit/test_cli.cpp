// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wbnas/cli.hpp"
#include "json.hpp"
#include "test_support.hpp"
#include "wbnas/cost_model.hpp"
#include "wbnas/dataset.hpp"
#include "wbnas/nas_search.hpp"
#include "wbnas/serialization.hpp"

namespace wbnas {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result wbnas(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string preset(const std::string& name) { return test::data_path("presets/" + name); }
std::string fixture(const std::string& name) { return test::data_path("fixtures/" + name); }

// Re-runs a finished command from its manifest into a sibling directory.
void expect_replay_identical(const fs::path& dir) {
  const fs::path again = dir.string() + "_replay";
  fs::remove_all(again);
  const Result r = wbnas({"replay", (dir / "manifest.json").string(), "--out", again.string(), "--check"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("outputs match"), std::string::npos);
  const json m = json::parse(slurp(dir / "manifest.json"));
  for (const auto& [name, digest] : m["outputs"].items()) EXPECT_EQ(slurp(again / name), slurp(dir / name)) << name;
}

TEST(Cli, Fnv1aVectors) {
  EXPECT_EQ(cli::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(cli::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(cli::fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Cli, SpaceCount) {
  const auto dir = test::scratch_dir("cli_space_count");
  const Result r = wbnas({"space", "count", "--space", "default", "--dims", "bodynet.height", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "5\n");
  EXPECT_EQ(slurp(dir / "space.txt"), "5\n");
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["schema"], "wbnas.manifest/1");
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cli::fnv1a64("5\n")));
  EXPECT_EQ(m["outputs"]["space.txt"], hex);
  expect_replay_identical(dir);

  const auto micro = test::scratch_dir("cli_space_micro");
  const Result t = wbnas({"space", "count", "--space", preset("space_micro.json"), "--out", micro.string()});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(t.out, "27\n");
  const json mm = json::parse(slurp(micro / "manifest.json"));
  EXPECT_EQ(mm["inputs"].size(), 1u);
  expect_replay_identical(micro);
}

TEST(Cli, SpaceSample) {
  const auto a = test::scratch_dir("cli_sample_a"), b = test::scratch_dir("cli_sample_b"),
             c = test::scratch_dir("cli_sample_c");
  ASSERT_EQ(wbnas({"space", "sample", "--seed", "7", "--count", "3", "--out", a.string()}).code, 0);
  ASSERT_EQ(wbnas({"space", "sample", "--seed", "7", "--count", "3", "--out", b.string()}).code, 0);
  ASSERT_EQ(wbnas({"space", "sample", "--seed", "8", "--count", "3", "--out", c.string()}).code, 0);
  EXPECT_EQ(slurp(a / "space.txt"), slurp(b / "space.txt"));
  EXPECT_NE(slurp(a / "space.txt"), slurp(c / "space.txt"));
  const SearchSpace sp = builtin_space("default");
  std::istringstream lines(slurp(a / "space.txt"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    EXPECT_TRUE(validate(spec_from_json(line), sp).empty());
    ++n;
  }
  EXPECT_EQ(n, 3);
  const auto one = test::scratch_dir("cli_sample_one");
  ASSERT_EQ(wbnas({"space", "sample", "--seed", "7", "--out", one.string()}).code, 0);
  EXPECT_EQ(slurp(one / "space.txt"), spec_to_json(sample_random(sp, 7)) + "\n");
  expect_replay_identical(a);
  EXPECT_EQ(wbnas({"space", "sample", "--out", a.string()}).code, 2);
}

TEST(Cli, Errors) {
  const auto dir = test::scratch_dir("cli_errors");
  const Result bad = wbnas({"space", "count", "--space", "nonexistent", "--out", dir.string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("nonexistent"), std::string::npos);
  EXPECT_NE(wbnas({"space", "count"}).code, 0);
  EXPECT_NE(wbnas({"frobnicate"}).code, 0);
  EXPECT_NE(wbnas({}).code, 0);
  EXPECT_EQ(wbnas({"space", "explode", "--out", dir.string()}).code, 2);
  EXPECT_NE(wbnas({"search", "--config", preset("search_micro.json"), "--out", dir.string()}).code, 0);
  EXPECT_NE(wbnas({"train", "--config", preset("train_toy.json"), "--out", dir.string()}).code, 0);
  EXPECT_NE(wbnas({"eval", "--gt", fixture("wholebody_small.jsonl"), "--pred", fixture("wholebody_small.jsonl"),
                   "--out", dir.string()})
                .code,
            0);
  EXPECT_EQ(wbnas({"cost", "--spec", "/no/such/spec.json", "--out", dir.string()}).code, 1);
  EXPECT_NE(wbnas({"search", "--config", preset("search_micro.json"), "--seed", "1", "--jobs", "0", "--out",
                   dir.string()})
                .code,
            0);
}

TEST(Cli, CostReport) {
  const auto dir = test::scratch_dir("cli_cost");
  const Result r = wbnas({"cost", "--spec", "hrnet-w32-reference", "--fractions", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const SearchSpace sp = builtin_space("default");
  const CostReport c = subnetwork_cost(sp, hrnet_w32_reference(sp));
  const json j = json::parse(slurp(dir / "cost.json"));
  EXPECT_EQ(j["total_macs"].get<std::uint64_t>(), c.total_macs());
  EXPECT_EQ(j["handhead_macs"].get<std::uint64_t>() * 2 + j["bodynet_macs"].get<std::uint64_t>() +
                j["facehead_macs"].get<std::uint64_t>(),
            c.total_macs());
  EXPECT_NEAR(j["fractions"]["bodynet"].get<double>() + j["fractions"]["facehead"].get<double>() +
                  j["fractions"]["handhead"].get<double>(),
              1.0, 1e-12);
  EXPECT_EQ(cost_from_text_record(slurp(dir / "cost_record.txt")), c);

  // Printed shares sum to exactly 100.00.
  std::istringstream lines(r.out);
  std::string line;
  long hundredths = 0;
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("Total", 0) == 0 || line.rfind("Module", 0) == 0) continue;
    const auto pct = line.rfind('%');
    ASSERT_NE(pct, std::string::npos) << line;
    const auto start = line.rfind(' ', pct) + 1;
    hundredths += std::lround(std::stod(line.substr(start, pct - start)) * 100);
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(hundredths, 10000);
  EXPECT_NE(r.out.find("×2"), std::string::npos);
  expect_replay_identical(dir);

  const auto bad = test::scratch_dir("cli_cost_bad");
  SubNetworkSpec s = hrnet_w32_reference(sp);
  s.bodynet.height = 300;
  write(bad / "spec.json", spec_to_json(s));
  const Result e = wbnas({"cost", "--spec", (bad / "spec.json").string(), "--out", (bad / "out").string()});
  EXPECT_EQ(e.code, 1);
  EXPECT_NE(e.err.find("bodynet.height"), std::string::npos);
}

TEST(Cli, SearchMicroMatchesLibrary) {
  const auto dir = test::scratch_dir("cli_search_micro");
  const Result r = wbnas({"search", "--config", preset("search_micro.json"), "--seed", "3", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const SearchSpace sp = load_space(preset("space_micro.json"));
  SearchConfig cfg;
  cfg.budget = 9'000'000;
  cfg.n_samples = 27;
  cfg.sampling = SamplingMode::Exhaustive;
  cfg.layout = toy_head_layout();
  cfg.evaluator = concave_evaluator(cfg.budget);
  const auto lib = run_constrained_search(sp, cfg, 3);
  EXPECT_EQ(spec_from_json(slurp(dir / "best_spec.json")), lib.best.spec);
  std::string log;
  for (const auto& t : lib.trials) log += trial_to_json(t) + "\n";
  EXPECT_EQ(slurp(dir / "trials.jsonl"), log);
  EXPECT_FALSE(slurp(dir / "pareto.jsonl").empty());
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["resolved"]["budget_macs"], 9'000'000);
  EXPECT_EQ(m["inputs"].size(), 2u);  // config and the space file it names
  expect_replay_identical(dir);
}

TEST(Cli, SearchJobsAreDeterministic) {
  const auto dir = test::scratch_dir("cli_search_jobs");
  write(dir / "search.json", R"({"space":"default","budget_gflops":18.02,"n_samples":80,"evaluator":"bodynet-preferring"})");
  std::vector<std::string> digests;
  for (const char* jobs : {"1", "4"}) {
    const fs::path out = dir / (std::string("jobs") + jobs);
    const Result r =
        wbnas({"search", "--config", (dir / "search.json").string(), "--seed", "5", "--jobs", jobs, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    digests.push_back(slurp(out / "trials.jsonl") + slurp(out / "best_spec.json") + slurp(out / "pareto.jsonl"));
  }
  EXPECT_EQ(digests[0], digests[1]);
  expect_replay_identical(dir / "jobs4");
}

TEST(Cli, ProportionalSearch) {
  const auto dir = test::scratch_dir("cli_search_prop");
  write(dir / "search.json",
        R"({"space":"default","budget_gflops":18.02,"n_samples":300,"evaluator":"bodynet-preferring",)"
        R"("allocation":"proportional","reference":"hrnet-w32-reference","fraction_tolerance":0.05})");
  const Result r = wbnas({"search", "--config", (dir / "search.json").string(), "--seed", "2", "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("reference"), std::string::npos);
  EXPECT_NE(r.out.find("proportional allocation"), std::string::npos);
  const json s = json::parse(slurp(dir / "o" / "search.json"));
  ASSERT_TRUE(s.contains("reference_fractions"));
  const json best = s["best_cost"];
  const double fb = best["bodynet_macs"].get<double>() / best["total_macs"].get<double>();
  EXPECT_LE(std::abs(fb - s["reference_fractions"]["bodynet"].get<double>()), 0.05);
}

TEST(Cli, ProportionalPresetUsesTableRow) {
  const auto dir = test::scratch_dir("cli_search_prop_row");
  const Result r = wbnas({"search", "--config", preset("search_default_proportional.json"), "--seed", "2", "--out",
                          dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = json::parse(slurp(dir / "search.json"));
  EXPECT_NEAR(s["reference_fractions"]["bodynet"].get<double>(), 16.02 / 28.49, 1e-12);
  const json best = s["best_cost"];
  const double fb = best["bodynet_macs"].get<double>() / best["total_macs"].get<double>();
  EXPECT_GE(fb, 16.02 / 28.49 - 0.02);
  EXPECT_LE(fb, 16.02 / 28.49 + 0.02);
  write(dir / "both.json", R"({"space":"default","budget_gflops":18.02,"allocation":"proportional",)"
                           R"("reference":"hrnet-w32-reference","reference_gflops":[16.02,4.19,4.14]})");
  EXPECT_EQ(wbnas({"search", "--config", (dir / "both.json").string(), "--seed", "1", "--out", (dir / "x").string()}).code,
            1);
  write(dir / "none.json", R"({"space":"default","budget_gflops":18.02,"allocation":"proportional"})");
  EXPECT_EQ(wbnas({"search", "--config", (dir / "none.json").string(), "--seed", "1", "--out", (dir / "y").string()}).code,
            1);
}

fs::path write_train_config(const fs::path& dir, int steps) {
  const fs::path p = dir / ("train_" + std::to_string(steps) + ".json");
  write(p, R"({"space":"toy","layout":"toy","steps":)" + std::to_string(steps) +
               R"(,"batch_size":2,"learning_rate":0.05,"n_random":2})");
  return p;
}

TEST(Cli, TrainAndResume) {
  const auto dir = test::scratch_dir("cli_train");
  const auto c2 = write_train_config(dir, 2), c4 = write_train_config(dir, 4);
  const Result r = wbnas({"train", "--config", c4.string(), "--seed", "9", "--out", (dir / "full").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream curve(slurp(dir / "full" / "loss.jsonl"));
  std::string line;
  int steps = 0;
  while (std::getline(curve, line)) {
    const json j = json::parse(line);
    EXPECT_EQ(j["step"], steps);
    EXPECT_EQ(j["forward_passes"], 4);
    ASSERT_EQ(j["members"].size(), 4u);
    EXPECT_EQ(j["members"][0]["role"], "biggest");
    EXPECT_EQ(j["members"][1]["role"], "smallest");
    EXPECT_GT(j["members"][0]["total_macs"].get<std::uint64_t>(), j["members"][1]["total_macs"].get<std::uint64_t>());
    ++steps;
  }
  EXPECT_EQ(steps, 4);

  ASSERT_EQ(wbnas({"train", "--config", c2.string(), "--seed", "9", "--out", (dir / "half").string()}).code, 0);
  const Result res = wbnas({"train", "--config", c4.string(), "--seed", "9", "--resume",
                            (dir / "half" / "checkpoint.bin").string(), "--out", (dir / "resumed").string()});
  ASSERT_EQ(res.code, 0) << res.err;
  EXPECT_EQ(slurp(dir / "resumed" / "checkpoint.bin"), slurp(dir / "full" / "checkpoint.bin"));
  expect_replay_identical(dir / "resumed");
  expect_replay_identical(dir / "full");

  const Result wrong = wbnas({"train", "--config", c4.string(), "--seed", "10", "--resume",
                              (dir / "half" / "checkpoint.bin").string(), "--out", (dir / "wrong").string()});
  EXPECT_EQ(wrong.code, 1);
  EXPECT_NE(wrong.err.find("seed"), std::string::npos);
}

TEST(Cli, SearchWithSupernetEvaluator) {
  const auto dir = test::scratch_dir("cli_supernet_search");
  const auto c = write_train_config(dir, 2);
  ASSERT_EQ(wbnas({"train", "--config", c.string(), "--seed", "4", "--out", (dir / "train").string()}).code, 0);
  write(dir / "search.json", R"({"space":"toy","budget_macs":6000000,"n_samples":4,"evaluator":"supernet",)"
                             R"("supernet":{"checkpoint":"train/checkpoint.bin","val_instances":2,"val_seed":1}})");
  const Result r = wbnas({"search", "--config", (dir / "search.json").string(), "--seed", "1", "--jobs", "2", "--out",
                          (dir / "search").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = json::parse(slurp(dir / "search" / "manifest.json"));
  EXPECT_EQ(m["resolved"]["evaluator"]["checkpoint"], fs::absolute(dir / "train" / "checkpoint.bin").lexically_normal().string());
  expect_replay_identical(dir / "search");
}

TEST(Cli, EvalPerfectPredictions) {
  const auto dir = test::scratch_dir("cli_eval");
  const std::string gt = fixture("wholebody_small.jsonl");
  const Result r = wbnas({"eval", "--gt", gt, "--pred", gt, "--k", preset("oks_k_wholebody.json"), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(slurp(dir / "eval.json"));
  EXPECT_EQ(j["oks"]["body"]["map"].get<double>(), 1.0);
  EXPECT_EQ(j["oks"]["wholebody"]["map"].get<double>(), 1.0);
  EXPECT_EQ(j["landmarks"]["hand_epe"].get<double>(), 0.0);
  EXPECT_EQ(j["landmarks"]["face_nme"].get<double>(), 0.0);
  expect_replay_identical(dir);

  const auto jit = test::scratch_dir("cli_eval_jitter");
  const Result q = wbnas({"eval", "--gt", gt, "--pred", fixture("predictions_small.jsonl"), "--k",
                          preset("oks_k_wholebody.json"), "--metrics", "ap", "--out", jit.string()});
  ASSERT_EQ(q.code, 0) << q.err;
  const json k = json::parse(slurp(jit / "eval.json"));
  EXPECT_FALSE(k.contains("landmarks"));
  EXPECT_LT(k["oks"]["wholebody"]["map"].get<double>(), 1.0);

  write(jit / "k.json", "[0.1, 0.2]");
  EXPECT_EQ(wbnas({"eval", "--gt", gt, "--pred", gt, "--k", (jit / "k.json").string(), "--out", (jit / "x").string()}).code,
            1);
  EXPECT_EQ(wbnas({"eval", "--gt", gt, "--pred", gt, "--k", preset("oks_k_wholebody.json"), "--metrics", "f1",
                   "--out", (jit / "y").string()})
                .code,
            2);
}

TEST(Cli, DatasetCommands) {
  const auto dir = test::scratch_dir("cli_dataset");
  const Result v = wbnas({"dataset", "validate", "--ann", fixture("wholebody_diagnostics.jsonl"), "--out",
                          (dir / "validate").string()});
  ASSERT_EQ(v.code, 0) << v.err;
  const json vj = json::parse(slurp(dir / "validate" / "validate.json"));
  EXPECT_EQ(vj["counts"]["records"], 3);
  EXPECT_EQ(vj["counts"]["skipped"], 4);
  EXPECT_EQ(vj["diagnostics"][0]["line"], 5);
  EXPECT_NE(v.out.find("ann:7:"), std::string::npos);

  const Result s = wbnas({"dataset", "stats", "--ann", fixture("wholebody_small.jsonl"), "--bin-width", "20", "--bins",
                          "12", "--grid", "4", "--out", (dir / "stats").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  const json sj = json::parse(slurp(dir / "stats" / "stats.json"));
  std::size_t bodies = sj["box_diagonal"]["body"]["overflow"].get<std::size_t>();
  for (const auto& n : sj["box_diagonal"]["body"]["counts"]) bodies += n.get<std::size_t>();
  EXPECT_EQ(bodies, 40u);
  EXPECT_EQ(sj["center"]["hand"]["counts"].size(), 16u);

  const Result e = wbnas({"dataset", "extract", "--ann", fixture("wholebody_small.jsonl"), "--subset", "hand",
                          "--expansion", "1.2", "--out", (dir / "extract").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto anns = load_annotations(fixture("wholebody_small.jsonl"));
  const auto pc = anns.valid_boxes();
  EXPECT_NE(e.out.find("\n" + std::to_string(pc.left_hands + pc.right_hands) + " crops\n"), std::string::npos);

  const Result g = wbnas({"dataset", "sigmas", "--ann", fixture("repeated_annotations.jsonl"), "--out",
                          (dir / "sigmas").string()});
  ASSERT_EQ(g.code, 0) << g.err;
  const json gj = json::parse(slurp(dir / "sigmas" / "sigmas.json"));
  EXPECT_EQ(gj["instances"], 12);
  EXPECT_EQ(gj["k"].size(), 133u);

  for (const char* sub : {"validate", "stats", "extract", "sigmas"}) expect_replay_identical(dir / sub);
  EXPECT_EQ(wbnas({"dataset", "extract", "--ann", fixture("wholebody_small.jsonl"), "--subset", "feet", "--out",
                   (dir / "bad").string()})
                .code,
            2);
}

TEST(Cli, ReplayDetectsChanges) {
  const auto dir = test::scratch_dir("cli_replay");
  const std::string ann = (dir / "ann.jsonl").string();
  write(ann, slurp(fixture("wholebody_small.jsonl")));
  ASSERT_EQ(wbnas({"dataset", "validate", "--ann", ann, "--out", (dir / "run").string()}).code, 0);

  // A tampered output digest makes --check fail.
  json m = json::parse(slurp(dir / "run" / "manifest.json"));
  m["outputs"]["validate.json"] = "0000000000000000";
  write(dir / "tampered.json", m.dump(2));
  const Result t = wbnas({"replay", (dir / "tampered.json").string(), "--out", (dir / "t").string(), "--check"});
  EXPECT_EQ(t.code, 3);
  EXPECT_NE(t.err.find("validate.json"), std::string::npos);
  EXPECT_EQ(wbnas({"replay", (dir / "tampered.json").string(), "--out", (dir / "u").string()}).code, 0);

  // A changed input refuses to replay.
  write(ann, slurp(fixture("wholebody_small.jsonl")) + "\n");
  const Result c = wbnas({"replay", (dir / "run" / "manifest.json").string(), "--out", (dir / "c").string()});
  EXPECT_EQ(c.code, 1);
  EXPECT_NE(c.err.find("has changed"), std::string::npos);
  fs::remove(ann);
  EXPECT_EQ(wbnas({"replay", (dir / "run" / "manifest.json").string(), "--out", (dir / "d").string()}).code, 1);
}

}  // namespace
}  // namespace wbnas
