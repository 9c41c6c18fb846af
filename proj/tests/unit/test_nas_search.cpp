// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "test_support.hpp"
#include "wbnas/nas_search.hpp"
#include "wbnas/rng.hpp"
#include "wbnas/serialization.hpp"

namespace wbnas {
namespace {

SearchSpace micro() { return load_space(test::data_path("presets/space_micro.json")); }

// Every micro sub-network, built directly from the resolution grid.
std::vector<SubNetworkSpec> micro_specs(const SearchSpace& sp) {
  std::vector<SubNetworkSpec> out;
  const SubNetworkSpec base = sample_extreme(sp, Extreme::Smallest);
  for (int b = 32; b <= 64; b += 16)
    for (int f = 8; f <= 24; f += 8)
      for (int h = 8; h <= 24; h += 8) {
        SubNetworkSpec s = base;
        s.bodynet.height = b;
        s.facehead.height = f;
        s.handhead.height = h;
        out.push_back(s);
      }
  return out;
}

double concave_oracle(const CostReport& c, double budget, double wb, double wf, double wh) {
  return wb * std::sqrt(static_cast<double>(c.bodynet.macs) / budget) +
         wf * std::sqrt(static_cast<double>(c.facehead.macs) / budget) +
         wh * std::sqrt(2.0 * static_cast<double>(c.handhead.macs) / budget);
}

SearchConfig micro_config(std::uint64_t budget) {
  SearchConfig cfg;
  cfg.budget = budget;
  cfg.n_samples = 27;
  cfg.sampling = SamplingMode::Exhaustive;
  cfg.layout = toy_head_layout();
  cfg.evaluator = concave_evaluator(budget);
  return cfg;
}

TEST(Search, MicroSpaceHasTwentySevenMembers) {
  const SearchSpace sp = micro();
  EXPECT_EQ(total_count(sp), 27u);
  for (const auto& s : micro_specs(sp)) EXPECT_TRUE(validate(s, sp).empty());
}

TEST(Search, MinimumTotalCostIsBruteForceMinimum) {
  const SearchSpace sp = micro();
  std::uint64_t lo = std::numeric_limits<std::uint64_t>::max();
  for (const auto& s : micro_specs(sp)) lo = std::min(lo, subnetwork_cost(sp, s, toy_head_layout()).total_macs());
  EXPECT_EQ(minimum_total_cost(sp, toy_head_layout()), lo);

  const SearchSpace d = builtin_space("default");
  const std::uint64_t floor = minimum_total_cost(d);
  for (std::uint64_t s = 0; s < 500; ++s) EXPECT_GE(subnetwork_cost(d, sample_random(d, s)).total_macs(), floor);
}

TEST(Search, InfeasibleBudgetThrows) {
  const SearchSpace sp = micro();
  const std::uint64_t floor = minimum_total_cost(sp, toy_head_layout());
  EXPECT_THROW(run_constrained_search(sp, micro_config(floor - 1), 1), InfeasibleBudget);
  SearchConfig cfg = micro_config(floor);
  cfg.n_samples = 1;
  const auto r = run_constrained_search(sp, cfg, 1);
  EXPECT_EQ(r.best.cost.total_macs(), floor);
  cfg.sampling = SamplingMode::Random;
  EXPECT_EQ(run_constrained_search(sp, cfg, 1).best.cost.total_macs(), floor);
}

TEST(Search, ConfigErrors) {
  const SearchSpace sp = micro();
  SearchConfig cfg = micro_config(9'000'000);
  auto bad = [&](auto edit) {
    SearchConfig c = cfg;
    edit(c);
    EXPECT_THROW(run_constrained_search(sp, c, 1), std::invalid_argument);
  };
  bad([](SearchConfig& c) { c.budget = 0; });
  bad([](SearchConfig& c) { c.n_samples = 0; });
  bad([](SearchConfig& c) { c.evaluator = nullptr; });
  bad([](SearchConfig& c) { c.jobs = 0; });
  bad([](SearchConfig& c) { c.fraction_tolerance = -1; });
  cfg.allocation = AllocationMode::Proportional;
  EXPECT_THROW(run_search(sp, cfg, 1), std::invalid_argument);
  EXPECT_THROW(make_evaluator("accuracy", 1), std::invalid_argument);
}

TEST(Search, ExhaustiveMatchesBruteForceOptimum) {
  const SearchSpace sp = micro();
  const auto specs = micro_specs(sp);
  std::vector<std::uint64_t> costs;
  for (const auto& s : specs) costs.push_back(subnetwork_cost(sp, s, toy_head_layout()).total_macs());
  std::vector<std::uint64_t> budgets = costs;
  budgets.push_back(9'000'000);
  for (const std::uint64_t budget : budgets) {
    for (const auto& [wb, wf, wh] : {std::tuple{0.7, 0.15, 0.15}, std::tuple{1.0, 0.2, 0.2}, std::tuple{0.1, 1.0, 0.1}}) {
      SearchConfig cfg = micro_config(budget);
      cfg.evaluator = concave_evaluator(budget, wb, wf, wh);
      const auto r = run_constrained_search(sp, cfg, 3);
      double best = -1;
      std::uint64_t best_cost = 0;
      std::size_t feasible = 0;
      for (const auto& s : specs) {
        const CostReport c = subnetwork_cost(sp, s, toy_head_layout());
        if (c.total_macs() > budget) continue;
        ++feasible;
        const double v = concave_oracle(c, static_cast<double>(budget), wb, wf, wh);
        if (v > best || (v == best && c.total_macs() < best_cost)) {
          best = v;
          best_cost = c.total_macs();
        }
      }
      EXPECT_EQ(r.accepted, feasible);
      EXPECT_EQ(r.accepted + r.rejected, 27u);
      EXPECT_NEAR(*r.best.score, best, 1e-12);
      EXPECT_EQ(r.best.cost.total_macs(), best_cost);
    }
  }
}

TEST(Search, NegativeCostPicksCheapest) {
  const SearchSpace sp = micro();
  SearchConfig cfg = micro_config(9'000'000);
  cfg.evaluator = negative_cost_evaluator();
  EXPECT_EQ(run_constrained_search(sp, cfg, 5).best.cost.total_macs(), minimum_total_cost(sp, toy_head_layout()));
}

TEST(Search, RandomModeRecordsRejections) {
  const SearchSpace sp = builtin_space("default");
  SearchConfig cfg;
  cfg.budget = 12'000'000'000ULL;
  cfg.n_samples = 40;
  cfg.evaluator = bodynet_preferring_evaluator(cfg.budget);
  const auto r = run_constrained_search(sp, cfg, 7);
  EXPECT_EQ(r.accepted, 40u);
  EXPECT_GT(r.rejected, 0u);
  EXPECT_EQ(r.trials.size(), r.accepted + r.rejected);
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const auto& t = r.trials[i];
    EXPECT_EQ(t.index, i);
    EXPECT_EQ(t.accepted, t.cost.total_macs() <= cfg.budget);
    EXPECT_EQ(t.eligible, t.accepted);
    EXPECT_EQ(t.score.has_value(), t.accepted);
    EXPECT_EQ(t.spec, sample_random(sp, t.seed));
    EXPECT_EQ(t.cost, subnetwork_cost(sp, t.spec));
    if (t.score) {
      EXPECT_LE(*t.score, *r.best.score);
    }
  }
  EXPECT_TRUE(r.trials.back().accepted);

  const auto again = run_constrained_search(sp, cfg, 7);
  ASSERT_EQ(again.trials.size(), r.trials.size());
  for (std::size_t i = 0; i < r.trials.size(); ++i) EXPECT_EQ(trial_to_json(again.trials[i]), trial_to_json(r.trials[i]));
  EXPECT_NE(trial_to_json(run_constrained_search(sp, cfg, 8).best), trial_to_json(r.best));
}

TEST(Search, MaxAttemptsReported) {
  const SearchSpace sp = builtin_space("default");
  SearchConfig cfg;
  cfg.budget = minimum_total_cost(sp);
  cfg.n_samples = 5;
  cfg.max_attempts = 50;
  cfg.evaluator = negative_cost_evaluator();
  EXPECT_THROW(run_constrained_search(sp, cfg, 1), std::runtime_error);
}

TEST(Search, JobsDoNotChangeResults) {
  const SearchSpace sp = builtin_space("default");
  SearchConfig cfg;
  cfg.budget = 18'020'000'000ULL;
  cfg.n_samples = 60;
  const Evaluator inner = bodynet_preferring_evaluator(cfg.budget);
  // Uneven per-trial delays shuffle the completion order across threads.
  cfg.evaluator = [inner](const SubNetworkSpec& s, const CostReport& c, std::uint64_t seed) {
    std::this_thread::sleep_for(std::chrono::microseconds(seed % 997));
    return inner(s, c, seed) + static_cast<double>(seed % 1000) * 1e-9;
  };
  const auto one = run_constrained_search(sp, cfg, 11);
  for (int jobs : {2, 4, 7}) {
    cfg.jobs = jobs;
    const auto many = run_constrained_search(sp, cfg, 11);
    ASSERT_EQ(many.trials.size(), one.trials.size());
    for (std::size_t i = 0; i < one.trials.size(); ++i)
      EXPECT_EQ(trial_to_json(many.trials[i]), trial_to_json(one.trials[i]));
    EXPECT_EQ(trial_to_json(many.best), trial_to_json(one.best));
  }
}

TEST(Search, EvaluatorFailuresPropagate) {
  const SearchSpace sp = micro();
  SearchConfig cfg = micro_config(9'000'000);
  for (int jobs : {1, 3}) {
    cfg.jobs = jobs;
    cfg.evaluator = [](const SubNetworkSpec&, const CostReport&, std::uint64_t) -> double {
      throw std::logic_error("boom");
    };
    EXPECT_THROW(run_constrained_search(sp, cfg, 1), std::logic_error);
    cfg.evaluator = [](const SubNetworkSpec&, const CostReport&, std::uint64_t) {
      return std::numeric_limits<double>::quiet_NaN();
    };
    EXPECT_THROW(run_constrained_search(sp, cfg, 1), std::runtime_error);
  }
}

TEST(Search, TiesGoToCheaperThenEarlier) {
  const SearchSpace sp = micro();
  SearchConfig cfg = micro_config(9'000'000);
  cfg.evaluator = [](const SubNetworkSpec&, const CostReport&, std::uint64_t) { return 1.0; };
  const auto r = run_constrained_search(sp, cfg, 1);
  EXPECT_EQ(r.best.cost.total_macs(), minimum_total_cost(sp, toy_head_layout()));
  std::size_t first = r.trials.size();
  for (const auto& t : r.trials)
    if (t.accepted && t.cost.total_macs() == r.best.cost.total_macs()) first = std::min(first, t.index);
  EXPECT_EQ(r.best.index, first);
}

SearchConfig default_config(int n) {
  SearchConfig cfg;
  cfg.budget = 18'020'000'000ULL;
  cfg.n_samples = n;
  cfg.evaluator = bodynet_preferring_evaluator(cfg.budget);
  return cfg;
}

TEST(Proportional, NeverBeatsAutomatic) {
  const SearchSpace sp = builtin_space("default");
  const SubNetworkSpec ref = hrnet_w32_reference(sp);
  for (std::uint64_t seed : {1, 2, 3}) {
    SearchConfig cfg = default_config(200);
    cfg.fraction_tolerance = 0.05;
    const auto autom = run_constrained_search(sp, cfg, seed);
    const auto prop = run_proportional_baseline(sp, cfg, ref, seed);
    EXPECT_EQ(prop.trials.size(), autom.trials.size());
    EXPECT_LE(prop.eligible, prop.accepted);
    EXPECT_EQ(prop.accepted, autom.accepted);
    EXPECT_GE(*autom.best.score, *prop.best.score);
  }
}

TEST(Proportional, EligibleTrialsMatchReferenceFractions) {
  const SearchSpace sp = builtin_space("default");
  const SubNetworkSpec ref = hrnet_w32_reference(sp);
  SearchConfig cfg = default_config(200);
  cfg.fraction_tolerance = 0.05;
  const auto r = run_proportional_baseline(sp, cfg, ref, 4);
  ASSERT_TRUE(r.reference_fractions);
  const CostReport rc = subnetwork_cost(sp, ref);
  const double total = static_cast<double>(rc.total_macs());
  EXPECT_NEAR(r.reference_fractions->bodynet, static_cast<double>(rc.bodynet.macs) / total, 1e-15);
  std::size_t eligible = 0;
  for (const auto& t : r.trials) {
    const double tt = static_cast<double>(t.cost.total_macs());
    const double fb = static_cast<double>(t.cost.bodynet.macs) / tt;
    const double ff = static_cast<double>(t.cost.facehead.macs) / tt;
    const double fh = 2.0 * static_cast<double>(t.cost.handhead.macs) / tt;
    const bool inside = t.accepted && std::abs(fb - r.reference_fractions->bodynet) <= 0.05 &&
                        std::abs(ff - r.reference_fractions->facehead) <= 0.05 &&
                        std::abs(fh - r.reference_fractions->handhead) <= 0.05;
    EXPECT_EQ(t.eligible, inside) << t.index;
    EXPECT_EQ(t.score.has_value(), inside);
    eligible += inside;
  }
  EXPECT_EQ(r.eligible, eligible);
  EXPECT_GT(eligible, 0u);
  const double fb = static_cast<double>(r.best.cost.bodynet.macs) / static_cast<double>(r.best.cost.total_macs());
  EXPECT_GE(fb, r.reference_fractions->bodynet - 0.05);
  EXPECT_LE(fb, r.reference_fractions->bodynet + 0.05);
}

TEST(Proportional, TableRowFractionsBoundBodyShare) {
  const SearchSpace sp = builtin_space("default");
  CostReport row;
  row.bodynet.macs = 16'020'000'000ULL;
  row.facehead.macs = 4'190'000'000ULL;
  row.handhead.macs = 4'140'000'000ULL;
  const AllocationFractions ref = allocation_report(row);
  EXPECT_NEAR(ref.bodynet, 0.562, 0.001);
  EXPECT_NEAR(ref.facehead, 0.147, 0.001);
  EXPECT_NEAR(ref.handhead, 2 * 0.145, 0.001);
  SearchConfig cfg = default_config(2000);
  const auto r = run_proportional_baseline(sp, cfg, ref, 2);
  EXPECT_GT(r.eligible, 0u);
  for (const auto& t : r.trials) {
    if (!t.eligible) continue;
    const double fb = static_cast<double>(t.cost.bodynet.macs) / static_cast<double>(t.cost.total_macs());
    EXPECT_GE(fb, 0.542 - 1e-3) << t.index;
    EXPECT_LE(fb, 0.582 + 1e-3) << t.index;
    EXPECT_GE(fb, ref.bodynet - 0.02);
    EXPECT_LE(fb, ref.bodynet + 0.02);
  }
  EXPECT_GE(*run_constrained_search(sp, cfg, 2).best.score, *r.best.score);
}

TEST(Proportional, BadFractionsRejected) {
  const SearchSpace sp = builtin_space("default");
  EXPECT_THROW(run_proportional_baseline(sp, default_config(10), AllocationFractions{0.5, 0.2, 0.2}, 1),
               std::invalid_argument);
  EXPECT_THROW(run_proportional_baseline(sp, default_config(10), AllocationFractions{1.2, -0.1, -0.1}, 1),
               std::invalid_argument);
}

TEST(Proportional, WideToleranceEqualsAutomatic) {
  const SearchSpace sp = builtin_space("default");
  SearchConfig cfg = default_config(100);
  cfg.fraction_tolerance = 1.0;
  const auto autom = run_constrained_search(sp, cfg, 9);
  const auto prop = run_proportional_baseline(sp, cfg, hrnet_w32_reference(sp), 9);
  EXPECT_EQ(trial_to_json(prop.best), trial_to_json(autom.best));
  EXPECT_EQ(prop.eligible, autom.eligible);
}

TEST(Proportional, InvalidReferenceRejected) {
  const SearchSpace sp = builtin_space("default");
  SubNetworkSpec ref = hrnet_w32_reference(sp);
  ref.bodynet.height = 300;
  EXPECT_THROW(run_proportional_baseline(sp, default_config(10), ref, 1), std::invalid_argument);
}

TEST(Evaluators, ConcaveOracle) {
  const SearchSpace sp = builtin_space("default");
  const std::uint64_t budget = 18'020'000'000ULL;
  const auto plain = concave_evaluator(budget);
  const auto body = bodynet_preferring_evaluator(budget);
  const auto byname = make_evaluator("concave", budget);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto spec = sample_random(sp, s);
    const CostReport c = subnetwork_cost(sp, spec);
    EXPECT_NEAR(plain(spec, c, 0), concave_oracle(c, 18.02e9, 0.7, 0.15, 0.15), 1e-12);
    EXPECT_NEAR(body(spec, c, 0), concave_oracle(c, 18.02e9, 1.0, 0.2, 0.2), 1e-12);
    EXPECT_EQ(byname(spec, c, 0), plain(spec, c, 0));
    EXPECT_EQ(make_evaluator("neg-cost", budget)(spec, c, 0), -static_cast<double>(c.total_macs()));
  }
  EXPECT_THROW(concave_evaluator(0), std::invalid_argument);
}

TEST(Evaluators, SupernetEvaluatorIsDeterministicAndBounded) {
  const SearchSpace sp = builtin_space("toy");
  auto net = std::make_shared<const Supernet>(sp, toy_head_layout(), 3);
  const auto ev = supernet_evaluator(net, SyntheticTaskConfig{}, 2, 5);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto spec = sample_random(sp, s);
    const CostReport c = subnetwork_cost(sp, spec, toy_head_layout());
    const double a = ev(spec, c, 0);
    EXPECT_EQ(a, ev(spec, c, 99));
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_THROW(supernet_evaluator(nullptr, {}, 2, 5), std::invalid_argument);
  EXPECT_THROW(supernet_evaluator(net, {}, 0, 5), std::invalid_argument);
}

// Quadratic dominance oracle.
std::vector<std::size_t> pareto_oracle(const std::vector<TrialRecord>& ts) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!ts[i].score) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < ts.size() && !dominated; ++j) {
      if (!ts[j].score || i == j) continue;
      const auto ci = ts[i].cost.total_macs(), cj = ts[j].cost.total_macs();
      const double si = *ts[i].score, sj = *ts[j].score;
      dominated = cj <= ci && sj >= si && (cj < ci || sj > si);
    }
    if (!dominated) out.push_back(ts[i].index);
  }
  return out;
}

TEST(Pareto, MatchesQuadraticOracle) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const auto n = rng.uniform_index(20);
    std::vector<TrialRecord> ts(n);
    for (std::size_t i = 0; i < n; ++i) {
      ts[i].index = i;
      ts[i].cost.bodynet.macs = 1 + rng.uniform_index(8);
      ts[i].cost.hand_multiplicity = 2;
      if (rng.uniform(0, 1) < 0.8) ts[i].score = static_cast<double>(rng.uniform_index(6));
    }
    const auto front = pareto_report(ts);
    std::vector<std::size_t> got;
    for (const auto& t : front) got.push_back(t.index);
    auto want = pareto_oracle(ts);
    std::sort(got.begin(), got.end());
    ASSERT_EQ(got, want) << "seed " << seed;
    for (std::size_t i = 1; i < front.size(); ++i) ASSERT_LE(front[i - 1].cost.total_macs(), front[i].cost.total_macs());
  }
}

TEST(Reports, TrialJsonRoundTrip) {
  const SearchSpace sp = builtin_space("default");
  SearchConfig cfg = default_config(20);
  cfg.budget = 14'000'000'000ULL;
  const auto r = run_constrained_search(sp, cfg, 2);
  for (const auto& t : r.trials) {
    const std::string line = trial_to_json(t);
    const TrialRecord back = trial_from_json(line);
    EXPECT_EQ(trial_to_json(back), line);
    EXPECT_EQ(back.spec, t.spec);
    EXPECT_EQ(back.cost, t.cost);
    EXPECT_EQ(back.score, t.score);
  }
  EXPECT_THROW(trial_from_json("{"), std::invalid_argument);
  EXPECT_THROW(trial_from_json(R"({"schema":"other"})"), std::invalid_argument);
  EXPECT_THROW(trial_from_json(R"({"schema":"wbnas.trial/1"})"), std::invalid_argument);
}

TEST(Reports, SummaryTable) {
  const SearchSpace sp = builtin_space("default");
  TrialRecord t;
  t.spec = hrnet_w32_reference(sp);
  t.cost = subnetwork_cost(sp, t.spec);
  t.score = 0.5;
  const std::string table = summary_table({{"reference", t}});
  EXPECT_NE(table.find("reference"), std::string::npos);
  EXPECT_NE(table.find(" x 2"), std::string::npos);
  EXPECT_NE(table.find("0.5"), std::string::npos);
  EXPECT_NE(table.find("HandHead"), std::string::npos);
}

}  // namespace
}  // namespace wbnas
