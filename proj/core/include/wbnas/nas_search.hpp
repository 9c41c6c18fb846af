// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wbnas/cost_model.hpp"
#include "wbnas/search_space.hpp"
#include "wbnas/supernet.hpp"

namespace wbnas {

/// Scores one sub-network; higher is better. Must be safe to call concurrently.
using Evaluator = std::function<double(const SubNetworkSpec& spec, const CostReport& cost, std::uint64_t seed)>;

enum class AllocationMode { Automatic, Proportional };
enum class SamplingMode { Random, Exhaustive };

struct TrialRecord {
  std::size_t index = 0;  // attempt number, rejected attempts included
  std::uint64_t seed = 0;
  SubNetworkSpec spec;
  CostReport cost;
  bool accepted = false;  // cost.total_macs() <= budget
  bool eligible = false;  // accepted and, in proportional mode, within the fraction tolerance
  std::optional<double> score;  // set for eligible trials
};

struct SearchConfig {
  std::uint64_t budget = 0;  // total MACs
  int n_samples = 500;       // accepted trials to collect
  Evaluator evaluator;
  std::string evaluator_name;
  AllocationMode allocation = AllocationMode::Automatic;
  SamplingMode sampling = SamplingMode::Random;
  HeadLayout layout;
  int jobs = 1;
  /// Random mode gives up (with an error) after this many attempts.
  std::uint64_t max_attempts = 1'000'000;
  /// Proportional mode: allowed deviation of each module fraction.
  double fraction_tolerance = 0.02;
};

struct SearchResult {
  TrialRecord best;
  std::vector<TrialRecord> trials;  // ordered by index
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t eligible = 0;
  std::optional<AllocationFractions> reference_fractions;
};

/// Thrown when no sub-network of the space fits the budget.
class InfeasibleBudget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cheapest total cost any sub-network of `space` can reach.
std::uint64_t minimum_total_cost(const SearchSpace& space, const HeadLayout& layout = {});

/// Rejection-samples until `n_samples` trials fit the budget (exhaustive mode:
/// walks the space in canonical order instead), scores them and returns the
/// best. Ties go to lower total cost, then to the earlier trial.
SearchResult run_constrained_search(const SearchSpace& space, const SearchConfig& config, std::uint64_t seed);

/// Same trials, but only those whose per-module fractions lie within
/// `config.fraction_tolerance` of the reference spec's fractions compete.
SearchResult run_proportional_baseline(const SearchSpace& space, const SearchConfig& config,
                                       const SubNetworkSpec& reference, std::uint64_t seed);
/// Reference given as fractions directly (each in [0, 1], summing to 1).
SearchResult run_proportional_baseline(const SearchSpace& space, const SearchConfig& config,
                                       const AllocationFractions& reference, std::uint64_t seed);

/// Dispatches on config.allocation.
SearchResult run_search(const SearchSpace& space, const SearchConfig& config, std::uint64_t seed,
                        const SubNetworkSpec* reference = nullptr);

/// Scored trials not dominated by any other (cost <=, score >=, one strict), sorted by cost.
std::vector<TrialRecord> pareto_report(const std::vector<TrialRecord>& trials);

// Evaluators.

/// -(total MACs).
Evaluator negative_cost_evaluator();

/// sum over modules of w_m * sqrt(macs_m / budget); the hand term includes both hands.
Evaluator concave_evaluator(std::uint64_t budget, double w_body = 0.7, double w_face = 0.15, double w_hand = 0.15);

/// Concave evaluator weighted towards the bodynet.
Evaluator bodynet_preferring_evaluator(std::uint64_t budget);

/// Whole-body AP of the sub-network's predictions on `n_val` synthetic
/// validation instances (drawn once from `val_seed`).
Evaluator supernet_evaluator(std::shared_ptr<const Supernet> net, const SyntheticTaskConfig& task, int n_val,
                             std::uint64_t val_seed);

std::vector<std::string> builtin_evaluator_names();

/// Closed-form evaluators by name ("neg-cost", "concave", "bodynet-preferring").
Evaluator make_evaluator(const std::string& name, std::uint64_t budget);

// Reports.

inline constexpr std::string_view kTrialSchema = "wbnas.trial/1";

/// One JSON object per line.
std::string trial_to_json(const TrialRecord& trial);
TrialRecord trial_from_json(std::string_view line);

/// Fixed-width table: BodyNet, FaceHead, HandHead (x multiplicity), total GFLOPs and score.
std::string summary_table(const std::vector<std::pair<std::string, TrialRecord>>& rows);

}  // namespace wbnas
