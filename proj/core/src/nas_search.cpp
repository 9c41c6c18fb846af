// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/nas_search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "wbnas/metrics.hpp"
#include "wbnas/rng.hpp"
#include "wbnas/serialization.hpp"

namespace wbnas {

namespace {

constexpr std::uint64_t kTrialStream = 0x7121A1;

bool better(const TrialRecord& a, const TrialRecord& b) {
  if (*a.score != *b.score) return *a.score > *b.score;
  if (a.cost.total_macs() != b.cost.total_macs()) return a.cost.total_macs() < b.cost.total_macs();
  return a.index < b.index;
}

void check_config(const SearchConfig& cfg) {
  if (cfg.budget == 0) throw std::invalid_argument("search: budget must be positive");
  if (cfg.n_samples < 1) throw std::invalid_argument("search: n_samples must be >= 1");
  if (!cfg.evaluator) throw std::invalid_argument("search: no evaluator");
  if (cfg.jobs < 1) throw std::invalid_argument("search: jobs must be >= 1");
  if (!(cfg.fraction_tolerance >= 0)) throw std::invalid_argument("search: fraction tolerance must be >= 0");
}

std::vector<TrialRecord> collect_trials(const SearchSpace& space, const SearchConfig& cfg, std::uint64_t seed) {
  std::vector<TrialRecord> trials;
  std::size_t accepted = 0;
  const auto n_target = static_cast<std::size_t>(cfg.n_samples);
  auto add = [&](SubNetworkSpec spec, std::uint64_t trial_seed) {
    TrialRecord t;
    t.index = trials.size();
    t.seed = trial_seed;
    t.cost = subnetwork_cost(space, spec, cfg.layout);
    t.spec = std::move(spec);
    t.accepted = t.cost.total_macs() <= cfg.budget;
    accepted += t.accepted ? 1 : 0;
    trials.push_back(std::move(t));
  };
  if (cfg.sampling == SamplingMode::Exhaustive) {
    for_each_spec(space, [&](const SubNetworkSpec& spec) {
      add(spec, derive_seed(seed, kTrialStream, trials.size()));
      return accepted < n_target;
    });
  } else {
    while (accepted < n_target) {
      if (trials.size() >= cfg.max_attempts)
        throw std::runtime_error("search: only " + std::to_string(accepted) + " of " + std::to_string(n_target) +
                                 " samples fit the budget after " + std::to_string(trials.size()) + " attempts");
      const std::uint64_t s = derive_seed(seed, kTrialStream, trials.size());
      add(sample_random(space, s), s);
    }
  }
  return trials;
}

void evaluate(std::vector<TrialRecord>& trials, const SearchConfig& cfg) {
  std::vector<std::size_t> todo;
  for (const TrialRecord& t : trials)
    if (t.eligible) todo.push_back(t.index);
  std::vector<double> scores(todo.size());
  auto work = [&](std::size_t i) {
    const TrialRecord& t = trials[todo[i]];
    scores[i] = cfg.evaluator(t.spec, t.cost, t.seed);
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), todo.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < todo.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        try {
          for (std::size_t i = next++; i < todo.size(); i = next++) work(i);
        } catch (...) {
          errors[j] = std::current_exception();
          next = todo.size();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (!std::isfinite(scores[i])) throw std::runtime_error("search: evaluator returned a non-finite score");
    trials[todo[i]].score = scores[i];
  }
}

SearchResult finish(std::vector<TrialRecord> trials, const SearchConfig& cfg) {
  evaluate(trials, cfg);
  SearchResult r;
  const TrialRecord* best = nullptr;
  for (const TrialRecord& t : trials) {
    r.accepted += t.accepted ? 1 : 0;
    r.rejected += t.accepted ? 0 : 1;
    r.eligible += t.eligible ? 1 : 0;
    if (t.score && (!best || better(t, *best))) best = &t;
  }
  if (!best) throw InfeasibleBudget("search: no trial within the budget matches the reference allocation");
  r.best = *best;
  r.trials = std::move(trials);
  return r;
}

void require_feasible(const SearchSpace& space, const SearchConfig& cfg) {
  const std::uint64_t floor = minimum_total_cost(space, cfg.layout);
  if (floor > cfg.budget)
    throw InfeasibleBudget("search: budget " + std::to_string(cfg.budget) + " MACs is below the smallest sub-network (" +
                           std::to_string(floor) + " MACs)");
}

}  // namespace

std::uint64_t minimum_total_cost(const SearchSpace& space, const HeadLayout& layout) {
  SubNetworkSpec spec = sample_extreme(space, Extreme::Smallest);
  std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
  const auto& face_stages = space.facehead.connection->feature_stages;
  const auto& hand_stages = space.handhead.connection->feature_stages;
  for (int fs : face_stages)
    for (int hs : hand_stages) {
      spec.facehead.connection->feature_stage = fs;
      spec.handhead.connection->feature_stage = hs;
      best = std::min(best, subnetwork_cost(space, spec, layout).total_macs());
    }
  return best;
}

SearchResult run_constrained_search(const SearchSpace& space, const SearchConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  require_feasible(space, cfg);
  std::vector<TrialRecord> trials = collect_trials(space, cfg, seed);
  for (TrialRecord& t : trials) t.eligible = t.accepted;
  return finish(std::move(trials), cfg);
}

SearchResult run_proportional_baseline(const SearchSpace& space, const SearchConfig& cfg,
                                       const SubNetworkSpec& reference, std::uint64_t seed) {
  if (auto v = validate(reference, space); !v.empty())
    throw std::invalid_argument("search: reference spec invalid at " + v.front().path + ": " + v.front().message);
  return run_proportional_baseline(space, cfg, allocation_report(subnetwork_cost(space, reference, cfg.layout)), seed);
}

SearchResult run_proportional_baseline(const SearchSpace& space, const SearchConfig& cfg,
                                       const AllocationFractions& ref, std::uint64_t seed) {
  check_config(cfg);
  for (double f : {ref.bodynet, ref.facehead, ref.handhead})
    if (!(f >= 0 && f <= 1)) throw std::invalid_argument("search: reference fractions must lie in [0, 1]");
  if (std::abs(ref.bodynet + ref.facehead + ref.handhead - 1) > 1e-6)
    throw std::invalid_argument("search: reference fractions must sum to 1");
  require_feasible(space, cfg);
  std::vector<TrialRecord> trials = collect_trials(space, cfg, seed);
  for (TrialRecord& t : trials) {
    if (!t.accepted) continue;
    const AllocationFractions f = allocation_report(t.cost);
    const double tol = cfg.fraction_tolerance;
    t.eligible = std::abs(f.bodynet - ref.bodynet) <= tol && std::abs(f.facehead - ref.facehead) <= tol &&
                 std::abs(f.handhead - ref.handhead) <= tol;
  }
  SearchResult r = finish(std::move(trials), cfg);
  r.reference_fractions = ref;
  return r;
}

SearchResult run_search(const SearchSpace& space, const SearchConfig& cfg, std::uint64_t seed,
                        const SubNetworkSpec* reference) {
  if (cfg.allocation == AllocationMode::Automatic) return run_constrained_search(space, cfg, seed);
  if (!reference) throw std::invalid_argument("search: proportional allocation needs a reference spec");
  return run_proportional_baseline(space, cfg, *reference, seed);
}

std::vector<TrialRecord> pareto_report(const std::vector<TrialRecord>& trials) {
  std::vector<const TrialRecord*> scored;
  for (const TrialRecord& t : trials)
    if (t.score) scored.push_back(&t);
  std::stable_sort(scored.begin(), scored.end(), [](const TrialRecord* a, const TrialRecord* b) {
    return a->cost.total_macs() < b->cost.total_macs();
  });
  std::vector<TrialRecord> front;
  double cheaper_best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    double group_best = -std::numeric_limits<double>::infinity();
    const std::uint64_t c = scored[i]->cost.total_macs();
    for (; j < scored.size() && scored[j]->cost.total_macs() == c; ++j) group_best = std::max(group_best, *scored[j]->score);
    for (std::size_t k = i; k < j; ++k)
      if (*scored[k]->score == group_best && group_best > cheaper_best) front.push_back(*scored[k]);
    cheaper_best = std::max(cheaper_best, group_best);
    i = j;
  }
  return front;
}

Evaluator negative_cost_evaluator() {
  return [](const SubNetworkSpec&, const CostReport& c, std::uint64_t) { return -static_cast<double>(c.total_macs()); };
}

Evaluator concave_evaluator(std::uint64_t budget, double w_body, double w_face, double w_hand) {
  if (budget == 0) throw std::invalid_argument("concave evaluator: budget must be positive");
  const double b = static_cast<double>(budget);
  return [=](const SubNetworkSpec&, const CostReport& c, std::uint64_t) {
    const double hand = static_cast<double>(c.hand_multiplicity) * static_cast<double>(c.handhead.macs);
    return w_body * std::sqrt(static_cast<double>(c.bodynet.macs) / b) +
           w_face * std::sqrt(static_cast<double>(c.facehead.macs) / b) + w_hand * std::sqrt(hand / b);
  };
}

Evaluator bodynet_preferring_evaluator(std::uint64_t budget) { return concave_evaluator(budget, 1.0, 0.2, 0.2); }

Evaluator supernet_evaluator(std::shared_ptr<const Supernet> net, const SyntheticTaskConfig& task, int n_val,
                             std::uint64_t val_seed) {
  if (!net) throw std::invalid_argument("supernet evaluator: no network");
  if (n_val < 1) throw std::invalid_argument("supernet evaluator: need at least one validation instance");
  auto val = std::make_shared<const TrainBatch>(make_synthetic_task(val_seed, n_val, task));
  return [net, val](const SubNetworkSpec& spec, const CostReport&, std::uint64_t) {
    const auto& cfg = val->config;
    const int k = cfg.body_keypoints + cfg.face_keypoints + 2 * cfg.hand_keypoints;
    OksParams params;
    params.k.assign(static_cast<std::size_t>(k), 0.1);
    params.thresholds = OksParams::coco_thresholds();
    std::vector<ImageEval> images;
    for (std::size_t i = 0; i < val->instances.size(); ++i) {
      const SyntheticInstance& inst = val->instances[i];
      const SubnetPrediction p = predict(*net, spec, inst, cfg);
      PoseResult det, gt;
      gt.area = static_cast<double>(cfg.ref_height) * static_cast<double>(cfg.ref_width);
      auto part = [&](const HeatmapStack& hm, const std::vector<Point2>& pts, const std::vector<bool>& labeled) {
        for (const DecodedKeypoint& d : decode_quarter_offset(hm)) det.keypoints.push_back(d.source);
        det.visibility.resize(det.keypoints.size(), 2);
        for (std::size_t j = 0; j < pts.size(); ++j) {
          gt.keypoints.push_back(pts[j]);
          gt.visibility.push_back(labeled[j] ? 2 : 0);
        }
      };
      part(p.body, inst.body, inst.body_labeled);
      part(p.face, inst.face, inst.face_labeled);
      part(p.left_hand, inst.left_hand, inst.left_labeled);
      part(p.right_hand, inst.right_hand, inst.right_labeled);
      ImageEval img;
      img.image_id = static_cast<long long>(i);
      img.detections.push_back(std::move(det));
      img.ground_truths.push_back(std::move(gt));
      images.push_back(std::move(img));
    }
    const MapResult r = map_mar(images, params);
    return std::isnan(r.map) ? 0.0 : r.map;
  };
}

std::vector<std::string> builtin_evaluator_names() { return {"neg-cost", "concave", "bodynet-preferring", "supernet"}; }

Evaluator make_evaluator(const std::string& name, std::uint64_t budget) {
  if (name == "neg-cost") return negative_cost_evaluator();
  if (name == "concave") return concave_evaluator(budget);
  if (name == "bodynet-preferring") return bodynet_preferring_evaluator(budget);
  throw std::invalid_argument("unknown evaluator '" + name + "'");
}

std::string trial_to_json(const TrialRecord& t) {
  nlohmann::ordered_json j;
  j["schema"] = std::string(kTrialSchema);
  j["index"] = t.index;
  j["seed"] = t.seed;
  j["accepted"] = t.accepted;
  j["eligible"] = t.eligible;
  if (t.score)
    j["score"] = *t.score;
  else
    j["score"] = nullptr;
  j["cost"] = {{"bodynet_macs", t.cost.bodynet.macs},
               {"facehead_macs", t.cost.facehead.macs},
               {"handhead_macs", t.cost.handhead.macs},
               {"hand_multiplicity", t.cost.hand_multiplicity},
               {"total_macs", t.cost.total_macs()},
               {"bodynet_params", t.cost.bodynet.params},
               {"facehead_params", t.cost.facehead.params},
               {"handhead_params", t.cost.handhead.params}};
  j["spec"] = nlohmann::ordered_json::parse(spec_to_json(t.spec));
  return j.dump();
}

TrialRecord trial_from_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("trial: ") + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != kTrialSchema) throw std::invalid_argument("trial: unsupported schema");
    TrialRecord t;
    t.index = j.at("index").get<std::size_t>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.accepted = j.at("accepted").get<bool>();
    t.eligible = j.at("eligible").get<bool>();
    if (!j.at("score").is_null()) t.score = j.at("score").get<double>();
    const auto& c = j.at("cost");
    t.cost.bodynet = {c.at("bodynet_macs").get<std::uint64_t>(), c.at("bodynet_params").get<std::uint64_t>()};
    t.cost.facehead = {c.at("facehead_macs").get<std::uint64_t>(), c.at("facehead_params").get<std::uint64_t>()};
    t.cost.handhead = {c.at("handhead_macs").get<std::uint64_t>(), c.at("handhead_params").get<std::uint64_t>()};
    t.cost.hand_multiplicity = c.at("hand_multiplicity").get<int>();
    t.spec = spec_from_json(j.at("spec").dump());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("trial: ") + e.what());
  }
}

std::string summary_table(const std::vector<std::pair<std::string, TrialRecord>>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %10s %10s %14s %10s %10s\n", "Method", "BodyNet", "FaceHead", "HandHead",
                "Total", "Score");
  out << line;
  for (const auto& [name, t] : rows) {
    auto g = [](std::uint64_t macs) { return static_cast<double>(macs) / 1e9; };
    char hand[64];
    std::snprintf(hand, sizeof hand, "%.4f x %d", g(t.cost.handhead.macs), t.cost.hand_multiplicity);
    char score[32];
    if (t.score)
      std::snprintf(score, sizeof score, "%.6g", *t.score);
    else
      std::snprintf(score, sizeof score, "-");
    std::snprintf(line, sizeof line, "%-24s %10.4f %10.4f %14s %10.4f %10s\n", name.c_str(), g(t.cost.bodynet.macs),
                  g(t.cost.facehead.macs), hand, g(t.cost.total_macs()), score);
    out << line;
  }
  out << "(GFLOPs; one multiply-accumulate = one FLOP)\n";
  return out.str();
}

}  // namespace wbnas
