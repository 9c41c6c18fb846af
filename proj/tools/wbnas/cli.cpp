// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wbnas/cost_model.hpp"
#include "wbnas/dataset.hpp"
#include "wbnas/metrics.hpp"
#include "wbnas/nas_search.hpp"
#include "wbnas/rng.hpp"
#include "wbnas/search_space.hpp"
#include "wbnas/serialization.hpp"
#include "wbnas/supernet.hpp"

#ifndef WBNAS_VERSION
#define WBNAS_VERSION "0.0.0"
#endif

namespace wbnas::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a command produced; written under --out by commit().
struct RunOutput {
  std::string stdout_text;
  std::map<std::string, std::string> files;
  ojson resolved = ojson::object();
  std::vector<std::string> argv;              // canonical command line, --out excluded
  std::map<std::string, std::string> inputs;  // absolute path -> digest
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string absolute(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

/// Reads an input file and records its digest.
std::string read_input(RunOutput& run, const std::string& path) {
  const std::string abs = absolute(path);
  std::string text = read_text_file(abs);
  run.inputs[abs] = hex64(fnv1a64(text));
  return text;
}

ojson parse_json(const std::string& text, const std::string& what) {
  try {
    return ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw std::invalid_argument(what + ": " + e.what());
  }
}

bool is_builtin_space(const std::string& s) {
  const auto names = builtin_space_names();
  return std::find(names.begin(), names.end(), s) != names.end();
}

bool is_builtin_spec(const std::string& s) {
  const auto names = builtin_spec_names();
  return std::find(names.begin(), names.end(), s) != names.end();
}

/// Preset name or path (relative to `base`); files are recorded as inputs.
std::string resolve_ref(const std::string& ref, bool builtin, const fs::path& base = {}) {
  if (builtin) return ref;
  fs::path p(ref);
  if (p.is_relative() && !base.empty()) p = base / p;
  return absolute(p.string());
}

SearchSpace open_space(RunOutput& run, const std::string& ref) {
  if (is_builtin_space(ref)) return builtin_space(ref);
  return space_from_json(read_input(run, ref));
}

SubNetworkSpec open_spec(RunOutput& run, const std::string& ref, const SearchSpace& space) {
  if (is_builtin_spec(ref)) return load_spec(ref, space);
  return spec_from_json(read_input(run, ref));
}

HeadLayout layout_by_name(const std::string& name) {
  if (name == "default") return HeadLayout{};
  if (name == "toy") return toy_head_layout();
  throw std::invalid_argument("unknown layout '" + name + "' (default, toy)");
}

ojson layout_json(const HeadLayout& l) {
  return {{"image_channels", l.image_channels}, {"body_outputs", l.body_outputs}, {"face_outputs", l.face_outputs},
          {"hand_outputs", l.hand_outputs},     {"hand_multiplicity", l.hand_multiplicity}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double gflops(std::uint64_t macs) { return static_cast<double>(macs) / 1e9; }

/// Percentages in hundredths that sum to exactly 10000 (largest remainder).
std::vector<long> percent_hundredths(const std::vector<double>& fractions) {
  std::vector<long> out;
  std::vector<std::pair<double, std::size_t>> rem;
  long sum = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double raw = fractions[i] * 10000.0;
    const long f = static_cast<long>(std::floor(raw));
    out.push_back(f);
    sum += f;
    rem.emplace_back(raw - static_cast<double>(f), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; sum < 10000 && i < rem.size(); ++i, ++sum) ++out[rem[i].second];
  return out;
}

std::string cost_table(const CostReport& c, bool fractions) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %14s %12s%s\n", "Module", "GFLOPs", "MParams", fractions ? "   Share" : "");
  os << line;
  std::vector<long> pct;
  if (fractions) {
    const AllocationFractions f = allocation_report(c);
    pct = percent_hundredths({f.bodynet, f.facehead, f.handhead});
  }
  const std::tuple<const char*, const LayerCost*, int> rows[] = {
      {"BodyNet", &c.bodynet, 1}, {"FaceHead", &c.facehead, 1}, {"HandHead", &c.handhead, c.hand_multiplicity}};
  int r = 0;
  for (const auto& [name, lc, mult] : rows) {
    std::string g = fmt("%.4f", gflops(lc->macs));
    if (mult != 1) g += " ×" + std::to_string(mult);
    std::string share;
    if (fractions) share = fmt("  %6.2f%%", static_cast<double>(pct[static_cast<std::size_t>(r)]) / 100.0);
    // "×" is two bytes; pad by display width.
    const int pad = mult != 1 ? 15 : 14;
    std::snprintf(line, sizeof line, "%-10s %*s %12.4f%s\n", name, pad, g.c_str(),
                  static_cast<double>(lc->params) / 1e6, share.c_str());
    os << line;
    ++r;
  }
  std::snprintf(line, sizeof line, "%-10s %14.4f %12.4f%s\n", "Total", gflops(c.total_macs()),
                static_cast<double>(c.total_params()) / 1e6, fractions ? "  100.00%" : "");
  os << line;
  return os.str();
}

ojson cost_json(const CostReport& c) { return ojson::parse(cost_to_json(c)); }

// ---------------------------------------------------------------------------
// Commands.

struct SpaceArgs {
  std::string action;
  std::string space = "default";
  std::vector<std::string> dims;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int count = 1;
};

RunOutput cmd_space(const SpaceArgs& a) {
  RunOutput run;
  const std::string ref = resolve_ref(a.space, is_builtin_space(a.space));
  const SearchSpace space = open_space(run, ref);
  run.argv = {"space", a.action, "--space", ref};
  run.resolved["space"] = ojson::parse(space_to_json(space));
  std::ostringstream os;
  if (a.action == "count") {
    if (!a.dims.empty()) {
      std::string joined;
      for (const auto& d : a.dims) joined += (joined.empty() ? "" : ",") + d;
      run.argv.insert(run.argv.end(), {"--dims", joined});
    }
    run.resolved["dims"] = a.dims;
    try {
      const std::uint64_t n = a.dims.empty() ? total_count(space) : enumerate_count(space, a.dims);
      os << n << "\n";
    } catch (const CountOverflow&) {
      os << "overflow (> 2^64 - 1)\n";
    }
  } else if (a.action == "sample") {
    if (!a.has_seed) throw UsageError("space sample: --seed is required");
    if (a.count < 1) throw UsageError("space sample: --count must be >= 1");
    run.argv.insert(run.argv.end(), {"--seed", std::to_string(a.seed), "--count", std::to_string(a.count)});
    run.resolved["seed"] = a.seed;
    run.resolved["count"] = a.count;
    for (int i = 0; i < a.count; ++i) {
      const std::uint64_t s = a.count == 1 ? a.seed : derive_seed(a.seed, 0x5A3B1E, static_cast<std::uint64_t>(i));
      os << spec_to_json(sample_random(space, s)) << "\n";
    }
  } else if (a.action == "extremes") {
    os << "biggest  " << spec_to_json(sample_extreme(space, Extreme::Biggest)) << "\n";
    os << "smallest " << spec_to_json(sample_extreme(space, Extreme::Smallest)) << "\n";
  } else if (a.action == "show") {
    os << space_to_json(space) << "\n";
  } else if (a.action == "dims") {
    for (const Dimension& d : dimensions(space)) os << d.name << "\n";
  } else {
    throw UsageError("space: unknown action '" + a.action + "' (count, sample, extremes, show, dims)");
  }
  run.stdout_text = os.str();
  run.files["space.txt"] = run.stdout_text;
  return run;
}

struct CostArgs {
  std::string spec;
  std::string space = "default";
  std::string layout = "default";
  bool fractions = false;
};

RunOutput cmd_cost(const CostArgs& a) {
  RunOutput run;
  const std::string space_ref = resolve_ref(a.space, is_builtin_space(a.space));
  const SearchSpace space = open_space(run, space_ref);
  const std::string spec_ref = resolve_ref(a.spec, is_builtin_spec(a.spec));
  const SubNetworkSpec spec = open_spec(run, spec_ref, space);
  const HeadLayout layout = layout_by_name(a.layout);
  run.argv = {"cost", "--spec", spec_ref, "--space", space_ref, "--layout", a.layout};
  if (a.fractions) run.argv.push_back("--fractions");
  if (auto v = validate(spec, space); !v.empty())
    throw std::invalid_argument("spec invalid at " + v.front().path + ": " + v.front().message);
  const CostReport c = subnetwork_cost(space, spec, layout);
  run.resolved["space"] = ojson::parse(space_to_json(space));
  run.resolved["spec"] = ojson::parse(spec_to_json(spec));
  run.resolved["layout"] = layout_json(layout);
  run.stdout_text = cost_table(c, a.fractions);
  ojson out = cost_json(c);
  if (a.fractions) {
    const AllocationFractions f = allocation_report(c);
    out["fractions"] = {{"bodynet", f.bodynet}, {"facehead", f.facehead}, {"handhead", f.handhead}};
  }
  run.files["cost.txt"] = run.stdout_text;
  run.files["cost.json"] = out.dump(2) + "\n";
  run.files["cost_record.txt"] = to_text_record(c) + "\n";
  return run;
}

std::uint64_t budget_from(const ojson& cfg) {
  if (cfg.contains("budget_macs")) return cfg["budget_macs"].get<std::uint64_t>();
  if (cfg.contains("budget_gflops")) {
    const double g = cfg["budget_gflops"].get<double>();
    if (!(g > 0)) throw std::invalid_argument("search config: budget_gflops must be positive");
    return static_cast<std::uint64_t>(std::llround(g * 1e9));
  }
  throw std::invalid_argument("search config: need budget_macs or budget_gflops");
}

std::shared_ptr<Supernet> open_supernet(RunOutput& run, const std::string& path, const SearchSpace& space) {
  const std::string text = read_input(run, path);
  std::istringstream hin(text);
  const Checkpoint meta = read_checkpoint_header(hin);
  auto net = std::make_shared<Supernet>(space, meta.layout, meta.seed);
  std::istringstream in(text);
  load_checkpoint(in, *net);
  return net;
}

struct SearchArgs {
  std::string config;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string checkpoint;
};

RunOutput cmd_search(const SearchArgs& a) {
  RunOutput run;
  const std::string cfg_path = absolute(a.config);
  const ojson cfg = parse_json(read_input(run, cfg_path), "search config");
  const fs::path base = fs::path(cfg_path).parent_path();
  run.argv = {"search", "--config", cfg_path, "--seed", std::to_string(a.seed), "--jobs", std::to_string(a.jobs)};
  if (!a.checkpoint.empty()) run.argv.insert(run.argv.end(), {"--checkpoint", absolute(a.checkpoint)});

  const std::string space_name = cfg.value("space", "default");
  const std::string space_ref = resolve_ref(space_name, is_builtin_space(space_name), base);
  const SearchSpace space = open_space(run, space_ref);

  SearchConfig sc;
  sc.budget = budget_from(cfg);
  sc.n_samples = cfg.value("n_samples", 500);
  sc.evaluator_name = cfg.value("evaluator", "concave");
  sc.layout = layout_by_name(cfg.value("layout", "default"));
  sc.jobs = a.jobs;
  sc.max_attempts = cfg.value("max_attempts", std::uint64_t{1'000'000});
  sc.fraction_tolerance = cfg.value("fraction_tolerance", 0.02);
  const std::string sampling = cfg.value("sampling", "random");
  if (sampling == "random")
    sc.sampling = SamplingMode::Random;
  else if (sampling == "exhaustive")
    sc.sampling = SamplingMode::Exhaustive;
  else
    throw std::invalid_argument("search config: sampling must be random or exhaustive");
  const std::string allocation = cfg.value("allocation", "automatic");
  if (allocation == "automatic")
    sc.allocation = AllocationMode::Automatic;
  else if (allocation == "proportional")
    sc.allocation = AllocationMode::Proportional;
  else
    throw std::invalid_argument("search config: allocation must be automatic or proportional");

  ojson resolved_eval = {{"name", sc.evaluator_name}};
  if (sc.evaluator_name == "supernet") {
    const ojson& sn = cfg.at("supernet");
    const std::string ckpt = a.checkpoint.empty()
                                 ? resolve_ref(sn.at("checkpoint").get<std::string>(), false, base)
                                 : absolute(a.checkpoint);
    const int n_val = sn.value("val_instances", 16);
    const std::uint64_t val_seed = sn.value("val_seed", std::uint64_t{1});
    auto net = open_supernet(run, ckpt, space);
    sc.layout = net->layout();
    sc.evaluator = supernet_evaluator(net, SyntheticTaskConfig{}, n_val, val_seed);
    resolved_eval["checkpoint"] = ckpt;
    resolved_eval["val_instances"] = n_val;
    resolved_eval["val_seed"] = val_seed;
  } else {
    sc.evaluator = make_evaluator(sc.evaluator_name, sc.budget);
  }

  std::optional<SubNetworkSpec> reference;
  std::string reference_ref;
  if (cfg.contains("reference")) {
    const std::string r = cfg["reference"].get<std::string>();
    reference_ref = resolve_ref(r, is_builtin_spec(r), base);
    reference = open_spec(run, reference_ref, space);
  }
  std::optional<CostReport> reference_cost;
  if (cfg.contains("reference_gflops")) {
    if (reference) throw std::invalid_argument("search config: give reference or reference_gflops, not both");
    const auto g = cfg["reference_gflops"].get<std::vector<double>>();
    if (g.size() != 3) throw std::invalid_argument("search config: reference_gflops needs [bodynet, facehead, handhead]");
    for (double v : g)
      if (!(v >= 0)) throw std::invalid_argument("search config: reference_gflops must be non-negative");
    CostReport c;
    c.bodynet.macs = static_cast<std::uint64_t>(std::llround(g[0] * 1e9));
    c.facehead.macs = static_cast<std::uint64_t>(std::llround(g[1] * 1e9));
    c.handhead.macs = static_cast<std::uint64_t>(std::llround(g[2] * 1e9));
    c.hand_multiplicity = sc.layout.hand_multiplicity;
    reference_cost = c;
  } else if (reference) {
    reference_cost = subnetwork_cost(space, *reference, sc.layout);
  }
  if (sc.allocation == AllocationMode::Proportional && !reference_cost)
    throw std::invalid_argument("search config: proportional allocation needs reference or reference_gflops");

  run.resolved["space"] = ojson::parse(space_to_json(space));
  run.resolved["budget_macs"] = sc.budget;
  run.resolved["n_samples"] = sc.n_samples;
  run.resolved["evaluator"] = resolved_eval;
  run.resolved["allocation"] = allocation;
  run.resolved["sampling"] = sampling;
  run.resolved["fraction_tolerance"] = sc.fraction_tolerance;
  run.resolved["layout"] = layout_json(sc.layout);
  run.resolved["max_attempts"] = sc.max_attempts;
  run.resolved["seed"] = a.seed;
  run.resolved["jobs"] = a.jobs;
  if (reference) run.resolved["reference"] = ojson::parse(spec_to_json(*reference));
  if (reference_cost && !reference) run.resolved["reference_macs"] = cost_json(*reference_cost);

  const SearchResult r = sc.allocation == AllocationMode::Automatic
                             ? run_constrained_search(space, sc, a.seed)
                             : run_proportional_baseline(space, sc, allocation_report(*reference_cost), a.seed);

  std::string log;
  for (const TrialRecord& t : r.trials) log += trial_to_json(t) + "\n";
  std::string front;
  for (const TrialRecord& t : pareto_report(r.trials)) front += trial_to_json(t) + "\n";

  std::vector<std::pair<std::string, TrialRecord>> rows;
  if (reference_cost) {
    TrialRecord ref;
    if (reference) ref.spec = *reference;
    ref.cost = *reference_cost;
    rows.emplace_back("reference", ref);
  }
  rows.emplace_back(allocation == "automatic" ? "automatic allocation" : "proportional allocation", r.best);

  std::ostringstream os;
  os << summary_table(rows);
  os << "trials " << r.trials.size() << "  accepted " << r.accepted << "  rejected " << r.rejected << "  eligible "
     << r.eligible << "  rejection rate " << fmt("%.4f", static_cast<double>(r.rejected) / r.trials.size()) << "\n";
  os << "best trial " << r.best.index << "\n";

  ojson summary = {{"best_index", r.best.index},
                   {"best_score", *r.best.score},
                   {"best_cost", cost_json(r.best.cost)},
                   {"trials", r.trials.size()},
                   {"accepted", r.accepted},
                   {"rejected", r.rejected},
                   {"eligible", r.eligible}};
  if (r.reference_fractions)
    summary["reference_fractions"] = {{"bodynet", r.reference_fractions->bodynet},
                                      {"facehead", r.reference_fractions->facehead},
                                      {"handhead", r.reference_fractions->handhead}};

  run.stdout_text = os.str();
  run.files["trials.jsonl"] = log;
  run.files["pareto.jsonl"] = front;
  run.files["best_spec.json"] = spec_to_json(r.best.spec, 2) + "\n";
  run.files["summary.txt"] = run.stdout_text;
  run.files["search.json"] = summary.dump(2) + "\n";
  return run;
}

struct TrainArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string resume;
};

RunOutput cmd_train(const TrainArgs& a) {
  RunOutput run;
  const std::string cfg_path = absolute(a.config);
  const ojson cfg = parse_json(read_input(run, cfg_path), "train config");
  const fs::path base = fs::path(cfg_path).parent_path();
  run.argv = {"train", "--config", cfg_path, "--seed", std::to_string(a.seed)};

  const std::string space_name = cfg.value("space", "toy");
  const std::string space_ref = resolve_ref(space_name, is_builtin_space(space_name), base);
  const SearchSpace space = open_space(run, space_ref);
  const HeadLayout layout = layout_by_name(cfg.value("layout", "toy"));

  TrainConfig tc;
  tc.seed = a.seed;
  tc.steps = cfg.value("steps", 200);
  tc.batch_size = cfg.value("batch_size", 2);
  tc.learning_rate = cfg.value("learning_rate", 0.05);
  tc.n_random = cfg.value("n_random", 2);
  if (tc.steps < 0 || tc.batch_size < 1 || !(tc.learning_rate > 0) || tc.n_random < 0)
    throw std::invalid_argument("train config: need steps >= 0, batch_size >= 1, learning_rate > 0, n_random >= 0");

  Supernet net(space, layout, a.seed);
  std::uint64_t first = 0;
  if (!a.resume.empty()) {
    const std::string ckpt = absolute(a.resume);
    run.argv.insert(run.argv.end(), {"--resume", ckpt});
    std::istringstream in(read_input(run, ckpt));
    const Checkpoint meta = load_checkpoint(in, net);
    if (meta.seed != a.seed)
      throw std::invalid_argument("train: checkpoint was trained with seed " + std::to_string(meta.seed));
    if (meta.step > static_cast<std::uint64_t>(tc.steps))
      throw std::invalid_argument("train: checkpoint is past the configured step count");
    first = meta.step;
    run.resolved["resume_step"] = first;
  }
  run.resolved["space"] = ojson::parse(space_to_json(space));
  run.resolved["layout"] = layout_json(layout);
  run.resolved["seed"] = a.seed;
  run.resolved["steps"] = tc.steps;
  run.resolved["batch_size"] = tc.batch_size;
  run.resolved["learning_rate"] = tc.learning_rate;
  run.resolved["n_random"] = tc.n_random;

  std::string curve;
  std::ostringstream os;
  train(net, tc, first, [&](std::uint64_t step, const SandwichStep& st) {
    ojson rec;
    rec["step"] = step;
    rec["forward_passes"] = st.forward_passes;
    ojson members = ojson::array();
    for (const SandwichMember& m : st.members)
      members.push_back({{"role", m.role},
                         {"body", m.loss.body},
                         {"face", m.loss.face},
                         {"hand", m.loss.hand},
                         {"total", m.loss.total()},
                         {"total_macs", subnetwork_cost(space, m.spec, layout).total_macs()}});
    rec["members"] = std::move(members);
    curve += rec.dump() + "\n";
    if (step == first || (step + 1) % 20 == 0 || step + 1 == static_cast<std::uint64_t>(tc.steps))
      os << "step " << step << "  passes " << st.forward_passes << "  biggest "
         << fmt("%.6f", st.members.front().loss.total()) << "\n";
  });

  std::ostringstream ck;
  Checkpoint meta;
  meta.space_name = space.name;
  meta.layout = layout;
  meta.seed = a.seed;
  meta.step = static_cast<std::uint64_t>(tc.steps);
  save_checkpoint(ck, net, meta);
  run.stdout_text = os.str();
  run.files["checkpoint.bin"] = ck.str();
  run.files["loss.jsonl"] = curve;
  return run;
}

std::vector<double> read_k(RunOutput& run, const std::string& path) {
  const ojson j = parse_json(read_input(run, path), "k file");
  const ojson& arr = j.is_object() ? j.at("k") : j;
  std::vector<double> k;
  for (const auto& v : arr) {
    if (!v.is_number()) throw std::invalid_argument("k file: every entry must be a number");
    k.push_back(v.get<double>());
  }
  return k;
}

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void report_diagnostics(std::ostringstream& os, const std::string& what, const AnnotationSet& set) {
  for (const Diagnostic& d : set.diagnostics) os << what << ":" << d.line << ": " << d.message << "\n";
}

struct EvalArgs {
  std::string gt, pred, k;
  std::vector<std::string> metrics{"ap", "landmarks"};
};

RunOutput cmd_eval(const EvalArgs& a) {
  RunOutput run;
  const std::string gt_path = absolute(a.gt), pred_path = absolute(a.pred), k_path = absolute(a.k);
  std::string joined;
  for (const auto& m : a.metrics) {
    if (m != "ap" && m != "landmarks") throw UsageError("eval: unknown metric '" + m + "' (ap, landmarks)");
    joined += (joined.empty() ? "" : ",") + m;
  }
  run.argv = {"eval", "--gt", gt_path, "--pred", pred_path, "--k", k_path, "--metrics", joined};
  const AnnotationSet gt = parse_annotations(read_input(run, gt_path));
  const AnnotationSet pred = parse_annotations(read_input(run, pred_path));
  OksParams params;
  params.k = read_k(run, k_path);
  params.thresholds = OksParams::coco_thresholds();
  if (auto p = params.check(kWholeBodyKeypoints); !p.empty()) throw std::invalid_argument("k file: " + p.front());
  run.resolved["metrics"] = a.metrics;
  run.resolved["k"] = params.k;
  run.resolved["thresholds"] = params.thresholds;

  std::ostringstream os;
  report_diagnostics(os, "gt", gt);
  report_diagnostics(os, "pred", pred);
  ojson out;
  const bool want_ap = std::find(a.metrics.begin(), a.metrics.end(), "ap") != a.metrics.end();
  const bool want_lm = std::find(a.metrics.begin(), a.metrics.end(), "landmarks") != a.metrics.end();
  if (want_ap) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %8s %8s %6s\n", "part", "AP", "AR", "GTs");
    os << line;
    ojson parts = ojson::object();
    for (const PartReport& pr : evaluate_wholebody(gt, pred, params)) {
      std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %6d\n", std::string(to_string(pr.part)).c_str(),
                    pr.result.map, pr.result.mar, pr.result.num_ground_truths);
      os << line;
      ojson ap = ojson::array(), ar = ojson::array();
      for (double v : pr.result.ap) ap.push_back(number_or_null(v));
      for (double v : pr.result.ar) ar.push_back(number_or_null(v));
      parts[std::string(to_string(pr.part))] = {{"map", number_or_null(pr.result.map)},
                                                {"mar", number_or_null(pr.result.mar)},
                                                {"ap", ap},
                                                {"ar", ar},
                                                {"ground_truths", pr.result.num_ground_truths},
                                                {"detections", pr.result.num_detections}};
    }
    out["oks"] = parts;
  }
  if (want_lm) {
    const LandmarkReport lm = evaluate_landmarks(gt, pred);
    os << "face NME " << fmt("%.6f", lm.face_nme) << " (" << lm.faces << " faces)\n";
    os << "hand PCK@0.2 " << fmt("%.6f", lm.hand_pck) << "  AUC " << fmt("%.6f", lm.hand_auc) << "  EPE "
       << fmt("%.6f", lm.hand_epe) << " (" << lm.hands << " hands)\n";
    out["landmarks"] = {{"face_nme", number_or_null(lm.face_nme)}, {"faces", lm.faces},
                        {"hand_pck", number_or_null(lm.hand_pck)}, {"hand_auc", number_or_null(lm.hand_auc)},
                        {"hand_epe", number_or_null(lm.hand_epe)}, {"hands", lm.hands}};
  }
  run.stdout_text = os.str();
  run.files["eval.json"] = out.dump(2) + "\n";
  run.files["eval.txt"] = run.stdout_text;
  return run;
}

struct DatasetArgs {
  std::string action;
  std::string ann;
  double bin_width = 16;
  int bins = 32;
  int grid = 10;
  std::string subset = "face";
  double expansion = 1.0;
};

std::string histogram_text(const Histogram1D& h) {
  std::ostringstream os;
  std::size_t peak = 1;
  for (std::size_t c : h.counts) peak = std::max(peak, c);
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    char line[96];
    std::snprintf(line, sizeof line, "  [%7.1f, %7.1f) %6zu ", h.bin_width * static_cast<double>(i),
                  h.bin_width * static_cast<double>(i + 1), h.counts[i]);
    os << line << std::string(h.counts[i] * 40 / peak, '#') << "\n";
  }
  os << "  overflow " << h.overflow << "\n";
  return os.str();
}

RunOutput cmd_dataset(const DatasetArgs& a) {
  RunOutput run;
  const std::string path = absolute(a.ann);
  run.argv = {"dataset", a.action, "--ann", path};
  const AnnotationSet set = parse_annotations(read_input(run, path));
  std::ostringstream os;
  report_diagnostics(os, "ann", set);
  const PartCounts pc = set.valid_boxes();
  os << "records " << set.annotations.size() << "  skipped " << set.diagnostics.size() << "  images "
     << set.images.size() << "  faces " << pc.faces << "  left hands " << pc.left_hands << "  right hands "
     << pc.right_hands << "\n";
  ojson diag = ojson::array();
  for (const Diagnostic& d : set.diagnostics) diag.push_back({{"line", d.line}, {"message", d.message}});
  ojson counts = {{"records", set.annotations.size()}, {"skipped", set.diagnostics.size()},
                  {"images", set.images.size()},       {"faces", pc.faces},
                  {"left_hands", pc.left_hands},       {"right_hands", pc.right_hands}};

  if (a.action == "validate") {
    run.files["validate.json"] = ojson({{"counts", counts}, {"diagnostics", diag}}).dump(2) + "\n";
  } else if (a.action == "stats") {
    if (!(a.bin_width > 0) || a.bins < 1 || a.grid < 1) throw UsageError("dataset stats: bins and grid must be positive");
    run.argv.insert(run.argv.end(), {"--bin-width", fmt("%.17g", a.bin_width), "--bins", std::to_string(a.bins),
                                     "--grid", std::to_string(a.grid)});
    run.resolved["bin_width"] = a.bin_width;
    run.resolved["bins"] = a.bins;
    run.resolved["grid"] = a.grid;
    ojson stats;
    stats["counts"] = counts;
    for (BoxPart p : kBoxParts) {
      const std::string name(to_string(p));
      const Histogram1D h = box_diagonal_histogram(set.annotations, p, a.bin_width, a.bins);
      const Histogram2D c = center_histogram(set.annotations, set.images, p, a.grid, a.grid);
      stats["box_diagonal"][name] = {{"bin_width", h.bin_width}, {"counts", h.counts}, {"overflow", h.overflow}};
      stats["center"][name] = {{"bins_x", c.bins_x}, {"bins_y", c.bins_y}, {"counts", c.counts}, {"outside", c.outside}};
      os << name << " box diagonal (" << h.total() << " boxes)\n" << histogram_text(h);
    }
    for (Part p : {Part::Body, Part::Foot, Part::Face, Part::Hand}) {
      const EdgeDistance d = mean_edge_distance(set.annotations, default_skeleton(p));
      stats["edge_distance"][std::string(to_string(p))] = {{"mean", number_or_null(d.mean)}, {"edges", d.edges}};
      os << to_string(p) << " mean edge length " << fmt("%.4f", d.mean) << " over " << d.edges << " edges\n";
    }
    run.files["stats.json"] = stats.dump(2) + "\n";
    run.files["stats.txt"] = os.str();
  } else if (a.action == "extract") {
    Subset which;
    if (a.subset == "face")
      which = Subset::Face;
    else if (a.subset == "hand")
      which = Subset::Hand;
    else
      throw UsageError("dataset extract: --subset must be face or hand");
    run.argv.insert(run.argv.end(), {"--subset", a.subset, "--expansion", fmt("%.17g", a.expansion)});
    run.resolved["subset"] = a.subset;
    run.resolved["expansion"] = a.expansion;
    const auto crops = extract_subsets(set.annotations, which, a.expansion);
    os << crops.size() << " crops\n";
    run.files["crops.jsonl"] = serialize_crops(crops);
  } else if (a.action == "sigmas") {
    const auto groups = group_repeated(set.annotations);
    const SigmaResult s = sigmas_from_annotators(groups, kWholeBodyKeypoints);
    ojson sig = ojson::array(), k = ojson::array();
    for (double v : s.sigma) {
      sig.push_back(number_or_null(v));
      k.push_back(number_or_null(2 * v));
    }
    run.files["sigmas.json"] = ojson({{"schema", "wbnas.sigmas/1"},
                                      {"instances", groups.size()},
                                      {"sigma", sig},
                                      {"k", k},
                                      {"samples", s.samples},
                                      {"excluded", s.excluded}})
                                   .dump(2) +
                               "\n";
    os << groups.size() << " repeated instances, " << s.excluded.size() << " keypoints excluded\n";
  } else {
    throw UsageError("dataset: unknown action '" + a.action + "' (validate, stats, extract, sigmas)");
  }
  run.stdout_text = os.str();
  return run;
}

// ---------------------------------------------------------------------------
// Output and manifests.

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

void commit(const std::string& out_dir, const RunOutput& run) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  ojson manifest;
  manifest["schema"] = std::string(kManifestSchema);
  manifest["tool"] = "wbnas";
  manifest["version"] = WBNAS_VERSION;
  manifest["command"] = run.argv;
  manifest["resolved"] = run.resolved;
  ojson inputs = ojson::object();
  for (const auto& [p, h] : run.inputs) inputs[p] = h;
  manifest["inputs"] = inputs;
  ojson outputs = ojson::object();
  for (const auto& [name, bytes] : run.files) {
    write_file(dir / name, bytes);
    outputs[name] = hex64(fnv1a64(bytes));
  }
  manifest["outputs"] = outputs;
  write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

int replay(const std::string& manifest_path, const std::string& out_dir, bool check, std::ostream& out,
           std::ostream& err) {
  const ojson m = parse_json(read_text_file(manifest_path), "manifest");
  if (m.value("schema", "") != kManifestSchema) throw std::invalid_argument("manifest: unsupported schema");
  for (const auto& [path, digest] : m.at("inputs").items()) {
    std::string now;
    try {
      now = hex64(fnv1a64(read_text_file(path)));
    } catch (const std::exception&) {
      throw std::runtime_error("replay: input '" + path + "' is missing");
    }
    if (now != digest.get<std::string>()) throw std::runtime_error("replay: input '" + path + "' has changed");
  }
  std::vector<std::string> args = m.at("command").get<std::vector<std::string>>();
  args.insert(args.end(), {"--out", out_dir});
  const int rc = run(args, out, err);
  if (rc != 0 || !check) return rc;
  const ojson again = parse_json(read_text_file((fs::path(out_dir) / kManifestFile).string()), "manifest");
  if (again.at("outputs") != m.at("outputs")) {
    err << "replay: outputs differ from the manifest\n";
    for (const auto& [name, digest] : m.at("outputs").items()) {
      const auto& o = again.at("outputs");
      if (!o.contains(name) || o[name] != digest) err << "  " << name << "\n";
    }
    return 3;
  }
  out << "replay: all " << m.at("outputs").size() << " outputs match\n";
  return 0;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Whole-body pose NAS engine and evaluation toolkit", "wbnas"};
  app.require_subcommand(1);
  app.set_version_flag("--version", WBNAS_VERSION);
  std::string out_dir;

  SpaceArgs sa;
  auto* space = app.add_subcommand("space", "Inspect a search space");
  space->add_option("action", sa.action, "count | sample | extremes | show | dims")->required();
  space->add_option("--space", sa.space, "Preset name or JSON file")->capture_default_str();
  space->add_option("--dims", sa.dims, "Dimensions to count (default: all)")->delimiter(',');
  auto* space_seed = space->add_option("--seed", sa.seed, "Sampling seed");
  space->add_option("--count", sa.count, "Number of samples")->capture_default_str();
  space->add_option("--out", out_dir, "Output directory")->required();

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "Cost report of a sub-network");
  cost->add_option("--spec", ca.spec, "hrnet-w32-reference | biggest | smallest | JSON file")->required();
  cost->add_option("--space", ca.space, "Preset name or JSON file")->capture_default_str();
  cost->add_option("--layout", ca.layout, "Head output layout (default, toy)")->capture_default_str();
  cost->add_flag("--fractions", ca.fractions, "Add per-module allocation percentages");
  cost->add_option("--out", out_dir, "Output directory")->required();

  SearchArgs sr;
  auto* search = app.add_subcommand("search", "Budget-constrained sub-network search");
  search->add_option("--config", sr.config, "Search config (JSON)")->required();
  search->add_option("--seed", sr.seed, "Run seed")->required();
  search->add_option("--jobs", sr.jobs, "Parallel evaluations")->capture_default_str()->check(CLI::PositiveNumber);
  search->add_option("--checkpoint", sr.checkpoint, "Supernet checkpoint (overrides the config)");
  search->add_option("--out", out_dir, "Output directory")->required();

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Sandwich-rule supernet training on the synthetic task");
  trn->add_option("--config", tr.config, "Train config (JSON)")->required();
  trn->add_option("--seed", tr.seed, "Run seed")->required();
  trn->add_option("--resume", tr.resume, "Checkpoint to continue from");
  trn->add_option("--out", out_dir, "Output directory")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Whole-body OKS AP and landmark metrics");
  eval->add_option("--gt", ev.gt, "Ground-truth annotations")->required();
  eval->add_option("--pred", ev.pred, "Predictions (annotation container with scores)")->required();
  eval->add_option("--k", ev.k, "Per-keypoint OKS constants (133 numbers)")->required();
  eval->add_option("--metrics", ev.metrics, "ap, landmarks")->delimiter(',')->capture_default_str();
  eval->add_option("--out", out_dir, "Output directory")->required();

  DatasetArgs da;
  auto* ds = app.add_subcommand("dataset", "Annotation validation, statistics and subsets");
  ds->add_option("action", da.action, "validate | stats | extract | sigmas")->required();
  ds->add_option("--ann", da.ann, "Annotation container")->required();
  ds->add_option("--bin-width", da.bin_width, "Diagonal histogram bin width (px)")->capture_default_str();
  ds->add_option("--bins", da.bins, "Diagonal histogram bins")->capture_default_str();
  ds->add_option("--grid", da.grid, "Center histogram bins per axis")->capture_default_str();
  ds->add_option("--subset", da.subset, "face | hand")->capture_default_str();
  ds->add_option("--expansion", da.expansion, "Crop expansion ratio")->capture_default_str();
  ds->add_option("--out", out_dir, "Output directory")->required();

  std::string manifest;
  bool check = false;
  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest");
  rep->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  rep->add_option("--out", out_dir, "Output directory")->required();
  rep->add_flag("--check", check, "Fail unless every output is bit-identical");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (rep->parsed()) return replay(manifest, out_dir, check, out, err);
    RunOutput result;
    if (space->parsed()) {
      sa.has_seed = space_seed->count() > 0;
      result = cmd_space(sa);
    } else if (cost->parsed()) {
      result = cmd_cost(ca);
    } else if (search->parsed()) {
      result = cmd_search(sr);
    } else if (trn->parsed()) {
      result = cmd_train(tr);
    } else if (eval->parsed()) {
      result = cmd_eval(ev);
    } else if (ds->parsed()) {
      result = cmd_dataset(da);
    }
    commit(out_dir, result);
    out << result.stdout_text;
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace wbnas::cli
