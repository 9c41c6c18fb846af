// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/search_space.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <tuple>

#include "wbnas/rng.hpp"

namespace wbnas {

std::vector<int> DimensionRange::values() const {
  std::vector<int> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i));
  return out;
}

std::string DimensionRange::to_string() const {
  std::ostringstream os;
  os << '[' << start << ", " << end << "; " << stride << ']';
  return os.str();
}

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::PlainConv: return "plain-conv";
    case OperatorKind::Bottleneck: return "bottleneck";
    case OperatorKind::BasicBlock: return "basic-block";
  }
  return "?";
}

std::string_view to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::BodyNet: return "bodynet";
    case ModuleKind::FaceHead: return "facehead";
    case ModuleKind::HandHead: return "handhead";
  }
  return "?";
}

OperatorKind parse_operator_kind(std::string_view name) {
  for (auto k : {OperatorKind::PlainConv, OperatorKind::Bottleneck, OperatorKind::BasicBlock})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown operator kind '" + std::string(name) + "'");
}

ModuleKind parse_module_kind(std::string_view name) {
  for (auto k : kAllModules)
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown module '" + std::string(name) + "'");
}

const ModuleSpace& SearchSpace::module(ModuleKind kind) const {
  switch (kind) {
    case ModuleKind::BodyNet: return bodynet;
    case ModuleKind::FaceHead: return facehead;
    case ModuleKind::HandHead: return handhead;
  }
  throw std::logic_error("bad module kind");
}

ModuleSpace& SearchSpace::module(ModuleKind kind) {
  return const_cast<ModuleSpace&>(std::as_const(*this).module(kind));
}

const ModuleChoice& SubNetworkSpec::module(ModuleKind kind) const {
  switch (kind) {
    case ModuleKind::BodyNet: return bodynet;
    case ModuleKind::FaceHead: return facehead;
    case ModuleKind::HandHead: return handhead;
  }
  throw std::logic_error("bad module kind");
}

ModuleChoice& SubNetworkSpec::module(ModuleKind kind) {
  return const_cast<ModuleChoice&>(std::as_const(*this).module(kind));
}

// ---------------------------------------------------------------------------
// Presets

namespace {

BranchSpace halving(DimensionRange channel, int max_exp, int divisor) {
  return BranchSpace{channel, max_exp, std::nullopt, divisor};
}

// Stages 1-4 shared by every module; `div0` is the divisor of branch 1.
std::vector<StageSpace> hr_stages(int div0, const std::vector<DimensionRange>& depth,
                                  DimensionRange bottleneck_c, int bottleneck_exp,
                                  const std::vector<std::pair<DimensionRange, int>>& branch_c) {
  std::vector<StageSpace> stages;
  stages.push_back({1, OperatorKind::Bottleneck, depth[0], {halving(bottleneck_c, bottleneck_exp, div0)}});
  for (int s = 2; s <= 4; ++s) {
    StageSpace st{s, OperatorKind::BasicBlock, depth[static_cast<std::size_t>(s - 1)], {}};
    for (int b = 0; b < s; ++b) {
      const auto& [range, exp] = branch_c[static_cast<std::size_t>(b)];
      st.branches.push_back(halving(range, exp, div0 << b));
    }
    stages.push_back(std::move(st));
  }
  return stages;
}

SearchSpace default_space() {
  SearchSpace sp;
  sp.name = "default";
  const std::vector<DimensionRange> depth{{2, 4, 1}, {4, 4, 4}, {8, 16, 4}, {8, 12, 4}};
  const std::vector<std::pair<DimensionRange, int>> branch_c{
      {{8, 32, 8}, 5}, {{16, 64, 16}, 6}, {{32, 128, 32}, 7}, {{64, 256, 64}, 8}};

  sp.bodynet.kind = ModuleKind::BodyNet;
  sp.bodynet.resolution = {256, 384, 32};
  sp.bodynet.aspect_w = 3;
  sp.bodynet.aspect_h = 4;
  sp.bodynet.stages.push_back(
      {0, OperatorKind::PlainConv, {2, 2, 1}, {BranchSpace{{16, 64, 16}, 0, DimensionRange{1, 1, 1}, 4}}});
  for (auto& st : hr_stages(4, depth, {16, 64, 16}, 6, branch_c)) sp.bodynet.stages.push_back(st);

  ModuleSpace head;
  head.resolution = {32, 96, 16};
  head.aspect_w = 1;
  head.aspect_h = 1;
  head.stages = hr_stages(1, depth, {16, 64, 16}, 6, branch_c);
  head.connection = ConnectionSpace{};
  sp.facehead = head;
  sp.facehead.kind = ModuleKind::FaceHead;
  sp.handhead = head;
  sp.handhead.kind = ModuleKind::HandHead;
  return sp;
}

SearchSpace toy_space() {
  SearchSpace sp;
  sp.name = "toy";
  const std::vector<DimensionRange> depth{{1, 2, 1}, {1, 1, 1}, {1, 2, 1}, {1, 2, 1}};
  const std::vector<std::pair<DimensionRange, int>> branch_c{
      {{4, 8, 4}, 2}, {{8, 16, 8}, 3}, {{8, 16, 8}, 3}, {{8, 16, 8}, 3}};

  sp.bodynet.kind = ModuleKind::BodyNet;
  sp.bodynet.resolution = {32, 48, 16};
  sp.bodynet.aspect_w = 3;
  sp.bodynet.aspect_h = 4;
  sp.bodynet.stages.push_back(
      {0, OperatorKind::PlainConv, {2, 2, 1}, {BranchSpace{{8, 16, 8}, 0, DimensionRange{1, 1, 1}, 4}}});
  for (auto& st : hr_stages(4, depth, {2, 4, 2}, 1, branch_c)) sp.bodynet.stages.push_back(st);

  ModuleSpace head;
  head.resolution = {8, 16, 8};
  head.aspect_w = 1;
  head.aspect_h = 1;
  head.stages = hr_stages(1, depth, {2, 4, 2}, 1, branch_c);
  head.connection = ConnectionSpace{};
  sp.facehead = head;
  sp.facehead.kind = ModuleKind::FaceHead;
  sp.handhead = head;
  sp.handhead.kind = ModuleKind::HandHead;
  return sp;
}

}  // namespace

SearchSpace builtin_space(std::string_view preset) {
  if (preset == "default") return default_space();
  if (preset == "toy") return toy_space();
  throw std::invalid_argument("unknown search-space preset '" + std::string(preset) + "'");
}

std::vector<std::string> builtin_space_names() { return {"default", "toy"}; }

std::vector<std::string> check_space(const SearchSpace& space) {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& where, const std::string& what) {
    problems.push_back(where + ": " + what);
  };
  for (ModuleKind mk : kAllModules) {
    const ModuleSpace& m = space.module(mk);
    const std::string mname(to_string(mk));
    if (m.kind != mk) bad(mname, "module kind mismatch");
    if (!m.resolution.well_formed() || m.resolution.start < 1)
      bad(mname + ".resolution", "malformed range " + m.resolution.to_string());
    if (m.aspect_w < 1 || m.aspect_h < 1) bad(mname, "aspect must be positive");
    for (int h : m.resolution.values())
      if (h * m.aspect_w % m.aspect_h != 0)
        bad(mname + ".resolution", "height " + std::to_string(h) + " gives a fractional width");
    if (m.stages.empty()) bad(mname, "no stages");
    for (std::size_t si = 0; si < m.stages.size(); ++si) {
      const StageSpace& st = m.stages[si];
      const std::string sname = mname + ".stage" + std::to_string(st.stage_index);
      if (si > 0 && st.stage_index != m.stages[si - 1].stage_index + 1)
        bad(sname, "stage indices must be consecutive");
      const std::size_t expect = st.stage_index == 0 ? 1u : static_cast<std::size_t>(st.stage_index);
      if (st.branches.size() != expect)
        bad(sname, "expected " + std::to_string(expect) + " branches, found " +
                       std::to_string(st.branches.size()));
      if (!st.depth.well_formed() || st.depth.start < 1)
        bad(sname + ".depth", "malformed range " + st.depth.to_string());
      for (std::size_t b = 0; b < st.branches.size(); ++b) {
        const BranchSpace& br = st.branches[b];
        const std::string bname = sname + ".branch" + std::to_string(b + 1);
        if (!br.channel.well_formed() || br.channel.start < 1)
          bad(bname + ".channel", "malformed range " + br.channel.to_string());
        if (br.group_exponent_max < 0) bad(bname, "negative group exponent");
        if (br.fixed_groups && (!br.fixed_groups->well_formed() || br.fixed_groups->start < 1))
          bad(bname + ".group", "malformed range " + br.fixed_groups->to_string());
        if (br.resolution_divisor < 1 || (br.resolution_divisor & (br.resolution_divisor - 1)) != 0)
          bad(bname, "resolution divisor must be a power of two");
        for (int c : br.channel.values())
          if (group_choices(br, c).empty())
            bad(bname, "channel " + std::to_string(c) + " has no legal group count");
      }
    }
    if (mk == ModuleKind::BodyNet) {
      if (m.connection) bad(mname, "bodynet has no connection dimensions");
      if (m.stages.empty() || m.stages.front().stage_index != 0) bad(mname, "bodynet must start at stage 0");
    } else {
      if (!m.connection) {
        bad(mname, "heads require connection dimensions");
      } else {
        const int last_body_stage = space.bodynet.stages.empty() ? -1 : space.bodynet.stages.back().stage_index;
        if (m.connection->feature_stages.empty()) bad(mname + ".feature_stage", "empty choice set");
        for (int fs : m.connection->feature_stages)
          if (fs < 0 || fs > last_body_stage)
            bad(mname + ".feature_stage", "stage " + std::to_string(fs) + " not in bodynet");
        const auto& roi = m.connection->roi_expansion_tenths;
        if (!roi.well_formed() || roi.start < 10)
          bad(mname + ".roi_expansion", "expansion must be >= 1.0");
      }
      if (m.stages.empty() || m.stages.front().stage_index != 1) bad(mname, "heads start at stage 1");
    }
  }
  return problems;
}

std::vector<int> group_choices(int channel, int max_exponent) {
  std::vector<int> out;
  if (channel < 1) return out;
  for (int i = 0; i <= max_exponent && i < 31; ++i) {
    const int denom = 1 << i;
    if (channel % denom != 0) break;
    out.push_back(channel / denom);
  }
  return out;
}

std::vector<int> group_choices(const BranchSpace& branch, int channel) {
  if (branch.fixed_groups) {
    std::vector<int> out;
    for (int g : branch.fixed_groups->values())
      if (g >= 1 && channel % g == 0) out.push_back(g);
    std::sort(out.rbegin(), out.rend());
    return out;
  }
  return group_choices(channel, branch.group_exponent_max);
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate(const SubNetworkSpec& spec, const SearchSpace& space) {
  std::vector<Violation> out;
  auto add = [&](std::string path, std::string msg) { out.push_back({std::move(path), std::move(msg)}); };
  auto grid = [](int v, const DimensionRange& r) {
    return std::to_string(v) + " not on " + r.to_string() + " grid";
  };

  for (ModuleKind mk : kAllModules) {
    const ModuleSpace& ms = space.module(mk);
    const ModuleChoice& mc = spec.module(mk);
    const std::string mname(to_string(mk));
    if (!ms.resolution.contains(mc.height)) add(mname + ".height", grid(mc.height, ms.resolution));
    if (mc.stages.size() != ms.stages.size()) {
      add(mname + ".stages", "expected " + std::to_string(ms.stages.size()) + " stages, found " +
                                 std::to_string(mc.stages.size()));
      continue;
    }
    for (std::size_t si = 0; si < ms.stages.size(); ++si) {
      const StageSpace& ss = ms.stages[si];
      const StageChoice& sc = mc.stages[si];
      const std::string sname = mname + ".stage" + std::to_string(ss.stage_index);
      if (!ss.depth.contains(sc.depth)) add(sname + ".depth", grid(sc.depth, ss.depth));
      if (sc.branches.size() != ss.branches.size()) {
        add(sname + ".branches", "expected " + std::to_string(ss.branches.size()) + " branches, found " +
                                     std::to_string(sc.branches.size()));
        continue;
      }
      for (std::size_t b = 0; b < ss.branches.size(); ++b) {
        const BranchSpace& bs = ss.branches[b];
        const BranchChoice& bc = sc.branches[b];
        const std::string bname = sname + ".branch" + std::to_string(b + 1);
        if (!bs.channel.contains(bc.channel)) add(bname + ".channel", grid(bc.channel, bs.channel));
        const auto legal = group_choices(bs, bc.channel);
        if (std::find(legal.begin(), legal.end(), bc.groups) == legal.end()) {
          if (bs.fixed_groups) {
            add(bname + ".group", std::to_string(bc.groups) + " not on " + bs.fixed_groups->to_string() +
                                      " grid or does not divide " + std::to_string(bc.channel));
          } else {
            add(bname + ".group", std::to_string(bc.groups) + " is not " + std::to_string(bc.channel) +
                                      "/2^i for any i in [0, " + std::to_string(bs.group_exponent_max) + "]");
          }
        }
      }
    }
    if (!ms.connection) {
      if (mc.connection) add(mname + ".connection", "module has no connection dimensions");
    } else if (!mc.connection) {
      add(mname + ".connection", "missing feature stage / RoI expansion");
    } else {
      const auto& fs = ms.connection->feature_stages;
      if (std::find(fs.begin(), fs.end(), mc.connection->feature_stage) == fs.end())
        add(mname + ".feature_stage", std::to_string(mc.connection->feature_stage) + " not a feature stage choice");
      if (!ms.connection->roi_expansion_tenths.contains(mc.connection->roi_expansion_tenths))
        add(mname + ".roi_expansion", "expansion " + std::to_string(mc.connection->roi_expansion_tenths) +
                                          "/10 not on [1.0, 1.3; 0.1]-style grid " +
                                          ms.connection->roi_expansion_tenths.to_string() + " (tenths)");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dimensions

std::vector<Dimension> dimensions(const SearchSpace& space) {
  std::vector<Dimension> dims;
  for (ModuleKind mk : kAllModules) {
    const ModuleSpace& ms = space.module(mk);
    const std::string mname(to_string(mk));
    dims.push_back({mname + ".height", mk, DimensionKind::Height});
    for (std::size_t si = 0; si < ms.stages.size(); ++si) {
      const std::string sname = mname + ".stage" + std::to_string(ms.stages[si].stage_index);
      dims.push_back({sname + ".depth", mk, DimensionKind::Depth, static_cast<int>(si)});
      for (std::size_t b = 0; b < ms.stages[si].branches.size(); ++b) {
        const std::string bname = sname + ".branch" + std::to_string(b + 1);
        dims.push_back({bname + ".channel", mk, DimensionKind::Channel, static_cast<int>(si), static_cast<int>(b)});
        dims.push_back({bname + ".group", mk, DimensionKind::Group, static_cast<int>(si), static_cast<int>(b)});
      }
    }
    if (ms.connection) {
      dims.push_back({mname + ".feature_stage", mk, DimensionKind::FeatureStage});
      dims.push_back({mname + ".roi_expansion", mk, DimensionKind::RoiExpansion});
    }
  }
  return dims;
}

std::vector<int> dimension_choices(const SearchSpace& space, const Dimension& dim,
                                   const SubNetworkSpec& partial) {
  const ModuleSpace& ms = space.module(dim.module);
  switch (dim.kind) {
    case DimensionKind::Height: return ms.resolution.values();
    case DimensionKind::Depth: return ms.stages.at(static_cast<std::size_t>(dim.stage)).depth.values();
    case DimensionKind::Channel:
      return ms.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch)).channel.values();
    case DimensionKind::Group: {
      const BranchSpace& bs =
          ms.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch));
      return group_choices(bs, get_dimension(partial, Dimension{"", dim.module, DimensionKind::Channel, dim.stage, dim.branch}));
    }
    case DimensionKind::FeatureStage: return ms.connection.value().feature_stages;
    case DimensionKind::RoiExpansion: return ms.connection.value().roi_expansion_tenths.values();
  }
  return {};
}

int get_dimension(const SubNetworkSpec& spec, const Dimension& dim) {
  const ModuleChoice& mc = spec.module(dim.module);
  switch (dim.kind) {
    case DimensionKind::Height: return mc.height;
    case DimensionKind::Depth: return mc.stages.at(static_cast<std::size_t>(dim.stage)).depth;
    case DimensionKind::Channel:
      return mc.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch)).channel;
    case DimensionKind::Group:
      return mc.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch)).groups;
    case DimensionKind::FeatureStage: return mc.connection.value().feature_stage;
    case DimensionKind::RoiExpansion: return mc.connection.value().roi_expansion_tenths;
  }
  return 0;
}

void set_dimension(SubNetworkSpec& spec, const Dimension& dim, int value) {
  ModuleChoice& mc = spec.module(dim.module);
  switch (dim.kind) {
    case DimensionKind::Height: mc.height = value; return;
    case DimensionKind::Depth: mc.stages.at(static_cast<std::size_t>(dim.stage)).depth = value; return;
    case DimensionKind::Channel:
      mc.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch)).channel = value;
      return;
    case DimensionKind::Group:
      mc.stages.at(static_cast<std::size_t>(dim.stage)).branches.at(static_cast<std::size_t>(dim.branch)).groups = value;
      return;
    case DimensionKind::FeatureStage: mc.connection.value().feature_stage = value; return;
    case DimensionKind::RoiExpansion: mc.connection.value().roi_expansion_tenths = value; return;
  }
}

SubNetworkSpec make_empty_spec(const SearchSpace& space) {
  SubNetworkSpec spec;
  for (ModuleKind mk : kAllModules) {
    const ModuleSpace& ms = space.module(mk);
    ModuleChoice& mc = spec.module(mk);
    mc.height = 0;
    mc.stages.clear();
    for (const StageSpace& ss : ms.stages) {
      StageChoice sc;
      sc.branches.resize(ss.branches.size(), BranchChoice{0, 0});
      mc.stages.push_back(std::move(sc));
    }
    if (ms.connection) mc.connection = Connection{0, 0};
  }
  return spec;
}

SubNetworkSpec sample_random(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  SubNetworkSpec spec = make_empty_spec(space);
  for (const Dimension& d : dimensions(space)) {
    const auto choices = dimension_choices(space, d, spec);
    if (choices.empty()) throw std::invalid_argument("dimension " + d.name + " has no legal value");
    set_dimension(spec, d, choices[rng.uniform_index(choices.size())]);
  }
  return spec;
}

SubNetworkSpec sample_extreme(const SearchSpace& space, Extreme which) {
  const bool big = which == Extreme::Biggest;
  SubNetworkSpec spec = make_empty_spec(space);
  for (const Dimension& d : dimensions(space)) {
    auto choices = dimension_choices(space, d, spec);
    if (choices.empty()) throw std::invalid_argument("dimension " + d.name + " has no legal value");
    int v = 0;
    switch (d.kind) {
      case DimensionKind::Group:
        // Fewer groups means more weights: the biggest network uses the fewest groups.
        v = big ? *std::min_element(choices.begin(), choices.end())
                : *std::max_element(choices.begin(), choices.end());
        break;
      case DimensionKind::FeatureStage: {
        v = std::find(choices.begin(), choices.end(), 0) != choices.end() ? 0 : choices.front();
        break;
      }
      case DimensionKind::RoiExpansion: {
        v = std::find(choices.begin(), choices.end(), 10) != choices.end() ? 10 : choices.front();
        break;
      }
      default:
        v = big ? *std::max_element(choices.begin(), choices.end())
                : *std::min_element(choices.begin(), choices.end());
    }
    set_dimension(spec, d, v);
  }
  return spec;
}

std::uint64_t enumerate_count(const SearchSpace& space, std::span<const std::string> dims) {
  const std::vector<Dimension> all = dimensions(space);
  std::map<std::string, const Dimension*> by_name;
  for (const Dimension& d : all) by_name[d.name] = &d;

  // Branch key -> whether group is requested (channel alone otherwise).
  std::map<std::tuple<int, int, int>, bool> branches;
  std::vector<const Dimension*> plain;
  for (const std::string& name : dims) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("unknown dimension '" + name + "'");
    const Dimension& d = *it->second;
    if (d.kind == DimensionKind::Channel || d.kind == DimensionKind::Group) {
      auto key = std::make_tuple(static_cast<int>(d.module), d.stage, d.branch);
      branches[key] = branches[key] || d.kind == DimensionKind::Group;
    } else if (std::find(plain.begin(), plain.end(), &d) == plain.end()) {
      plain.push_back(&d);
    }
  }

  std::uint64_t total = 1;
  auto mul = [&](std::uint64_t n) {
    if (__builtin_mul_overflow(total, n, &total)) throw CountOverflow("search-space count exceeds 64 bits");
  };
  const SubNetworkSpec empty = make_empty_spec(space);
  for (const Dimension* d : plain) mul(dimension_choices(space, *d, empty).size());
  for (const auto& [key, with_groups] : branches) {
    const auto [m, s, b] = key;
    const BranchSpace& bs =
        space.module(static_cast<ModuleKind>(m)).stages.at(static_cast<std::size_t>(s)).branches.at(static_cast<std::size_t>(b));
    std::uint64_t n = 0;
    for (int c : bs.channel.values()) n += with_groups ? group_choices(bs, c).size() : 1u;
    mul(n);
  }
  return total;
}

std::uint64_t total_count(const SearchSpace& space) {
  std::vector<std::string> names;
  for (const Dimension& d : dimensions(space)) names.push_back(d.name);
  return enumerate_count(space, names);
}

}  // namespace wbnas
