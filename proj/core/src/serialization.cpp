// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/serialization.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace wbnas {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::invalid_argument(where + ": " + what);
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(where, std::string("missing field '") + key + "'");
  return *it;
}

int as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<int>();
}

json range_json(const DimensionRange& r) { return json::array({r.start, r.end, r.stride}); }

DimensionRange range_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) fail(where, "expected [start, end, stride]");
  DimensionRange r{as_int(j[0], where), as_int(j[1], where), as_int(j[2], where)};
  if (!r.well_formed()) fail(where, "malformed range " + r.to_string());
  return r;
}

int tenths(double v, const std::string& where) {
  const double t = std::round(v * 10.0);
  if (std::abs(v * 10.0 - t) > 1e-9) fail(where, "expansion must be a multiple of 0.1");
  return static_cast<int>(t);
}

json module_space_json(const ModuleSpace& m) {
  json j;
  j["resolution"] = range_json(m.resolution);
  j["aspect"] = json::array({m.aspect_w, m.aspect_h});
  json stages = json::array();
  for (const StageSpace& s : m.stages) {
    json st;
    st["stage"] = s.stage_index;
    st["operator"] = std::string(to_string(s.op));
    st["depth"] = range_json(s.depth);
    json branches = json::array();
    for (const BranchSpace& b : s.branches) {
      json bj;
      bj["channel"] = range_json(b.channel);
      if (b.fixed_groups)
        bj["groups"] = range_json(*b.fixed_groups);
      else
        bj["group_exponent"] = b.group_exponent_max;
      bj["divisor"] = b.resolution_divisor;
      branches.push_back(bj);
    }
    st["branches"] = branches;
    stages.push_back(st);
  }
  j["stages"] = stages;
  if (m.connection) {
    const auto& r = m.connection->roi_expansion_tenths;
    j["connection"] = {{"feature_stages", m.connection->feature_stages},
                       {"roi_expansion", json::array({r.start / 10.0, r.end / 10.0, r.stride / 10.0})}};
  }
  return j;
}

ModuleSpace module_space_from(const json& j, ModuleKind kind) {
  const std::string where(to_string(kind));
  ModuleSpace m;
  m.kind = kind;
  m.resolution = range_from(field(j, "resolution", where), where + ".resolution");
  const json& aspect = field(j, "aspect", where);
  if (!aspect.is_array() || aspect.size() != 2) fail(where + ".aspect", "expected [w, h]");
  m.aspect_w = as_int(aspect[0], where + ".aspect");
  m.aspect_h = as_int(aspect[1], where + ".aspect");
  const json& stages = field(j, "stages", where);
  if (!stages.is_array()) fail(where + ".stages", "expected an array");
  for (const json& sj : stages) {
    StageSpace s;
    s.stage_index = as_int(field(sj, "stage", where), where + ".stage");
    const std::string sw = where + ".stage" + std::to_string(s.stage_index);
    const json& op = field(sj, "operator", sw);
    if (!op.is_string()) fail(sw + ".operator", "expected a string");
    try {
      s.op = parse_operator_kind(op.get<std::string>());
    } catch (const std::invalid_argument& e) {
      fail(sw + ".operator", e.what());
    }
    s.depth = range_from(field(sj, "depth", sw), sw + ".depth");
    const json& branches = field(sj, "branches", sw);
    if (!branches.is_array()) fail(sw + ".branches", "expected an array");
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const std::string bw = sw + ".branch" + std::to_string(b + 1);
      const json& bj = branches[b];
      BranchSpace br;
      br.channel = range_from(field(bj, "channel", bw), bw + ".channel");
      if (bj.contains("groups"))
        br.fixed_groups = range_from(bj["groups"], bw + ".groups");
      else
        br.group_exponent_max = as_int(field(bj, "group_exponent", bw), bw + ".group_exponent");
      br.resolution_divisor = as_int(field(bj, "divisor", bw), bw + ".divisor");
      s.branches.push_back(br);
    }
    m.stages.push_back(std::move(s));
  }
  if (j.contains("connection")) {
    const json& c = j["connection"];
    ConnectionSpace cs;
    const json& fs = field(c, "feature_stages", where + ".connection");
    if (!fs.is_array()) fail(where + ".connection.feature_stages", "expected an array");
    cs.feature_stages.clear();
    for (const json& v : fs) cs.feature_stages.push_back(as_int(v, where + ".connection.feature_stages"));
    const json& r = field(c, "roi_expansion", where + ".connection");
    if (!r.is_array() || r.size() != 3 || !r[0].is_number() || !r[1].is_number() || !r[2].is_number())
      fail(where + ".connection.roi_expansion", "expected [start, end, stride]");
    const std::string rw = where + ".connection.roi_expansion";
    cs.roi_expansion_tenths = {tenths(r[0].get<double>(), rw), tenths(r[1].get<double>(), rw),
                               tenths(r[2].get<double>(), rw)};
    m.connection = cs;
  }
  return m;
}

json module_choice_json(const ModuleChoice& m) {
  json j;
  j["height"] = m.height;
  json stages = json::array();
  for (const StageChoice& s : m.stages) {
    json branches = json::array();
    for (const BranchChoice& b : s.branches) branches.push_back({{"channel", b.channel}, {"groups", b.groups}});
    stages.push_back({{"depth", s.depth}, {"branches", branches}});
  }
  j["stages"] = stages;
  if (m.connection)
    j["connection"] = {{"feature_stage", m.connection->feature_stage},
                       {"roi_expansion", m.connection->roi_expansion_tenths / 10.0}};
  return j;
}

ModuleChoice module_choice_from(const json& j, const std::string& where) {
  ModuleChoice m;
  m.height = as_int(field(j, "height", where), where + ".height");
  const json& stages = field(j, "stages", where);
  if (!stages.is_array()) fail(where + ".stages", "expected an array");
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const std::string sw = where + ".stages[" + std::to_string(si) + "]";
    StageChoice s;
    s.depth = as_int(field(stages[si], "depth", sw), sw + ".depth");
    const json& branches = field(stages[si], "branches", sw);
    if (!branches.is_array()) fail(sw + ".branches", "expected an array");
    for (const json& b : branches)
      s.branches.push_back({as_int(field(b, "channel", sw), sw + ".channel"), as_int(field(b, "groups", sw), sw + ".groups")});
    m.stages.push_back(std::move(s));
  }
  if (j.contains("connection")) {
    const json& c = j["connection"];
    const json& e = field(c, "roi_expansion", where + ".connection");
    if (!e.is_number()) fail(where + ".connection.roi_expansion", "expected a number");
    m.connection = Connection{as_int(field(c, "feature_stage", where + ".connection"), where + ".connection.feature_stage"),
                              tenths(e.get<double>(), where + ".connection.roi_expansion")};
  }
  return m;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string space_to_json(const SearchSpace& space, int indent) {
  json j;
  j["name"] = space.name;
  for (ModuleKind mk : kAllModules) j[std::string(to_string(mk))] = module_space_json(space.module(mk));
  return j.dump(indent);
}

SearchSpace space_from_json(std::string_view text) {
  const json j = parse_json(text, "space");
  SearchSpace sp;
  const json& name = field(j, "name", "space");
  if (!name.is_string()) fail("space.name", "expected a string");
  sp.name = name.get<std::string>();
  for (ModuleKind mk : kAllModules) {
    const std::string key(to_string(mk));
    sp.module(mk) = module_space_from(field(j, key.c_str(), "space"), mk);
  }
  if (auto problems = check_space(sp); !problems.empty()) fail("space", problems.front());
  return sp;
}

SearchSpace load_space(const std::string& preset_or_path) {
  for (const std::string& n : builtin_space_names())
    if (n == preset_or_path) return builtin_space(n);
  if (preset_or_path.ends_with(".json")) return space_from_json(read_text_file(preset_or_path));
  return builtin_space(preset_or_path);
}

std::string spec_to_json(const SubNetworkSpec& spec, int indent) {
  json j;
  for (ModuleKind mk : kAllModules) j[std::string(to_string(mk))] = module_choice_json(spec.module(mk));
  return j.dump(indent);
}

SubNetworkSpec spec_from_json(std::string_view text) {
  const json j = parse_json(text, "spec");
  SubNetworkSpec spec;
  for (ModuleKind mk : kAllModules) {
    const std::string key(to_string(mk));
    spec.module(mk) = module_choice_from(field(j, key.c_str(), "spec"), key);
  }
  return spec;
}

std::vector<std::string> builtin_spec_names() { return {"hrnet-w32-reference", "biggest", "smallest"}; }

SubNetworkSpec hrnet_w32_reference(const SearchSpace& space) {
  SubNetworkSpec spec = sample_extreme(space, Extreme::Biggest);
  for (ModuleKind mk : {ModuleKind::FaceHead, ModuleKind::HandHead}) {
    const auto& r = space.module(mk).resolution;
    spec.module(mk).height = r.contains(64) ? 64 : r.end;
  }
  return spec;
}

SubNetworkSpec load_spec(const std::string& preset_or_path, const SearchSpace& space) {
  if (preset_or_path == "hrnet-w32-reference") return hrnet_w32_reference(space);
  if (preset_or_path == "biggest") return sample_extreme(space, Extreme::Biggest);
  if (preset_or_path == "smallest") return sample_extreme(space, Extreme::Smallest);
  return spec_from_json(read_text_file(preset_or_path));
}

std::string cost_to_json(const CostReport& r) {
  json j = {{"bodynet_macs", r.bodynet.macs},   {"facehead_macs", r.facehead.macs},
            {"handhead_macs", r.handhead.macs}, {"hand_multiplicity", r.hand_multiplicity},
            {"total_macs", r.total_macs()},     {"bodynet_params", r.bodynet.params},
            {"facehead_params", r.facehead.params}, {"handhead_params", r.handhead.params},
            {"convention", std::string(kCostConvention)}};
  return j.dump();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace wbnas
