// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/cost_model.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

namespace wbnas {

Spatial downsample(Spatial input, int divisor) {
  Spatial s = input;
  for (int d = divisor; d > 1; d >>= 1) {
    s.h = (s.h + 1) / 2;
    s.w = (s.w + 1) / 2;
  }
  return s;
}

std::optional<std::string> check_shape(const LayerShape& s) {
  if (s.kh < 1 || s.kw < 1) return "kernel must be positive";
  if (s.in_channels < 1 || s.out_channels < 1) return "channel counts must be positive";
  if (s.groups < 1) return "groups must be positive";
  if (s.out.h < 1 || s.out.w < 1) return "output size must be positive";
  if (s.stride < 1) return "stride must be positive";
  if (s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0)
    return "groups " + std::to_string(s.groups) + " must divide " + std::to_string(s.in_channels) + " and " +
           std::to_string(s.out_channels);
  return std::nullopt;
}

std::uint64_t conv_params(const LayerShape& s) {
  if (auto err = check_shape(s)) throw std::invalid_argument("conv: " + *err);
  return static_cast<std::uint64_t>(s.kh) * static_cast<std::uint64_t>(s.kw) *
         static_cast<std::uint64_t>(s.in_channels / s.groups) * static_cast<std::uint64_t>(s.out_channels);
}

std::uint64_t conv_cost(const LayerShape& s) {
  return conv_params(s) * static_cast<std::uint64_t>(s.out.h) * static_cast<std::uint64_t>(s.out.w);
}

namespace {

LayerCost conv(int k, int in, int out, int groups, Spatial sp, int stride = 1) {
  LayerShape shape{k, k, in, out, groups, sp, stride};
  return {conv_cost(shape), conv_params(shape)};
}

}  // namespace

LayerCost block_cost_detail(OperatorKind kind, int channels, int groups, Spatial sp, int depth,
                            std::optional<int> in_channels) {
  if (depth < 1) throw std::invalid_argument("block_cost: depth must be >= 1");
  LayerCost total;
  int in = in_channels.value_or(channels);
  for (int d = 0; d < depth; ++d) {
    switch (kind) {
      case OperatorKind::PlainConv:
        total += conv(3, in, channels, groups, sp);
        break;
      case OperatorKind::BasicBlock:
        total += conv(3, in, channels, groups, sp);
        total += conv(3, channels, channels, groups, sp);
        if (in != channels) total += conv(1, in, channels, 1, sp);
        break;
      case OperatorKind::Bottleneck: {
        if (channels % kBottleneckExpansion != 0)
          throw std::invalid_argument("bottleneck channels must be a multiple of 4");
        const int mid = channels / kBottleneckExpansion;
        total += conv(1, in, mid, 1, sp);
        total += conv(3, mid, mid, groups, sp);
        total += conv(1, mid, channels, 1, sp);
        if (in != channels) total += conv(1, in, channels, 1, sp);
        break;
      }
    }
    in = channels;
  }
  return total;
}

std::uint64_t block_cost(OperatorKind kind, int channels, int groups, Spatial sp, int depth,
                         std::optional<int> in_channels) {
  return block_cost_detail(kind, channels, groups, sp, depth, in_channels).macs;
}

namespace {

// Output channels of a stage branch (bottleneck stages expand by 4).
int branch_out_channels(const StageSpace& ss, const BranchChoice& bc) {
  return ss.op == OperatorKind::Bottleneck ? bc.channel * kBottleneckExpansion : bc.channel;
}

// Multi-resolution exchange: upsample paths are a 1x1 conv at the source
// resolution; downsample paths chain stride-2 3x3 convs, the last one mapping
// to the target channel count.
LayerCost fusion_cost(const std::vector<int>& channels, const std::vector<Spatial>& res) {
  LayerCost total;
  const std::size_t n = channels.size();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      if (i > j) {
        total += conv(1, channels[i], channels[j], 1, res[i]);
      } else {
        for (std::size_t k = i + 1; k <= j; ++k) {
          const int out = k == j ? channels[j] : channels[i];
          total += conv(3, channels[i], out, 1, res[k], 2);
        }
      }
    }
  }
  return total;
}

}  // namespace

int feature_channels(const ModuleSpace& body_space, const ModuleChoice& body, int stage) {
  for (std::size_t si = 0; si < body_space.stages.size(); ++si) {
    if (body_space.stages[si].stage_index == stage)
      return branch_out_channels(body_space.stages[si], body.stages.at(si).branches.at(0));
  }
  throw std::invalid_argument("feature stage " + std::to_string(stage) + " not in bodynet");
}

LayerCost module_cost(const ModuleSpace& space, const ModuleChoice& choice, Spatial input, int in_channels,
                      int out_channels) {
  if (choice.stages.size() != space.stages.size()) throw std::invalid_argument("module_cost: stage count mismatch");
  LayerCost total;
  std::vector<int> prev_channels{in_channels};
  std::vector<Spatial> prev_res{input};

  for (std::size_t si = 0; si < space.stages.size(); ++si) {
    const StageSpace& ss = space.stages[si];
    const StageChoice& sc = choice.stages[si];
    std::vector<Spatial> res;
    for (const BranchSpace& bs : ss.branches) res.push_back(downsample(input, bs.resolution_divisor));

    if (ss.op == OperatorKind::PlainConv) {
      // Stem: the first log2(divisor) convs have stride 2.
      const BranchChoice& bc = sc.branches.at(0);
      int in = prev_channels.front();
      Spatial sp = prev_res.front();
      int strided = 0;
      for (int d = ss.branches.front().resolution_divisor; d > 1; d >>= 1) ++strided;
      for (int l = 0; l < sc.depth; ++l) {
        if (l < strided) sp = downsample(sp, 2);
        total += conv(3, in, bc.channel, bc.groups, sp, l < strided ? 2 : 1);
        in = bc.channel;
      }
      prev_channels = {bc.channel};
      prev_res = {sp};
      continue;
    }

    std::vector<int> channels;
    for (std::size_t b = 0; b < ss.branches.size(); ++b) channels.push_back(branch_out_channels(ss, sc.branches[b]));

    // Transition from the previous stage. A bottleneck stage consumes its input
    // directly (its first block projects); otherwise every carried branch gets a
    // 3x3 conv and each new branch a stride-2 3x3 conv from the lowest-resolution one.
    std::vector<int> block_in(channels.size());
    if (ss.op == OperatorKind::Bottleneck) {
      block_in[0] = prev_channels.front();
    } else {
      for (std::size_t b = 0; b < channels.size(); ++b) {
        if (b < prev_channels.size()) {
          total += conv(3, prev_channels[b], channels[b], 1, res[b]);
        } else {
          total += conv(3, prev_channels.back(), channels[b], 1, res[b], 2);
        }
        block_in[b] = channels[b];
      }
    }

    for (std::size_t b = 0; b < channels.size(); ++b) {
      total += block_cost_detail(ss.op, channels[b], sc.branches[b].groups, res[b], sc.depth, block_in[b]);
    }
    if (channels.size() > 1) {
      const int modules = (sc.depth + kBlocksPerModule - 1) / kBlocksPerModule;
      for (int m = 0; m < modules; ++m) total += fusion_cost(channels, res);
    }
    prev_channels = channels;
    prev_res = res;
  }

  // Output layer: bodynet reads its highest-resolution branch; heads concatenate
  // every branch upsampled to the highest resolution.
  int head_in = 0;
  if (space.kind == ModuleKind::BodyNet) {
    head_in = prev_channels.front();
  } else {
    for (int c : prev_channels) head_in += c;
  }
  total += conv(1, head_in, out_channels, 1, prev_res.front());
  return total;
}

Spatial module_input(const SearchSpace& space, const SubNetworkSpec& spec, ModuleKind kind) {
  const ModuleSpace& ms = space.module(kind);
  const int h = spec.module(kind).height;
  return Spatial{h, ms.width_for(h)};
}

const LayerCost& CostReport::module(ModuleKind kind) const {
  switch (kind) {
    case ModuleKind::BodyNet: return bodynet;
    case ModuleKind::FaceHead: return facehead;
    case ModuleKind::HandHead: return handhead;
  }
  throw std::logic_error("bad module kind");
}

CostReport subnetwork_cost(const SearchSpace& space, const SubNetworkSpec& spec, const HeadLayout& layout) {
  if (auto v = validate(spec, space); !v.empty())
    throw std::invalid_argument("subnetwork_cost: invalid spec: " + v.front().path + ": " + v.front().message);
  CostReport r;
  r.hand_multiplicity = layout.hand_multiplicity;
  r.bodynet = module_cost(space.bodynet, spec.bodynet, module_input(space, spec, ModuleKind::BodyNet),
                          layout.image_channels, layout.body_outputs);
  const int face_in = feature_channels(space.bodynet, spec.bodynet, spec.facehead.connection->feature_stage);
  const int hand_in = feature_channels(space.bodynet, spec.bodynet, spec.handhead.connection->feature_stage);
  r.facehead = module_cost(space.facehead, spec.facehead, module_input(space, spec, ModuleKind::FaceHead), face_in,
                           layout.face_outputs);
  r.handhead = module_cost(space.handhead, spec.handhead, module_input(space, spec, ModuleKind::HandHead), hand_in,
                           layout.hand_outputs);
  return r;
}

AllocationFractions allocation_report(const CostReport& report) {
  const auto total = static_cast<double>(report.total_macs());
  if (report.total_macs() == 0) throw std::invalid_argument("allocation_report: total cost is zero");
  AllocationFractions f;
  f.bodynet = static_cast<double>(report.bodynet.macs) / total;
  f.facehead = static_cast<double>(report.facehead.macs) / total;
  f.handhead = static_cast<double>(report.hand_multiplicity) * static_cast<double>(report.handhead.macs) / total;
  return f;
}

std::string to_text_record(const CostReport& r) {
  std::ostringstream os;
  os << "cost bodynet_macs=" << r.bodynet.macs << " facehead_macs=" << r.facehead.macs
     << " handhead_macs=" << r.handhead.macs << " hand_multiplicity=" << r.hand_multiplicity
     << " total_macs=" << r.total_macs() << " bodynet_params=" << r.bodynet.params
     << " facehead_params=" << r.facehead.params << " handhead_params=" << r.handhead.params
     << " convention=" << kCostConvention;
  return os.str();
}

CostReport cost_from_text_record(std::string_view line) {
  std::istringstream is{std::string(line)};
  std::string tag;
  is >> tag;
  if (tag != "cost") throw std::invalid_argument("cost record must start with 'cost'");
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed cost field '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto u64 = [&](const char* key) -> std::uint64_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("cost record missing ") + key);
    return std::stoull(it->second);
  };
  CostReport r;
  r.bodynet = {u64("bodynet_macs"), u64("bodynet_params")};
  r.facehead = {u64("facehead_macs"), u64("facehead_params")};
  r.handhead = {u64("handhead_macs"), u64("handhead_params")};
  r.hand_multiplicity = static_cast<int>(u64("hand_multiplicity"));
  if (kv.count("total_macs") && u64("total_macs") != r.total_macs())
    throw std::invalid_argument("cost record total does not match its parts");
  return r;
}

}  // namespace wbnas
