// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "wbnas/search_space.hpp"

namespace wbnas {

// Counting convention: one multiply-accumulate is one FLOP unit. Normalization,
// activations, bilinear resizes, RoIAlign and biases are not counted.
inline constexpr std::string_view kCostConvention =
    "mac=flop;convs-only;excludes:norm,activation,resize,roialign,bias";

/// Residual blocks of a stage start a new fusion module every this many blocks
/// (HRNet groups four blocks per multi-resolution module).
inline constexpr int kBlocksPerModule = 4;

/// Bottleneck blocks expand their internal width by this factor on output.
inline constexpr int kBottleneckExpansion = 4;

struct Spatial {
  int h = 0;
  int w = 0;
  friend bool operator==(const Spatial&, const Spatial&) = default;
};

/// Feature size after `divisor` (a power of two) worth of stride-2 steps, each
/// rounding up like a padded 3x3 stride-2 convolution.
Spatial downsample(Spatial input, int divisor);

struct LayerShape {
  int kh = 1;
  int kw = 1;
  int in_channels = 1;
  int out_channels = 1;
  int groups = 1;
  Spatial out;
  int stride = 1;
};

/// Reason the shape is invalid, if any.
std::optional<std::string> check_shape(const LayerShape& shape);

/// kh * kw * (in / groups) * out * H * W. Throws std::invalid_argument on a bad shape.
std::uint64_t conv_cost(const LayerShape& shape);
/// Weight count of the same layer (spatial terms dropped).
std::uint64_t conv_params(const LayerShape& shape);

struct LayerCost {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  LayerCost& operator+=(const LayerCost& o) {
    macs += o.macs;
    params += o.params;
    return *this;
  }
};

/// Cost of `depth` stacked blocks at constant spatial size.
///  - basic-block: two 3x3 convs channels->channels, both grouped.
///  - bottleneck: 1x1 in->channels/4, grouped 3x3 at channels/4, 1x1 back to channels.
///  - plain-conv: one grouped 3x3 conv per layer.
/// The first block takes `in_channels` (default: `channels`) and adds a 1x1
/// projection when that differs from `channels` (plain-conv has no residual).
LayerCost block_cost_detail(OperatorKind kind, int channels, int groups, Spatial spatial, int depth,
                            std::optional<int> in_channels = std::nullopt);
std::uint64_t block_cost(OperatorKind kind, int channels, int groups, Spatial spatial, int depth,
                         std::optional<int> in_channels = std::nullopt);

/// Output channel counts of the three sub-modules.
struct HeadLayout {
  int image_channels = 3;
  int body_outputs = 38;  // 17 body + 6 foot + 3 boxes x 5 box keypoints
  int face_outputs = 68;
  int hand_outputs = 21;
  int hand_multiplicity = 2;
};

/// Channels of the bodynet's highest-resolution feature at the end of `stage`.
int feature_channels(const ModuleSpace& body_space, const ModuleChoice& body, int stage);

/// Grid-free cost of one module. `input` is the module input size; `in_channels`
/// the image channels (bodynet) or cropped feature channels (heads).
LayerCost module_cost(const ModuleSpace& space, const ModuleChoice& choice, Spatial input, int in_channels,
                      int out_channels);

struct CostReport {
  LayerCost bodynet;
  LayerCost facehead;
  LayerCost handhead;
  int hand_multiplicity = 2;

  std::uint64_t total_macs() const {
    return bodynet.macs + facehead.macs + static_cast<std::uint64_t>(hand_multiplicity) * handhead.macs;
  }
  std::uint64_t total_params() const { return bodynet.params + facehead.params + handhead.params; }
  const LayerCost& module(ModuleKind kind) const;

  friend bool operator==(const CostReport& a, const CostReport& b) {
    return a.bodynet.macs == b.bodynet.macs && a.bodynet.params == b.bodynet.params &&
           a.facehead.macs == b.facehead.macs && a.facehead.params == b.facehead.params &&
           a.handhead.macs == b.handhead.macs && a.handhead.params == b.handhead.params &&
           a.hand_multiplicity == b.hand_multiplicity;
  }
};

/// Full sub-network cost. Throws std::invalid_argument if `spec` is not valid in `space`.
CostReport subnetwork_cost(const SearchSpace& space, const SubNetworkSpec& spec, const HeadLayout& layout = {});

/// Input size a spec feeds into each module.
Spatial module_input(const SearchSpace& space, const SubNetworkSpec& spec, ModuleKind kind);

struct AllocationFractions {
  double bodynet = 0;
  double facehead = 0;
  double handhead = 0;  // includes the hand multiplicity
};

/// Share of total MACs per sub-module. Throws std::invalid_argument on a zero total.
AllocationFractions allocation_report(const CostReport& report);

/// One-line record: "cost bodynet_macs=... ... convention=...".
std::string to_text_record(const CostReport& report);
CostReport cost_from_text_record(std::string_view line);

}  // namespace wbnas
