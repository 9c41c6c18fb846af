// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wbnas {

/// Discrete range written as [start, end; stride].
struct DimensionRange {
  int start = 0;
  int end = 0;
  int stride = 1;

  bool well_formed() const noexcept {
    return stride > 0 && start <= end && (end - start) % stride == 0;
  }
  bool contains(int v) const noexcept {
    return well_formed() && v >= start && v <= end && (v - start) % stride == 0;
  }
  std::size_t size() const noexcept {
    return well_formed() ? static_cast<std::size_t>((end - start) / stride + 1) : 0;
  }
  int at(std::size_t i) const noexcept { return start + static_cast<int>(i) * stride; }
  std::vector<int> values() const;
  std::string to_string() const;

  friend bool operator==(const DimensionRange&, const DimensionRange&) = default;
};

enum class OperatorKind { PlainConv, Bottleneck, BasicBlock };
enum class ModuleKind { BodyNet, FaceHead, HandHead };

inline constexpr ModuleKind kAllModules[] = {ModuleKind::BodyNet, ModuleKind::FaceHead,
                                             ModuleKind::HandHead};

std::string_view to_string(OperatorKind kind);
std::string_view to_string(ModuleKind kind);
OperatorKind parse_operator_kind(std::string_view name);
ModuleKind parse_module_kind(std::string_view name);

struct BranchSpace {
  DimensionRange channel;
  /// Group choices are C / 2^i for i in [0, group_exponent_max].
  int group_exponent_max = 0;
  /// When set, replaces the halving rule with an explicit range (the stem's [1, 1; 1]).
  std::optional<DimensionRange> fixed_groups;
  /// Branch feature size = module input size / divisor.
  int resolution_divisor = 1;

  friend bool operator==(const BranchSpace&, const BranchSpace&) = default;
};

struct StageSpace {
  int stage_index = 0;
  OperatorKind op = OperatorKind::BasicBlock;
  DimensionRange depth;
  std::vector<BranchSpace> branches;

  friend bool operator==(const StageSpace&, const StageSpace&) = default;
};

struct ConnectionSpace {
  std::vector<int> feature_stages{0, 1, 2, 3, 4};
  /// Expansion ratio in tenths: [10, 13; 1] is 1.0 .. 1.3 step 0.1.
  DimensionRange roi_expansion_tenths{10, 13, 1};

  friend bool operator==(const ConnectionSpace&, const ConnectionSpace&) = default;
};

struct ModuleSpace {
  ModuleKind kind = ModuleKind::BodyNet;
  /// Input height; width = height * aspect_w / aspect_h.
  DimensionRange resolution;
  int aspect_w = 1;
  int aspect_h = 1;
  std::vector<StageSpace> stages;
  std::optional<ConnectionSpace> connection;

  int width_for(int height) const noexcept { return height * aspect_w / aspect_h; }

  friend bool operator==(const ModuleSpace&, const ModuleSpace&) = default;
};

struct SearchSpace {
  std::string name;
  ModuleSpace bodynet;
  ModuleSpace facehead;
  ModuleSpace handhead;

  const ModuleSpace& module(ModuleKind kind) const;
  ModuleSpace& module(ModuleKind kind);

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

/// Built-in presets: "default" (full-scale search space) and "toy" (same
/// topology, channels capped at 16 and shallow stages, for the desk-scale supernet).
SearchSpace builtin_space(std::string_view preset);
std::vector<std::string> builtin_space_names();

/// Structural problems with a space definition (ranges, branch counts, aspect).
std::vector<std::string> check_space(const SearchSpace& space);

/// Legal group counts for `channel`, descending: C / 2^i for 0 <= i <= max_exponent
/// whenever that is a positive integer.
std::vector<int> group_choices(int channel, int max_exponent);
std::vector<int> group_choices(const BranchSpace& branch, int channel);

// ---------------------------------------------------------------------------
// Sub-network choice.

struct BranchChoice {
  int channel = 0;
  int groups = 1;
  friend bool operator==(const BranchChoice&, const BranchChoice&) = default;
};

struct StageChoice {
  int depth = 0;
  std::vector<BranchChoice> branches;
  friend bool operator==(const StageChoice&, const StageChoice&) = default;
};

struct Connection {
  int feature_stage = 0;
  int roi_expansion_tenths = 10;
  double roi_expansion() const noexcept { return roi_expansion_tenths / 10.0; }
  friend bool operator==(const Connection&, const Connection&) = default;
};

struct ModuleChoice {
  int height = 0;
  std::vector<StageChoice> stages;
  std::optional<Connection> connection;
  friend bool operator==(const ModuleChoice&, const ModuleChoice&) = default;
};

struct SubNetworkSpec {
  ModuleChoice bodynet;
  ModuleChoice facehead;
  ModuleChoice handhead;

  const ModuleChoice& module(ModuleKind kind) const;
  ModuleChoice& module(ModuleKind kind);

  friend bool operator==(const SubNetworkSpec&, const SubNetworkSpec&) = default;
};

struct Violation {
  std::string path;
  std::string message;
};

/// Empty result iff every field of `spec` lies in its range / choice set.
std::vector<Violation> validate(const SubNetworkSpec& spec, const SearchSpace& space);

SubNetworkSpec sample_random(const SearchSpace& space, std::uint64_t seed);

enum class Extreme { Biggest, Smallest };
SubNetworkSpec sample_extreme(const SearchSpace& space, Extreme which);

// ---------------------------------------------------------------------------
// Dimensions.
//
// Every elastic choice is a named dimension, e.g. "bodynet.height",
// "bodynet.stage3.depth", "facehead.stage2.branch1.channel",
// "facehead.stage2.branch1.group", "handhead.feature_stage",
// "handhead.roi_expansion". Stages are 0-based, branches 1-based.

enum class DimensionKind { Height, Depth, Channel, Group, FeatureStage, RoiExpansion };

struct Dimension {
  std::string name;
  ModuleKind module = ModuleKind::BodyNet;
  DimensionKind kind = DimensionKind::Height;
  int stage = -1;   // position in ModuleSpace::stages
  int branch = -1;  // 0-based index into StageSpace::branches
};

/// All dimensions in canonical order (module, stage, branch; channel before group).
std::vector<Dimension> dimensions(const SearchSpace& space);

/// Values a dimension may take given the choices already made in `partial`
/// (only Group depends on another dimension: its branch's channel).
std::vector<int> dimension_choices(const SearchSpace& space, const Dimension& dim,
                                   const SubNetworkSpec& partial);

int get_dimension(const SubNetworkSpec& spec, const Dimension& dim);
void set_dimension(SubNetworkSpec& spec, const Dimension& dim, int value);

/// Spec with every list sized for `space` and all values zeroed.
SubNetworkSpec make_empty_spec(const SearchSpace& space);

class CountOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// Cardinality of the product space restricted to `dims` (by name). A group
/// dimension is counted jointly with its branch's channel, i.e. it contributes
/// sum over C of |group_choices(C)|. Throws CountOverflow past 2^64 - 1 and
/// std::invalid_argument for unknown names.
std::uint64_t enumerate_count(const SearchSpace& space, std::span<const std::string> dims);

/// Total number of distinct sub-networks.
std::uint64_t total_count(const SearchSpace& space);

/// Visits every sub-network in canonical odometer order (last dimension varies
/// fastest). Stops early when `visit` returns false.
template <typename Visitor>
void for_each_spec(const SearchSpace& space, Visitor&& visit);

}  // namespace wbnas

#include "wbnas/detail/search_space_enum.hpp"
