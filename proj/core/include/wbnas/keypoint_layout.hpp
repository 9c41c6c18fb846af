// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string_view>
#include <vector>

namespace wbnas {

// 133-keypoint whole-body layout: body, feet, face, left hand, right hand.
inline constexpr int kBodyKeypoints = 17;
inline constexpr int kFootKeypoints = 6;
inline constexpr int kFaceKeypoints = 68;
inline constexpr int kHandKeypoints = 21;
inline constexpr int kWholeBodyKeypoints = kBodyKeypoints + kFootKeypoints + kFaceKeypoints + 2 * kHandKeypoints;
static_assert(kWholeBodyKeypoints == 133);

enum class Part { Body, Foot, Face, LeftHand, RightHand, Hand, WholeBody };

inline constexpr std::array<Part, 5> kReportParts{Part::Body, Part::Foot, Part::Face, Part::Hand, Part::WholeBody};

struct KeypointRange {
  int begin = 0;
  int count = 0;
};

constexpr KeypointRange part_range(Part part) {
  switch (part) {
    case Part::Body: return {0, kBodyKeypoints};
    case Part::Foot: return {17, kFootKeypoints};
    case Part::Face: return {23, kFaceKeypoints};
    case Part::LeftHand: return {91, kHandKeypoints};
    case Part::RightHand: return {112, kHandKeypoints};
    case Part::Hand: return {91, 2 * kHandKeypoints};
    case Part::WholeBody: return {0, kWholeBodyKeypoints};
  }
  return {};
}

constexpr std::string_view to_string(Part part) {
  switch (part) {
    case Part::Body: return "body";
    case Part::Foot: return "foot";
    case Part::Face: return "face";
    case Part::LeftHand: return "lefthand";
    case Part::RightHand: return "righthand";
    case Part::Hand: return "hand";
    case Part::WholeBody: return "wholebody";
  }
  return "?";
}

/// Joint mask over `num_keypoints` selecting `part` (all joints for WholeBody).
inline std::vector<bool> part_mask(Part part, int num_keypoints = kWholeBodyKeypoints) {
  std::vector<bool> mask(static_cast<std::size_t>(num_keypoints), false);
  const KeypointRange r = part_range(part);
  for (int i = r.begin; i < r.begin + r.count && i < num_keypoints; ++i) mask[static_cast<std::size_t>(i)] = true;
  return mask;
}

/// COCO per-keypoint falloff constants k_i (= 2 x the published body sigmas).
inline constexpr std::array<double, kBodyKeypoints> kCocoBodyK{
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
    0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178};

}  // namespace wbnas
