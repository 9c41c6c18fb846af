// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wbnas/geometry.hpp"

namespace wbnas {

/// One pose (prediction or ground truth). `visibility` uses {0, 1, 2} with 0 =
/// unlabeled. `area` is the person area a ground truth contributes to the
/// OKS scale s = sqrt(area); it is ignored on predictions.
struct PoseResult {
  std::vector<Point2> keypoints;
  std::vector<int> visibility;
  double score = 1.0;
  double area = 0.0;
  /// Ground-truth person box; lets a ground truth without labeled joints absorb detections.
  std::optional<Box> box;
};

struct OksParams {
  std::vector<double> k;             // per-keypoint falloff constants
  std::vector<double> thresholds;    // strictly increasing in (0, 1]
  int recall_points = 101;
  int max_detections = 20;           // per image, highest scores kept

  /// thresholds 0.50:0.05:0.95.
  static std::vector<double> coco_thresholds();
  /// Problems with k / thresholds, empty if usable for `num_keypoints`.
  std::vector<std::string> check(int num_keypoints) const;
};

/// Object keypoint similarity over the joints selected by `mask` (all joints
/// when empty) that are labeled in `gt`. Throws std::domain_error when no joint
/// qualifies and std::invalid_argument on size mismatches or scale <= 0.
double oks(const PoseResult& pred, const PoseResult& gt, std::span<const double> k, double scale,
           const std::vector<bool>& mask = {});

/// Same with s = sqrt(gt.area).
double oks(const PoseResult& pred, const PoseResult& gt, const OksParams& params, const std::vector<bool>& mask = {});

/// Greedy matching for one image. Rows of `oks_table` are detections already
/// in descending score order; each takes the unmatched ground truth with the
/// highest OKS >= threshold (first such column on ties). Returns the matched
/// column per row, or -1.
std::vector<int> greedy_match(const std::vector<std::vector<double>>& oks_table, double threshold);

struct ImageEval {
  long long image_id = 0;
  std::vector<PoseResult> detections;
  std::vector<PoseResult> ground_truths;
};

struct MapResult {
  std::vector<double> thresholds;
  std::vector<double> ap;  // per threshold; NaN when there is no ground truth
  std::vector<double> ar;
  double map = 0;
  double mar = 0;
  int num_ground_truths = 0;
  int num_detections = 0;
};

/// COCO-style keypoint AP / AR. A ground truth with no labeled joint inside
/// `mask` is ignored: it is not counted, and a detection that matches nothing
/// else but lies near its box (when it has one) is dropped rather than scored
/// as a false positive. Images are reduced in the order given.
MapResult map_mar(std::span<const ImageEval> images, const OksParams& params, const std::vector<bool>& mask = {});

/// Mean ||p - g|| / normalizer. Throws on normalizer <= 0 or size mismatch.
double nme(std::span<const Point2> preds, std::span<const Point2> gts, double normalizer,
           const std::vector<bool>& valid = {});

/// Fraction of joints with ||p - g|| / max(w, h) <= sigma.
double pck(std::span<const Point2> preds, std::span<const Point2> gts, double box_w, double box_h,
           double sigma = 0.2, const std::vector<bool>& valid = {});

/// Trapezoidal area under the correct-fraction vs. pixel-threshold curve on
/// [0, max_threshold], normalized to [0, 1]. The default odd interval count
/// keeps the midpoint threshold off the grid.
double auc(std::span<const Point2> preds, std::span<const Point2> gts, double max_threshold = 30.0,
           int intervals = 3001, const std::vector<bool>& valid = {});

/// Mean Euclidean distance in pixels.
double epe(std::span<const Point2> preds, std::span<const Point2> gts, const std::vector<bool>& valid = {});

// Annotator-derived falloff constants.

struct AnnotatorLabel {
  std::vector<Point2> keypoints;
  std::vector<bool> labeled;
};

struct RepeatedInstance {
  double scale = 1.0;
  std::vector<AnnotatorLabel> annotators;
};

struct SigmaResult {
  std::vector<double> sigma;        // NaN for excluded keypoints
  std::vector<int> samples;         // annotator points pooled per keypoint
  std::vector<int> excluded;        // keypoints without any instance labeled >= 2 times
};

/// Per keypoint: sqrt( sum over instances m and annotators a of
/// ||p_am - mean_m||^2 / s_m^2  divided by the number of pooled points ).
/// An instance contributes to a keypoint only when >= 2 annotators labeled it.
SigmaResult sigmas_from_annotators(std::span<const RepeatedInstance> instances, int num_keypoints);

}  // namespace wbnas
