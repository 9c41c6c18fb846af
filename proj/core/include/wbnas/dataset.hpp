// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wbnas/geometry.hpp"
#include "wbnas/keypoint_layout.hpp"
#include "wbnas/metrics.hpp"

namespace wbnas {

// Annotation container (JSON Lines):
//   line 1: {"format":"wbnas.wholebody/1","images":[{"id","width","height","file_name"}, ...]}
//   then one person per line with "id", "image_id", "bbox" [x,y,w,h], "keypoints"
//   (17 x 3), "foot_kpts" (6 x 3), "face_kpts" (68 x 3), "lefthand_kpts" and
//   "righthand_kpts" (21 x 3), "face_box", "lefthand_box", "righthand_box",
//   "face_valid", "lefthand_valid", "righthand_valid", and optionally "area",
//   "score" (predictions) and "instance_id" (repeated labelings).

inline constexpr std::string_view kWholeBodyFormat = "wbnas.wholebody/1";
inline constexpr std::string_view kCropFormat = "wbnas.crops/1";

struct Keypoint {
  double x = 0;
  double y = 0;
  int v = 0;  // 0 unlabeled, 1 labeled occluded, 2 labeled visible
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct ImageInfo {
  long long id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct WholeBodyAnnotation {
  long long id = 0;
  long long image_id = 0;
  Box bbox;
  std::vector<Keypoint> keypoints;  // 133, in whole-body order
  Box face_box, lefthand_box, righthand_box;
  bool face_valid = false;
  bool lefthand_valid = false;
  bool righthand_valid = false;
  std::optional<double> area;
  std::optional<double> score;
  std::optional<long long> instance_id;
  friend bool operator==(const WholeBodyAnnotation&, const WholeBodyAnnotation&) = default;
};

struct Diagnostic {
  int line = 0;  // 1-based line of the container
  std::string message;
};

struct PartCounts {
  std::size_t faces = 0;
  std::size_t left_hands = 0;
  std::size_t right_hands = 0;
};

struct AnnotationSet {
  std::vector<ImageInfo> images;
  std::vector<WholeBodyAnnotation> annotations;
  std::vector<Diagnostic> diagnostics;
  PartCounts valid_boxes() const;
};

/// Problems with one record (empty when valid).
std::vector<std::string> check_annotation(const WholeBodyAnnotation& ann);

/// Throws std::invalid_argument when the container itself is malformed; bad
/// records are skipped and reported in `diagnostics`.
AnnotationSet parse_annotations(std::string_view text);
AnnotationSet load_annotations(const std::string& path);

std::string serialize_annotations(const std::vector<ImageInfo>& images,
                                  const std::vector<WholeBodyAnnotation>& annotations);

// Statistics.

enum class BoxPart { Body, Face, Hand };  // Hand pools left and right
std::string_view to_string(BoxPart part);
inline constexpr std::array<BoxPart, 3> kBoxParts{BoxPart::Body, BoxPart::Face, BoxPart::Hand};

/// Boxes of `part` counted by the statistics: the person box when its area is
/// positive, part boxes when flagged valid with positive area.
std::vector<Box> part_boxes(const WholeBodyAnnotation& ann, BoxPart part);

struct Histogram1D {
  double bin_width = 1;
  std::vector<std::size_t> counts;  // bin i covers [i w, (i + 1) w)
  std::size_t overflow = 0;         // values >= counts.size() * w
  std::size_t total() const;
};

/// Diagonal sqrt(w^2 + h^2) of every counted box.
Histogram1D box_diagonal_histogram(const std::vector<WholeBodyAnnotation>& anns, BoxPart part, double bin_width,
                                   int bins);

using Skeleton = std::vector<std::pair<int, int>>;

/// Tree edges per part in whole-body indices.
Skeleton default_skeleton(Part part);

struct EdgeDistance {
  double mean = 0;  // NaN when no edge qualifies
  std::size_t edges = 0;
};

/// Mean length over edges whose endpoints both have v > 0.
EdgeDistance mean_edge_distance(const std::vector<WholeBodyAnnotation>& anns, const Skeleton& skeleton);

struct Histogram2D {
  int bins_x = 1;
  int bins_y = 1;
  std::vector<std::size_t> counts;  // row-major [y][x]
  std::size_t outside = 0;          // centers outside [0, 1]^2
  std::size_t at(int by, int bx) const {
    return counts[static_cast<std::size_t>(by) * static_cast<std::size_t>(bins_x) + static_cast<std::size_t>(bx)];
  }
};

/// Box centers divided by image width / height, binned on a bins_x x bins_y
/// grid over [0, 1]^2 (the value 1 falls in the last bin).
Histogram2D center_histogram(const std::vector<WholeBodyAnnotation>& anns, const std::vector<ImageInfo>& images,
                             BoxPart part, int bins_x, int bins_y);

Point2 normalized_center(const Box& box, const ImageInfo& image);

// Subsets.

enum class Subset { Face, Hand };

struct CropRecord {
  long long annotation_id = 0;
  long long image_id = 0;
  std::string part;  // "face", "lefthand", "righthand"
  Box box;           // expanded crop box, image frame
  std::vector<Point2> keypoints;  // relative to (box.x, box.y)
  std::vector<int> visibility;
  friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

/// Face subset: 68 points per valid face. Hand subset: 21 points per valid
/// hand, left and right alike (no mirroring). Boxes are expanded about their
/// centers by `expansion`.
std::vector<CropRecord> extract_subsets(const std::vector<WholeBodyAnnotation>& anns, Subset which, double expansion);

Point2 crop_to_image(const CropRecord& crop, Point2 local);
Point2 image_to_crop(const CropRecord& crop, Point2 global);

std::string serialize_crops(const std::vector<CropRecord>& crops);

// Evaluation glue.

/// Pose with visibility for the metrics module. Area: "area" when present, else bbox w * h.
PoseResult to_pose(const WholeBodyAnnotation& ann);

/// Groups repeated labelings by instance_id (scale sqrt(area)); records without one are ignored.
std::vector<RepeatedInstance> group_repeated(const std::vector<WholeBodyAnnotation>& anns);

struct PartReport {
  Part part = Part::WholeBody;
  MapResult result;
};

/// OKS AP / AR for body, foot, face, hand and whole-body.
std::vector<PartReport> evaluate_wholebody(const AnnotationSet& gt, const AnnotationSet& predictions,
                                           const OksParams& params);

struct LandmarkReport {
  double face_nme = 0;     // inter-ocular normalized, over valid faces
  double hand_pck = 0;     // sigma 0.2 of the hand box
  double hand_auc = 0;     // thresholds 0 .. 30 px
  double hand_epe = 0;
  std::size_t faces = 0;
  std::size_t hands = 0;
};

/// Per-landmark metrics over predictions paired with ground truth by annotation id.
LandmarkReport evaluate_landmarks(const AnnotationSet& gt, const AnnotationSet& predictions);

/// Outer eye corners of the 68-point face in whole-body indices.
inline constexpr int kLeftEyeOuter = 23 + 36;
inline constexpr int kRightEyeOuter = 23 + 45;

}  // namespace wbnas
