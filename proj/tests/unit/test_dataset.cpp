// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "test_support.hpp"
#include "wbnas/dataset.hpp"
#include "wbnas/rng.hpp"
#include "wbnas/serialization.hpp"

namespace wbnas {
namespace {

using nlohmann::json;

std::string fixture(const std::string& name) { return read_text_file(test::data_path("fixtures/" + name)); }

// Raw records of a container, read straight from the JSON.
std::vector<json> raw_records(const std::string& text) {
  std::vector<json> out;
  std::size_t pos = text.find('\n') + 1;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    out.push_back(json::parse(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

TEST(Dataset, FixtureRoundTripIsBitExact) {
  for (const char* name : {"wholebody_small.jsonl", "predictions_small.jsonl", "repeated_annotations.jsonl"}) {
    const std::string text = fixture(name);
    const AnnotationSet set = parse_annotations(text);
    EXPECT_TRUE(set.diagnostics.empty()) << name;
    EXPECT_EQ(serialize_annotations(set.images, set.annotations), text) << name;
    const AnnotationSet again = parse_annotations(serialize_annotations(set.images, set.annotations));
    EXPECT_EQ(again.annotations, set.annotations);
    EXPECT_EQ(again.images, set.images);
  }
}

TEST(Dataset, ParsedValuesMatchRawJson) {
  const std::string text = fixture("wholebody_small.jsonl");
  const AnnotationSet set = parse_annotations(text);
  const auto raw = raw_records(text);
  ASSERT_EQ(set.annotations.size(), raw.size());
  EXPECT_EQ(set.annotations.size(), 40u);
  EXPECT_EQ(set.images.size(), 8u);
  const std::pair<const char*, int> parts[] = {
      {"keypoints", 0}, {"foot_kpts", 17}, {"face_kpts", 23}, {"lefthand_kpts", 91}, {"righthand_kpts", 112}};
  for (std::size_t n = 0; n < raw.size(); ++n) {
    const auto& a = set.annotations[n];
    const json& r = raw[n];
    EXPECT_EQ(a.id, r["id"].get<long long>());
    ASSERT_EQ(a.keypoints.size(), 133u);
    for (const auto& [field, begin] : parts) {
      const auto& arr = r[field];
      for (std::size_t i = 0; i < arr.size() / 3; ++i) {
        const Keypoint& k = a.keypoints[static_cast<std::size_t>(begin) + i];
        EXPECT_EQ(k.x, arr[3 * i].get<double>());
        EXPECT_EQ(k.y, arr[3 * i + 1].get<double>());
        EXPECT_EQ(k.v, arr[3 * i + 2].get<int>());
      }
    }
    EXPECT_EQ(a.face_valid, r["face_valid"].get<bool>());
    EXPECT_EQ(a.bbox.w, r["bbox"][2].get<double>());
    EXPECT_EQ(*a.area, r["area"].get<double>());
    EXPECT_FALSE(a.score);
  }
}

TEST(Dataset, DiagnosticsReportEachBrokenRecord) {
  const AnnotationSet set = parse_annotations(fixture("wholebody_diagnostics.jsonl"));
  EXPECT_EQ(set.annotations.size(), 3u);
  ASSERT_EQ(set.diagnostics.size(), 4u);
  EXPECT_EQ(set.diagnostics[0].line, 5);
  EXPECT_NE(set.diagnostics[0].message.find("133 (got 132)"), std::string::npos) << set.diagnostics[0].message;
  EXPECT_EQ(set.diagnostics[1].line, 6);
  EXPECT_NE(set.diagnostics[1].message.find("face_box is flagged valid but has zero area"), std::string::npos);
  EXPECT_EQ(set.diagnostics[2].line, 7);
  EXPECT_NE(set.diagnostics[2].message.find("not valid JSON"), std::string::npos);
  EXPECT_EQ(set.diagnostics[3].line, 8);
  EXPECT_NE(set.diagnostics[3].message.find("visibility 3"), std::string::npos);
}

TEST(Dataset, KeypointCountEnforced) {
  const AnnotationSet set = parse_annotations(fixture("wholebody_small.jsonl"));
  WholeBodyAnnotation a = set.annotations[0];
  EXPECT_TRUE(check_annotation(a).empty());
  a.keypoints.push_back({});
  ASSERT_FALSE(check_annotation(a).empty());
  EXPECT_NE(check_annotation(a)[0].find("133"), std::string::npos);
  a.keypoints.resize(17);
  EXPECT_FALSE(check_annotation(a).empty());
  EXPECT_THROW(serialize_annotations(set.images, {a}), std::out_of_range);

  // A part list one triplet too long with another one short still totals 133.
  const std::string text = fixture("wholebody_small.jsonl");
  const auto header = text.substr(0, text.find('\n') + 1);
  json r = raw_records(text)[0];
  for (int i = 0; i < 3; ++i) r["keypoints"].push_back(0);
  for (int i = 0; i < 3; ++i) r["foot_kpts"].erase(r["foot_kpts"].size() - 1);
  const AnnotationSet shifted = parse_annotations(header + r.dump() + "\n");
  ASSERT_EQ(shifted.diagnostics.size(), 1u);
  EXPECT_NE(shifted.diagnostics[0].message.find("keypoints must hold 17"), std::string::npos);
}

TEST(Dataset, ContainerErrors) {
  EXPECT_THROW(parse_annotations(""), std::invalid_argument);
  EXPECT_THROW(parse_annotations("not json\n"), std::invalid_argument);
  EXPECT_THROW(parse_annotations(R"({"format":"other","images":[]})"), std::invalid_argument);
  EXPECT_THROW(parse_annotations(R"({"format":"wbnas.wholebody/1"})"), std::invalid_argument);
  EXPECT_THROW(parse_annotations(R"({"format":"wbnas.wholebody/1","images":[{"id":1,"width":0,"height":5}]})"),
               std::invalid_argument);
  EXPECT_THROW(
      parse_annotations(
          R"({"format":"wbnas.wholebody/1","images":[{"id":1,"width":4,"height":5},{"id":1,"width":4,"height":5}]})"),
      std::invalid_argument);
  const auto empty = parse_annotations("\n" R"({"format":"wbnas.wholebody/1","images":[]})" "\r\n\n");
  EXPECT_TRUE(empty.annotations.empty());
  EXPECT_TRUE(empty.diagnostics.empty());

  const std::string text = fixture("wholebody_small.jsonl");
  const auto header = text.substr(0, text.find('\n') + 1);
  json r = raw_records(text)[0];
  r["image_id"] = 4242;
  const auto orphan = parse_annotations(header + r.dump() + "\n");
  ASSERT_EQ(orphan.diagnostics.size(), 1u);
  EXPECT_EQ(orphan.diagnostics[0].line, 2);
  EXPECT_NE(orphan.diagnostics[0].message.find("unknown image_id"), std::string::npos);
  r = raw_records(text)[0];
  r.erase("bbox");
  EXPECT_NE(parse_annotations(header + r.dump() + "\n").diagnostics.at(0).message.find("missing field 'bbox'"),
            std::string::npos);
}

TEST(Dataset, ValidBoxCountsMatchRawTallies) {
  const std::string text = fixture("wholebody_small.jsonl");
  const AnnotationSet set = parse_annotations(text);
  std::size_t faces = 0, left = 0, right = 0;
  for (const json& r : raw_records(text)) {
    faces += r["face_valid"].get<bool>();
    left += r["lefthand_valid"].get<bool>();
    right += r["righthand_valid"].get<bool>();
  }
  const PartCounts c = set.valid_boxes();
  EXPECT_EQ(c.faces, faces);
  EXPECT_EQ(c.left_hands, left);
  EXPECT_EQ(c.right_hands, right);
  EXPECT_GT(faces, 0u);
}

// Linear scan over bin edges.
std::size_t oracle_bin(double d, double w, int bins) {
  for (int i = 0; i < bins; ++i)
    if (d >= i * w && d < (i + 1) * w) return static_cast<std::size_t>(i);
  return static_cast<std::size_t>(bins);
}

std::vector<std::array<double, 4>> raw_boxes(const json& r, BoxPart part) {
  std::vector<std::array<double, 4>> out;
  auto take = [&](const char* box, const char* valid) {
    const auto b = r[box].get<std::array<double, 4>>();
    if ((!valid || r[valid].get<bool>()) && b[2] > 0 && b[3] > 0) out.push_back(b);
  };
  if (part == BoxPart::Body) take("bbox", nullptr);
  if (part == BoxPart::Face) take("face_box", "face_valid");
  if (part == BoxPart::Hand) {
    take("lefthand_box", "lefthand_valid");
    take("righthand_box", "righthand_valid");
  }
  return out;
}

TEST(Statistics, DiagonalHistogramMatchesBruteForce) {
  const std::string text = fixture("wholebody_small.jsonl");
  const AnnotationSet set = parse_annotations(text);
  const auto raw = raw_records(text);
  for (BoxPart part : kBoxParts)
    for (const auto& [w, bins] : {std::pair{10.0, 40}, std::pair{7.5, 5}, std::pair{100.0, 1}}) {
      std::vector<std::size_t> want(static_cast<std::size_t>(bins) + 1, 0);
      for (const json& r : raw)
        for (const auto& b : raw_boxes(r, part)) ++want[oracle_bin(std::sqrt(b[2] * b[2] + b[3] * b[3]), w, bins)];
      const Histogram1D h = box_diagonal_histogram(set.annotations, part, w, bins);
      for (int i = 0; i < bins; ++i) EXPECT_EQ(h.counts[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)]);
      EXPECT_EQ(h.overflow, want.back());
      std::size_t n = 0;
      for (const json& r : raw) n += raw_boxes(r, part).size();
      EXPECT_EQ(h.total(), n) << to_string(part);
    }
  EXPECT_THROW(box_diagonal_histogram(set.annotations, BoxPart::Body, 0, 3), std::invalid_argument);
  EXPECT_THROW(box_diagonal_histogram(set.annotations, BoxPart::Body, 1, 0), std::invalid_argument);
}

TEST(Statistics, ThreeFourFiveDiagonal) {
  WholeBodyAnnotation a;
  a.keypoints.resize(133);
  a.bbox = {0, 0, 3, 4};
  const auto h = box_diagonal_histogram({a}, BoxPart::Body, 1.0, 10);
  EXPECT_EQ(h.counts[5], 1u);
  EXPECT_EQ(h.total(), 1u);
  a.bbox = {0, 0, 0, 4};
  EXPECT_EQ(box_diagonal_histogram({a}, BoxPart::Body, 1.0, 10).total(), 0u);
  a.face_box = {0, 0, 6, 8};
  EXPECT_EQ(box_diagonal_histogram({a}, BoxPart::Face, 1.0, 10).total(), 0u);
  a.face_valid = true;
  EXPECT_EQ(box_diagonal_histogram({a}, BoxPart::Face, 1.0, 10).overflow, 1u);
}

TEST(Statistics, PermutationInvariance) {
  const AnnotationSet set = parse_annotations(fixture("wholebody_small.jsonl"));
  auto shuffled = set.annotations;
  Rng rng(3);
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
  for (BoxPart part : kBoxParts) {
    EXPECT_EQ(box_diagonal_histogram(shuffled, part, 8, 30).counts,
              box_diagonal_histogram(set.annotations, part, 8, 30).counts);
    EXPECT_EQ(center_histogram(shuffled, set.images, part, 4, 3).counts,
              center_histogram(set.annotations, set.images, part, 4, 3).counts);
  }
  for (Part p : {Part::Body, Part::Face, Part::Hand}) {
    EXPECT_EQ(mean_edge_distance(shuffled, default_skeleton(p)).edges,
              mean_edge_distance(set.annotations, default_skeleton(p)).edges);
    EXPECT_NEAR(mean_edge_distance(shuffled, default_skeleton(p)).mean,
                mean_edge_distance(set.annotations, default_skeleton(p)).mean, 1e-9);
  }
}

TEST(Statistics, CenterHistogramMatchesBruteForce) {
  const std::string text = fixture("wholebody_small.jsonl");
  const AnnotationSet set = parse_annotations(text);
  std::map<long long, std::pair<double, double>> size;
  for (const auto& im : set.images) size[im.id] = {im.width, im.height};
  for (BoxPart part : kBoxParts) {
    const int bx = 5, by = 4;
    std::vector<std::size_t> want(static_cast<std::size_t>(bx * by), 0);
    std::size_t outside = 0;
    for (const json& r : raw_records(text)) {
      const auto [W, H] = size.at(r["image_id"].get<long long>());
      for (const auto& b : raw_boxes(r, part)) {
        const double cx = (b[0] + b[2] / 2) / W, cy = (b[1] + b[3] / 2) / H;
        if (cx < 0 || cx > 1 || cy < 0 || cy > 1) {
          ++outside;
          continue;
        }
        int i = 0, j = 0;
        while (i + 1 < bx && cx >= (i + 1) / static_cast<double>(bx)) ++i;
        while (j + 1 < by && cy >= (j + 1) / static_cast<double>(by)) ++j;
        ++want[static_cast<std::size_t>(j * bx + i)];
      }
    }
    const Histogram2D h = center_histogram(set.annotations, set.images, part, bx, by);
    EXPECT_EQ(h.counts, want) << to_string(part);
    EXPECT_EQ(h.outside, outside);
  }
}

TEST(Statistics, CenterEdgeCases) {
  WholeBodyAnnotation a;
  a.keypoints.resize(133);
  a.image_id = 1;
  const std::vector<ImageInfo> ims{{1, 100, 50, ""}};
  a.bbox = {90, 40, 20, 20};  // center (100, 50) maps to (1, 1)
  auto h = center_histogram({a}, ims, BoxPart::Body, 4, 4);
  EXPECT_EQ(h.at(3, 3), 1u);
  a.bbox = {95, 40, 20, 20};
  h = center_histogram({a}, ims, BoxPart::Body, 4, 4);
  EXPECT_EQ(h.outside, 1u);
  a.bbox = {-10, -10, 20, 20};
  EXPECT_EQ(center_histogram({a}, ims, BoxPart::Body, 4, 4).at(0, 0), 1u);
  a.image_id = 2;
  EXPECT_THROW(center_histogram({a}, ims, BoxPart::Body, 4, 4), std::invalid_argument);
  EXPECT_EQ(normalized_center({0, 0, 50, 25}, ims[0]).x, 0.25);
  EXPECT_EQ(normalized_center({0, 0, 50, 25}, ims[0]).y, 0.25);
}

TEST(Statistics, EdgeDistanceOracle) {
  const std::string text = fixture("wholebody_small.jsonl");
  const AnnotationSet set = parse_annotations(text);
  const auto raw = raw_records(text);
  // Flattened (x, y, v) of whole-body index i in a raw record.
  auto kp = [](const json& r, int i) {
    const std::pair<const char*, int> parts[] = {
        {"keypoints", 0}, {"foot_kpts", 17}, {"face_kpts", 23}, {"lefthand_kpts", 91}, {"righthand_kpts", 112}};
    const char* field = "keypoints";
    int begin = 0;
    for (const auto& [f, b] : parts)
      if (i >= b) field = f, begin = b;
    const auto& arr = r[field];
    const auto o = static_cast<std::size_t>(3 * (i - begin));
    return std::array<double, 3>{arr[o].get<double>(), arr[o + 1].get<double>(), arr[o + 2].get<double>()};
  };
  for (Part p : {Part::Body, Part::Foot, Part::Face, Part::LeftHand, Part::RightHand, Part::WholeBody}) {
    const Skeleton s = default_skeleton(p);
    double sum = 0;
    std::size_t n = 0;
    for (const json& r : raw)
      for (const auto& [i, j] : s) {
        const auto a = kp(r, i), b = kp(r, j);
        if (a[2] > 0 && b[2] > 0) {
          sum += std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
          ++n;
        }
      }
    const EdgeDistance d = mean_edge_distance(set.annotations, s);
    EXPECT_EQ(d.edges, n);
    EXPECT_NEAR(d.mean, sum / static_cast<double>(n), 1e-9);
  }
  EXPECT_TRUE(std::isnan(mean_edge_distance({}, default_skeleton(Part::Body)).mean));
}

TEST(Statistics, SkeletonsAreTreesWithinParts) {
  for (Part p : {Part::Body, Part::Foot, Part::LeftHand, Part::RightHand}) {
    const KeypointRange r = part_range(p);
    const Skeleton s = default_skeleton(p);
    for (const auto& [i, j] : s) {
      EXPECT_GE(std::min(i, j), r.begin);
      EXPECT_LT(std::max(i, j), r.begin + r.count);
    }
  }
  EXPECT_EQ(default_skeleton(Part::LeftHand).size(), 20u);
  EXPECT_EQ(default_skeleton(Part::Hand).size(), 40u);
  EXPECT_EQ(default_skeleton(Part::Body).size(), 16u);
}

TEST(Subsets, FaceAndHandCrops) {
  const AnnotationSet set = parse_annotations(fixture("wholebody_small.jsonl"));
  const PartCounts c = set.valid_boxes();
  const auto faces = extract_subsets(set.annotations, Subset::Face, 1.25);
  const auto hands = extract_subsets(set.annotations, Subset::Hand, 1.25);
  EXPECT_EQ(faces.size(), c.faces);
  EXPECT_EQ(hands.size(), c.left_hands + c.right_hands);
  for (const auto& f : faces) {
    EXPECT_EQ(f.part, "face");
    EXPECT_EQ(f.keypoints.size(), 68u);
  }
  std::map<long long, const WholeBodyAnnotation*> by_id;
  for (const auto& a : set.annotations) by_id[a.id] = &a;
  for (const auto& h : hands) {
    ASSERT_EQ(h.keypoints.size(), 21u);
    const WholeBodyAnnotation& a = *by_id.at(h.annotation_id);
    const bool left = h.part == "lefthand";
    const Box src = left ? a.lefthand_box : a.righthand_box;
    EXPECT_NEAR(h.box.center().x, src.center().x, 1e-9);
    EXPECT_NEAR(h.box.w, src.w * 1.25, 1e-9);
    const int begin = left ? 91 : 112;
    for (std::size_t i = 0; i < 21; ++i) {
      const Keypoint& k = a.keypoints[static_cast<std::size_t>(begin) + i];
      EXPECT_EQ(h.visibility[i], k.v);
      // No mirroring: crop coordinates are a pure translation.
      EXPECT_NEAR(h.keypoints[i].x, k.x - h.box.x, 1e-9);
      const Point2 back = crop_to_image(h, h.keypoints[i]);
      EXPECT_NEAR(back.x, k.x, 1e-9);
      EXPECT_NEAR(back.y, k.y, 1e-9);
    }
  }
  EXPECT_THROW(extract_subsets(set.annotations, Subset::Face, 0), std::invalid_argument);
  const std::string crops = serialize_crops(hands);
  EXPECT_EQ(static_cast<std::size_t>(std::count(crops.begin(), crops.end(), '\n')), hands.size() + 1);
  EXPECT_EQ(json::parse(crops.substr(0, crops.find('\n')))["format"], "wbnas.crops/1");
}

OksParams params_k(double k) {
  OksParams p;
  p.k.assign(133, k);
  p.thresholds = OksParams::coco_thresholds();
  return p;
}

TEST(Evaluation, PerfectPredictionsScoreOne) {
  const AnnotationSet gt = parse_annotations(fixture("wholebody_small.jsonl"));
  AnnotationSet pred = gt;
  for (auto& a : pred.annotations) a.score = 0.9;
  const auto reports = evaluate_wholebody(gt, pred, params_k(0.05));
  ASSERT_EQ(reports.size(), 5u);
  EXPECT_EQ(reports[0].part, Part::Body);
  EXPECT_DOUBLE_EQ(reports[0].result.map, 1.0);
  EXPECT_DOUBLE_EQ(reports[4].result.map, 1.0);
  const LandmarkReport lm = evaluate_landmarks(gt, pred);
  EXPECT_EQ(lm.face_nme, 0.0);
  EXPECT_EQ(lm.hand_pck, 1.0);
  EXPECT_EQ(lm.hand_auc, 1.0);
  EXPECT_EQ(lm.hand_epe, 0.0);
  EXPECT_GT(lm.hands, 0u);
}

TEST(Evaluation, JitteredPredictions) {
  const AnnotationSet gt = parse_annotations(fixture("wholebody_small.jsonl"));
  const AnnotationSet pred = parse_annotations(fixture("predictions_small.jsonl"));
  const auto reports = evaluate_wholebody(gt, pred, params_k(0.08));
  for (const auto& r : reports) {
    if (std::isnan(r.result.map)) continue;
    EXPECT_GE(r.result.map, 0.0);
    EXPECT_LE(r.result.map, 1.0);
  }
  const LandmarkReport lm = evaluate_landmarks(gt, pred);
  EXPECT_GT(lm.hand_epe, 0.0);
  EXPECT_LT(lm.hand_epe, 2.0 * std::sqrt(2.0));
  EXPECT_GT(lm.face_nme, 0.0);
  AnnotationSet orphan = pred;
  orphan.annotations[0].image_id = 999;
  EXPECT_THROW(evaluate_wholebody(gt, orphan, params_k(0.08)), std::invalid_argument);
}

TEST(Evaluation, PoseConversion) {
  const AnnotationSet set = parse_annotations(fixture("wholebody_small.jsonl"));
  WholeBodyAnnotation a = set.annotations[0];
  PoseResult p = to_pose(a);
  EXPECT_EQ(p.area, *a.area);
  EXPECT_EQ(p.score, 1.0);
  a.area.reset();
  a.score = 0.25;
  p = to_pose(a);
  EXPECT_EQ(p.area, a.bbox.w * a.bbox.h);
  EXPECT_EQ(p.score, 0.25);
  EXPECT_EQ(p.keypoints.size(), 133u);
}

TEST(Evaluation, RepeatedLabelingsGiveSigmas) {
  const AnnotationSet set = parse_annotations(fixture("repeated_annotations.jsonl"));
  const auto groups = group_repeated(set.annotations);
  ASSERT_EQ(groups.size(), 12u);
  for (const auto& g : groups) {
    EXPECT_EQ(g.annotators.size(), 3u);
    EXPECT_GT(g.scale, 0.0);
  }
  const SigmaResult s = sigmas_from_annotators(groups, 133);
  ASSERT_EQ(s.sigma.size(), 133u);
  for (double v : s.sigma) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 0.2);
  }
  EXPECT_TRUE(group_repeated(parse_annotations(fixture("wholebody_small.jsonl")).annotations).empty());
}

}  // namespace
}  // namespace wbnas
