// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "wbnas/serialization.hpp"

namespace wbnas {

namespace {

using ojson = nlohmann::ordered_json;
using nlohmann::json;

struct PartField {
  const char* name;
  int begin;
  int count;
};

constexpr PartField kPartFields[] = {
    {"keypoints", 0, kBodyKeypoints},      {"foot_kpts", 17, kFootKeypoints},
    {"face_kpts", 23, kFaceKeypoints},     {"lefthand_kpts", 91, kHandKeypoints},
    {"righthand_kpts", 112, kHandKeypoints},
};

struct RecordError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const json& need(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw RecordError(std::string("missing field '") + key + "'");
  return *it;
}

double number(const json& j, const char* what) {
  if (!j.is_number()) throw RecordError(std::string(what) + " is not a number");
  return j.get<double>();
}

long long integer(const json& j, const char* what) {
  if (!j.is_number_integer()) throw RecordError(std::string(what) + " is not an integer");
  return j.get<long long>();
}

Box box_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) throw RecordError(std::string(what) + " must be [x, y, w, h]");
  return {number(j[0], what), number(j[1], what), number(j[2], what), number(j[3], what)};
}

bool flag(const json& j, const char* what) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<long long>() != 0;
  throw RecordError(std::string(what) + " is not a flag");
}

WholeBodyAnnotation record_from(const json& j) {
  if (!j.is_object()) throw RecordError("record is not an object");
  WholeBodyAnnotation a;
  a.id = integer(need(j, "id"), "id");
  a.image_id = integer(need(j, "image_id"), "image_id");
  a.bbox = box_from(need(j, "bbox"), "bbox");
  std::size_t total = 0;
  for (const PartField& f : kPartFields) {
    const json& arr = need(j, f.name);
    if (!arr.is_array() || arr.size() % 3 != 0)
      throw RecordError(std::string(f.name) + " is not a list of (x, y, v) triplets");
    total += arr.size() / 3;
  }
  if (total != static_cast<std::size_t>(kWholeBodyKeypoints))
    throw RecordError("keypoint count ≠ 133 (got " + std::to_string(total) + ")");
  a.keypoints.resize(kWholeBodyKeypoints);
  for (const PartField& f : kPartFields) {
    const json& arr = j[f.name];
    if (arr.size() != static_cast<std::size_t>(3 * f.count))
      throw RecordError(std::string(f.name) + " must hold " + std::to_string(f.count) + " keypoints");
    for (int i = 0; i < f.count; ++i) {
      Keypoint& k = a.keypoints[static_cast<std::size_t>(f.begin + i)];
      const auto b = static_cast<std::size_t>(3 * i);
      k.x = number(arr[b], f.name);
      k.y = number(arr[b + 1], f.name);
      k.v = static_cast<int>(integer(arr[b + 2], f.name));
    }
  }
  a.face_box = box_from(need(j, "face_box"), "face_box");
  a.lefthand_box = box_from(need(j, "lefthand_box"), "lefthand_box");
  a.righthand_box = box_from(need(j, "righthand_box"), "righthand_box");
  a.face_valid = flag(need(j, "face_valid"), "face_valid");
  a.lefthand_valid = flag(need(j, "lefthand_valid"), "lefthand_valid");
  a.righthand_valid = flag(need(j, "righthand_valid"), "righthand_valid");
  if (j.contains("area")) a.area = number(j["area"], "area");
  if (j.contains("score")) a.score = number(j["score"], "score");
  if (j.contains("instance_id")) a.instance_id = integer(j["instance_id"], "instance_id");
  return a;
}

ojson box_json(const Box& b) { return ojson::array({b.x, b.y, b.w, b.h}); }

ojson record_json(const WholeBodyAnnotation& a) {
  ojson j;
  j["id"] = a.id;
  j["image_id"] = a.image_id;
  if (a.instance_id) j["instance_id"] = *a.instance_id;
  j["bbox"] = box_json(a.bbox);
  if (a.area) j["area"] = *a.area;
  if (a.score) j["score"] = *a.score;
  for (const PartField& f : kPartFields) {
    ojson arr = ojson::array();
    for (int i = 0; i < f.count; ++i) {
      const Keypoint& k = a.keypoints.at(static_cast<std::size_t>(f.begin + i));
      arr.push_back(k.x);
      arr.push_back(k.y);
      arr.push_back(k.v);
    }
    j[f.name] = std::move(arr);
  }
  j["face_box"] = box_json(a.face_box);
  j["lefthand_box"] = box_json(a.lefthand_box);
  j["righthand_box"] = box_json(a.righthand_box);
  j["face_valid"] = a.face_valid;
  j["lefthand_valid"] = a.lefthand_valid;
  j["righthand_valid"] = a.righthand_valid;
  return j;
}

bool positive_area(const Box& b) { return b.w > 0 && b.h > 0; }

std::vector<Point2> part_points(const WholeBodyAnnotation& a, Part part, std::vector<int>* vis = nullptr) {
  const KeypointRange r = part_range(part);
  std::vector<Point2> pts;
  for (int i = r.begin; i < r.begin + r.count; ++i) {
    const Keypoint& k = a.keypoints[static_cast<std::size_t>(i)];
    pts.push_back({k.x, k.y});
    if (vis) vis->push_back(k.v);
  }
  return pts;
}

void chain(Skeleton& s, int offset, int first, int last) {
  for (int i = first; i < last; ++i) s.emplace_back(offset + i, offset + i + 1);
}

void hand_edges(Skeleton& s, int offset) {
  for (int finger = 0; finger < 5; ++finger) {
    const int base = 1 + 4 * finger;
    s.emplace_back(offset, offset + base);
    chain(s, offset, base, base + 3);
  }
}

}  // namespace

PartCounts AnnotationSet::valid_boxes() const {
  PartCounts c;
  for (const auto& a : annotations) {
    c.faces += a.face_valid ? 1 : 0;
    c.left_hands += a.lefthand_valid ? 1 : 0;
    c.right_hands += a.righthand_valid ? 1 : 0;
  }
  return c;
}

std::vector<std::string> check_annotation(const WholeBodyAnnotation& a) {
  std::vector<std::string> out;
  if (a.keypoints.size() != static_cast<std::size_t>(kWholeBodyKeypoints))
    out.push_back("keypoint count ≠ 133 (got " + std::to_string(a.keypoints.size()) + ")");
  for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
    const Keypoint& k = a.keypoints[i];
    if (k.v < 0 || k.v > 2) out.push_back("keypoint " + std::to_string(i) + " has visibility " + std::to_string(k.v));
    if (!std::isfinite(k.x) || !std::isfinite(k.y)) out.push_back("keypoint " + std::to_string(i) + " is not finite");
  }
  if (!(a.bbox.w >= 0 && a.bbox.h >= 0)) out.push_back("bbox has negative size");
  const std::pair<const char*, std::pair<const Box*, bool>> parts[] = {
      {"face_box", {&a.face_box, a.face_valid}},
      {"lefthand_box", {&a.lefthand_box, a.lefthand_valid}},
      {"righthand_box", {&a.righthand_box, a.righthand_valid}},
  };
  for (const auto& [name, bv] : parts)
    if (bv.second && !positive_area(*bv.first)) out.push_back(std::string(name) + " is flagged valid but has zero area");
  if (a.area && !(*a.area >= 0)) out.push_back("area is negative");
  return out;
}

AnnotationSet parse_annotations(std::string_view text) {
  AnnotationSet set;
  std::size_t pos = 0;
  int line_no = 0;
  bool header = false;
  std::map<long long, bool> image_ids;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    if (!header) {
      json h;
      try {
        h = json::parse(line);
      } catch (const json::parse_error& e) {
        throw std::invalid_argument("annotations: header on line " + std::to_string(line_no) + " is not JSON: " + e.what());
      }
      if (!h.is_object() || !h.contains("format") || h["format"] != kWholeBodyFormat)
        throw std::invalid_argument("annotations: header must declare format \"" + std::string(kWholeBodyFormat) + "\"");
      if (!h.contains("images") || !h["images"].is_array())
        throw std::invalid_argument("annotations: header has no image list");
      for (const json& im : h["images"]) {
        try {
          ImageInfo info;
          info.id = integer(need(im, "id"), "image id");
          info.width = static_cast<int>(integer(need(im, "width"), "width"));
          info.height = static_cast<int>(integer(need(im, "height"), "height"));
          if (im.contains("file_name")) info.file_name = im["file_name"].get<std::string>();
          if (info.width <= 0 || info.height <= 0) throw RecordError("image size must be positive");
          if (!image_ids.emplace(info.id, true).second) throw RecordError("duplicate image id");
          set.images.push_back(std::move(info));
        } catch (const std::exception& e) {
          throw std::invalid_argument("annotations: bad image entry: " + std::string(e.what()));
        }
      }
      header = true;
      continue;
    }
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error&) {
        throw RecordError("record is not valid JSON");
      }
      WholeBodyAnnotation a = record_from(j);
      if (auto problems = check_annotation(a); !problems.empty()) throw RecordError(problems.front());
      if (!image_ids.contains(a.image_id)) throw RecordError("unknown image_id " + std::to_string(a.image_id));
      set.annotations.push_back(std::move(a));
    } catch (const RecordError& e) {
      set.diagnostics.push_back({line_no, e.what()});
    } catch (const json::exception& e) {
      set.diagnostics.push_back({line_no, e.what()});
    }
  }
  if (!header) throw std::invalid_argument("annotations: empty container");
  return set;
}

AnnotationSet load_annotations(const std::string& path) { return parse_annotations(read_text_file(path)); }

std::string serialize_annotations(const std::vector<ImageInfo>& images,
                                  const std::vector<WholeBodyAnnotation>& annotations) {
  ojson h;
  h["format"] = std::string(kWholeBodyFormat);
  ojson ims = ojson::array();
  for (const ImageInfo& im : images)
    ims.push_back({{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}});
  h["images"] = std::move(ims);
  std::string out = h.dump() + "\n";
  for (const WholeBodyAnnotation& a : annotations) out += record_json(a).dump() + "\n";
  return out;
}

std::string_view to_string(BoxPart part) {
  switch (part) {
    case BoxPart::Body: return "body";
    case BoxPart::Face: return "face";
    case BoxPart::Hand: return "hand";
  }
  return "?";
}

std::vector<Box> part_boxes(const WholeBodyAnnotation& a, BoxPart part) {
  std::vector<Box> out;
  switch (part) {
    case BoxPart::Body:
      if (positive_area(a.bbox)) out.push_back(a.bbox);
      break;
    case BoxPart::Face:
      if (a.face_valid && positive_area(a.face_box)) out.push_back(a.face_box);
      break;
    case BoxPart::Hand:
      if (a.lefthand_valid && positive_area(a.lefthand_box)) out.push_back(a.lefthand_box);
      if (a.righthand_valid && positive_area(a.righthand_box)) out.push_back(a.righthand_box);
      break;
  }
  return out;
}

std::size_t Histogram1D::total() const {
  std::size_t t = overflow;
  for (std::size_t c : counts) t += c;
  return t;
}

Histogram1D box_diagonal_histogram(const std::vector<WholeBodyAnnotation>& anns, BoxPart part, double bin_width,
                                   int bins) {
  if (!(bin_width > 0) || bins < 1) throw std::invalid_argument("histogram: need bin_width > 0 and bins >= 1");
  Histogram1D h;
  h.bin_width = bin_width;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (const auto& a : anns)
    for (const Box& b : part_boxes(a, part)) {
      const double d = std::hypot(b.w, b.h);
      const double idx = std::floor(d / bin_width);
      if (idx >= bins)
        ++h.overflow;
      else
        ++h.counts[static_cast<std::size_t>(idx)];
    }
  return h;
}

Skeleton default_skeleton(Part part) {
  Skeleton s;
  switch (part) {
    case Part::Body:
      s = {{0, 1}, {0, 2}, {1, 3}, {2, 4}, {0, 5}, {0, 6}, {5, 7}, {7, 9},
           {6, 8}, {8, 10}, {5, 11}, {6, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
      break;
    case Part::Foot:
      s = {{19, 17}, {17, 18}, {22, 20}, {20, 21}};
      break;
    case Part::Face: {
      constexpr int o = 23;
      chain(s, o, 0, 16);   // jaw
      chain(s, o, 17, 21);  // brows
      chain(s, o, 22, 26);
      chain(s, o, 27, 30);  // nose
      chain(s, o, 31, 35);
      chain(s, o, 36, 41);  // eyes
      chain(s, o, 42, 47);
      chain(s, o, 48, 59);  // lips
      chain(s, o, 60, 67);
      break;
    }
    case Part::LeftHand:
      hand_edges(s, 91);
      break;
    case Part::RightHand:
      hand_edges(s, 112);
      break;
    case Part::Hand:
      hand_edges(s, 91);
      hand_edges(s, 112);
      break;
    case Part::WholeBody:
      for (Part p : {Part::Body, Part::Foot, Part::Face, Part::Hand}) {
        Skeleton e = default_skeleton(p);
        s.insert(s.end(), e.begin(), e.end());
      }
      break;
  }
  return s;
}

EdgeDistance mean_edge_distance(const std::vector<WholeBodyAnnotation>& anns, const Skeleton& skeleton) {
  double sum = 0;
  EdgeDistance r;
  for (const auto& a : anns)
    for (const auto& [i, j] : skeleton) {
      const Keypoint& p = a.keypoints.at(static_cast<std::size_t>(i));
      const Keypoint& q = a.keypoints.at(static_cast<std::size_t>(j));
      if (p.v > 0 && q.v > 0) {
        sum += std::hypot(p.x - q.x, p.y - q.y);
        ++r.edges;
      }
    }
  r.mean = r.edges ? sum / static_cast<double>(r.edges) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

Point2 normalized_center(const Box& box, const ImageInfo& image) {
  if (image.width <= 0 || image.height <= 0) throw std::invalid_argument("image size must be positive");
  const Point2 c = box.center();
  return {c.x / image.width, c.y / image.height};
}

Histogram2D center_histogram(const std::vector<WholeBodyAnnotation>& anns, const std::vector<ImageInfo>& images,
                             BoxPart part, int bins_x, int bins_y) {
  if (bins_x < 1 || bins_y < 1) throw std::invalid_argument("histogram: need at least one bin per axis");
  std::map<long long, const ImageInfo*> by_id;
  for (const ImageInfo& im : images) by_id[im.id] = &im;
  Histogram2D h;
  h.bins_x = bins_x;
  h.bins_y = bins_y;
  h.counts.assign(static_cast<std::size_t>(bins_x) * static_cast<std::size_t>(bins_y), 0);
  for (const auto& a : anns) {
    auto it = by_id.find(a.image_id);
    if (it == by_id.end()) throw std::invalid_argument("annotation " + std::to_string(a.id) + " has no image");
    for (const Box& b : part_boxes(a, part)) {
      const Point2 c = normalized_center(b, *it->second);
      if (!(c.x >= 0 && c.x <= 1 && c.y >= 0 && c.y <= 1)) {
        ++h.outside;
        continue;
      }
      const int bx = std::min(bins_x - 1, static_cast<int>(c.x * bins_x));
      const int by = std::min(bins_y - 1, static_cast<int>(c.y * bins_y));
      ++h.counts[static_cast<std::size_t>(by) * static_cast<std::size_t>(bins_x) + static_cast<std::size_t>(bx)];
    }
  }
  return h;
}

std::vector<CropRecord> extract_subsets(const std::vector<WholeBodyAnnotation>& anns, Subset which, double expansion) {
  if (!(expansion > 0)) throw std::invalid_argument("extract_subsets: expansion must be positive");
  std::vector<CropRecord> out;
  auto add = [&](const WholeBodyAnnotation& a, const char* name, const Box& box, Part part) {
    CropRecord c;
    c.annotation_id = a.id;
    c.image_id = a.image_id;
    c.part = name;
    c.box = expand_roi(box, expansion);
    for (const Point2& p : part_points(a, part, &c.visibility)) c.keypoints.push_back(image_to_crop(c, p));
    out.push_back(std::move(c));
  };
  for (const auto& a : anns) {
    if (which == Subset::Face) {
      if (a.face_valid && positive_area(a.face_box)) add(a, "face", a.face_box, Part::Face);
    } else {
      if (a.lefthand_valid && positive_area(a.lefthand_box)) add(a, "lefthand", a.lefthand_box, Part::LeftHand);
      if (a.righthand_valid && positive_area(a.righthand_box)) add(a, "righthand", a.righthand_box, Part::RightHand);
    }
  }
  return out;
}

Point2 crop_to_image(const CropRecord& crop, Point2 local) { return {local.x + crop.box.x, local.y + crop.box.y}; }
Point2 image_to_crop(const CropRecord& crop, Point2 global) { return {global.x - crop.box.x, global.y - crop.box.y}; }

std::string serialize_crops(const std::vector<CropRecord>& crops) {
  std::string out = ojson({{"format", std::string(kCropFormat)}, {"records", crops.size()}}).dump() + "\n";
  for (const CropRecord& c : crops) {
    ojson j;
    j["annotation_id"] = c.annotation_id;
    j["image_id"] = c.image_id;
    j["part"] = c.part;
    j["box"] = box_json(c.box);
    ojson k = ojson::array();
    for (std::size_t i = 0; i < c.keypoints.size(); ++i) {
      k.push_back(c.keypoints[i].x);
      k.push_back(c.keypoints[i].y);
      k.push_back(c.visibility[i]);
    }
    j["keypoints"] = std::move(k);
    out += j.dump() + "\n";
  }
  return out;
}

PoseResult to_pose(const WholeBodyAnnotation& a) {
  PoseResult p;
  for (const Keypoint& k : a.keypoints) {
    p.keypoints.push_back({k.x, k.y});
    p.visibility.push_back(k.v);
  }
  p.score = a.score.value_or(1.0);
  p.area = a.area.value_or(a.bbox.w * a.bbox.h);
  p.box = a.bbox;
  return p;
}

std::vector<RepeatedInstance> group_repeated(const std::vector<WholeBodyAnnotation>& anns) {
  std::map<long long, RepeatedInstance> groups;
  for (const auto& a : anns) {
    if (!a.instance_id) continue;
    RepeatedInstance& g = groups[*a.instance_id];
    if (g.annotators.empty()) g.scale = std::sqrt(a.area.value_or(a.bbox.w * a.bbox.h));
    AnnotatorLabel label;
    for (const Keypoint& k : a.keypoints) {
      label.keypoints.push_back({k.x, k.y});
      label.labeled.push_back(k.v > 0);
    }
    g.annotators.push_back(std::move(label));
  }
  std::vector<RepeatedInstance> out;
  for (auto& [id, g] : groups) out.push_back(std::move(g));
  return out;
}

std::vector<PartReport> evaluate_wholebody(const AnnotationSet& gt, const AnnotationSet& predictions,
                                           const OksParams& params) {
  std::vector<ImageEval> images;
  std::map<long long, std::size_t> slot;
  for (const ImageInfo& im : gt.images) {
    slot[im.id] = images.size();
    images.push_back({im.id, {}, {}});
  }
  for (const auto& a : gt.annotations) images[slot.at(a.image_id)].ground_truths.push_back(to_pose(a));
  for (const auto& a : predictions.annotations) {
    auto it = slot.find(a.image_id);
    if (it == slot.end()) throw std::invalid_argument("prediction for unknown image " + std::to_string(a.image_id));
    images[it->second].detections.push_back(to_pose(a));
  }
  std::vector<PartReport> out;
  for (Part p : kReportParts) out.push_back({p, map_mar(images, params, part_mask(p))});
  return out;
}

LandmarkReport evaluate_landmarks(const AnnotationSet& gt, const AnnotationSet& predictions) {
  std::map<long long, const WholeBodyAnnotation*> pred;
  for (const auto& a : predictions.annotations) pred[a.id] = &a;
  LandmarkReport r;
  double nme_sum = 0, pck_sum = 0, auc_sum = 0, epe_sum = 0;
  for (const auto& g : gt.annotations) {
    auto it = pred.find(g.id);
    if (it == pred.end()) continue;
    const WholeBodyAnnotation& p = *it->second;
    const Keypoint& le = g.keypoints[kLeftEyeOuter];
    const Keypoint& re = g.keypoints[kRightEyeOuter];
    const double iod = std::hypot(le.x - re.x, le.y - re.y);
    if (g.face_valid && le.v > 0 && re.v > 0 && iod > 0) {
      std::vector<int> vis;
      const auto gp = part_points(g, Part::Face, &vis);
      std::vector<bool> valid;
      for (int v : vis) valid.push_back(v > 0);
      nme_sum += nme(part_points(p, Part::Face), gp, iod, valid);
      ++r.faces;
    }
    const std::pair<bool, std::pair<const Box*, Part>> hands[] = {
        {g.lefthand_valid, {&g.lefthand_box, Part::LeftHand}},
        {g.righthand_valid, {&g.righthand_box, Part::RightHand}},
    };
    for (const auto& [valid_box, bp] : hands) {
      if (!valid_box) continue;
      std::vector<int> vis;
      const auto gp = part_points(g, bp.second, &vis);
      std::vector<bool> valid;
      for (int v : vis) valid.push_back(v > 0);
      if (std::find(valid.begin(), valid.end(), true) == valid.end()) continue;
      const auto pp = part_points(p, bp.second);
      pck_sum += pck(pp, gp, bp.first->w, bp.first->h, 0.2, valid);
      auc_sum += auc(pp, gp, 30.0, 3001, valid);
      epe_sum += epe(pp, gp, valid);
      ++r.hands;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.face_nme = r.faces ? nme_sum / static_cast<double>(r.faces) : nan;
  r.hand_pck = r.hands ? pck_sum / static_cast<double>(r.hands) : nan;
  r.hand_auc = r.hands ? auc_sum / static_cast<double>(r.hands) : nan;
  r.hand_epe = r.hands ? epe_sum / static_cast<double>(r.hands) : nan;
  return r;
}

}  // namespace wbnas
