// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace wbnas {

namespace {

bool selected(const std::vector<bool>& mask, std::size_t i) { return mask.empty() || mask[i]; }

double dist(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

void check_pair(std::span<const Point2> preds, std::span<const Point2> gts, const std::vector<bool>& valid,
                const char* what) {
  if (preds.size() != gts.size()) throw std::invalid_argument(std::string(what) + ": prediction/ground-truth size mismatch");
  if (!valid.empty() && valid.size() != gts.size()) throw std::invalid_argument(std::string(what) + ": mask size mismatch");
}

}  // namespace

std::vector<double> OksParams::coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<std::string> OksParams::check(int num_keypoints) const {
  std::vector<std::string> problems;
  if (static_cast<int>(k.size()) != num_keypoints)
    problems.push_back("expected " + std::to_string(num_keypoints) + " falloff constants, got " + std::to_string(k.size()));
  for (std::size_t i = 0; i < k.size(); ++i)
    if (!(k[i] > 0)) problems.push_back("k[" + std::to_string(i) + "] must be positive");
  if (thresholds.empty()) problems.push_back("no OKS thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0 && thresholds[i] <= 1)) problems.push_back("threshold outside (0, 1]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) problems.push_back("thresholds must strictly increase");
  }
  if (recall_points < 2) problems.push_back("need at least 2 recall points");
  if (max_detections < 1) problems.push_back("max_detections must be >= 1");
  return problems;
}

double oks(const PoseResult& pred, const PoseResult& gt, std::span<const double> k, double scale,
           const std::vector<bool>& mask) {
  const std::size_t n = gt.keypoints.size();
  if (pred.keypoints.size() != n || gt.visibility.size() != n || k.size() != n)
    throw std::invalid_argument("oks: keypoint count mismatch");
  if (!mask.empty() && mask.size() != n) throw std::invalid_argument("oks: mask size mismatch");
  if (!(scale > 0)) throw std::invalid_argument("oks: scale must be positive");
  double sum = 0;
  int labeled = 0;
  const double s2 = scale * scale;
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected(mask, i) || gt.visibility[i] <= 0) continue;
    const double dx = pred.keypoints[i].x - gt.keypoints[i].x;
    const double dy = pred.keypoints[i].y - gt.keypoints[i].y;
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * k[i] * k[i]));
    ++labeled;
  }
  if (labeled == 0) throw std::domain_error("oks: no labeled keypoints in the evaluated subset");
  return sum / labeled;
}

double oks(const PoseResult& pred, const PoseResult& gt, const OksParams& params, const std::vector<bool>& mask) {
  return oks(pred, gt, params.k, std::sqrt(gt.area), mask);
}

namespace {

int best_column(const std::vector<double>& row, const std::vector<bool>& taken, double threshold) {
  int best = -1;
  double best_oks = threshold;
  for (std::size_t g = 0; g < row.size(); ++g) {
    if (taken[g] || row[g] < threshold) continue;
    if (best < 0 || row[g] > best_oks) {
      best = static_cast<int>(g);
      best_oks = row[g];
    }
  }
  return best;
}

// COCO's measure against a ground truth without labeled joints: distance of
// each predicted joint outside the box grown by one box size on every side.
double oks_outside_box(const PoseResult& pred, const Box& box, std::span<const double> k, double area,
                       const std::vector<bool>& mask) {
  const double x0 = box.x - box.w, x1 = box.x + 2 * box.w;
  const double y0 = box.y - box.h, y1 = box.y + 2 * box.h;
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < pred.keypoints.size(); ++i) {
    if (!selected(mask, i)) continue;
    const Point2 p = pred.keypoints[i];
    const double dx = std::max(0.0, x0 - p.x) + std::max(0.0, p.x - x1);
    const double dy = std::max(0.0, y0 - p.y) + std::max(0.0, p.y - y1);
    sum += std::exp(-(dx * dx + dy * dy) / (k[i] * k[i] * area * 2.0));
    ++n;
  }
  return n ? sum / n : 0.0;
}

}  // namespace

std::vector<int> greedy_match(const std::vector<std::vector<double>>& table, double threshold) {
  std::vector<int> match(table.size(), -1);
  if (table.empty()) return match;
  std::vector<bool> taken(table.front().size(), false);
  for (std::size_t d = 0; d < table.size(); ++d) {
    const int best = best_column(table[d], taken, threshold);
    if (best >= 0) {
      match[d] = best;
      taken[static_cast<std::size_t>(best)] = true;
    }
  }
  return match;
}

MapResult map_mar(std::span<const ImageEval> images, const OksParams& params, const std::vector<bool>& mask) {
  struct Prepared {
    std::vector<double> scores;                  // kept detections, descending
    std::vector<std::vector<double>> table;      // detection x counted ground truth
    std::vector<std::vector<double>> ignored;    // detection x ignored ground truth
  };
  std::vector<Prepared> prepared;
  int n_gt = 0;
  int n_det = 0;
  for (const ImageEval& img : images) {
    std::vector<const PoseResult*> gts, ign;
    for (const PoseResult& g : img.ground_truths) {
      bool any = false;
      for (std::size_t i = 0; i < g.visibility.size(); ++i) any = any || (selected(mask, i) && g.visibility[i] > 0);
      if (any)
        gts.push_back(&g);
      else if (g.box && g.area > 0)
        ign.push_back(&g);
    }
    std::vector<std::size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.detections[a].score > img.detections[b].score;
    });
    if (order.size() > static_cast<std::size_t>(params.max_detections)) order.resize(static_cast<std::size_t>(params.max_detections));

    Prepared p;
    for (std::size_t d : order) {
      const PoseResult& det = img.detections[d];
      p.scores.push_back(det.score);
      std::vector<double> row, row_ign;
      for (const PoseResult* g : gts) row.push_back(oks(det, *g, params, mask));
      for (const PoseResult* g : ign) row_ign.push_back(oks_outside_box(det, *g->box, params.k, g->area, mask));
      p.table.push_back(std::move(row));
      p.ignored.push_back(std::move(row_ign));
    }
    n_gt += static_cast<int>(gts.size());
    n_det += static_cast<int>(order.size());
    prepared.push_back(std::move(p));
  }

  MapResult res;
  res.thresholds = params.thresholds;
  res.num_ground_truths = n_gt;
  res.num_detections = n_det;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (double t : params.thresholds) {
    std::vector<std::pair<double, bool>> dets;  // (score, true positive)
    for (const Prepared& p : prepared) {
      if (p.table.empty()) continue;
      std::vector<bool> taken(p.table.front().size(), false), taken_ign(p.ignored.front().size(), false);
      for (std::size_t d = 0; d < p.table.size(); ++d) {
        const int m = best_column(p.table[d], taken, t);
        if (m >= 0) {
          taken[static_cast<std::size_t>(m)] = true;
          dets.emplace_back(p.scores[d], true);
          continue;
        }
        // A detection absorbed by an ignored ground truth is neither a hit nor a false alarm.
        const int mi = best_column(p.ignored[d], taken_ign, t);
        if (mi >= 0)
          taken_ign[static_cast<std::size_t>(mi)] = true;
        else
          dets.emplace_back(p.scores[d], false);
      }
    }
    if (n_gt == 0) {
      res.ap.push_back(nan);
      res.ar.push_back(nan);
      continue;
    }
    std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    long tp = 0, fp = 0;
    for (const auto& [score, is_tp] : dets) {
      (is_tp ? tp : fp) += 1;
      recall.push_back(static_cast<double>(tp) / n_gt);
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    for (std::size_t i = precision.size(); i-- > 1;)
      precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0;
    for (int r = 0; r < params.recall_points; ++r) {
      const double thr = static_cast<double>(r) / (params.recall_points - 1);
      const auto it = std::lower_bound(recall.begin(), recall.end(), thr);
      if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    res.ap.push_back(ap / params.recall_points);
    res.ar.push_back(static_cast<double>(tp) / n_gt);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  res.map = n_gt == 0 ? nan : mean(res.ap);
  res.mar = n_gt == 0 ? nan : mean(res.ar);
  return res;
}

double nme(std::span<const Point2> preds, std::span<const Point2> gts, double normalizer,
           const std::vector<bool>& valid) {
  check_pair(preds, gts, valid, "nme");
  if (!(normalizer > 0)) throw std::invalid_argument("nme: normalizer must be positive");
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!selected(valid, i)) continue;
    sum += dist(preds[i], gts[i]) / normalizer;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("nme: no keypoints");
  return sum / n;
}

double pck(std::span<const Point2> preds, std::span<const Point2> gts, double box_w, double box_h, double sigma,
           const std::vector<bool>& valid) {
  check_pair(preds, gts, valid, "pck");
  const double norm = std::max(box_w, box_h);
  if (!(norm > 0)) throw std::invalid_argument("pck: degenerate box");
  int correct = 0, n = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!selected(valid, i)) continue;
    if (dist(preds[i], gts[i]) / norm <= sigma) ++correct;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("pck: no keypoints");
  return static_cast<double>(correct) / n;
}

double auc(std::span<const Point2> preds, std::span<const Point2> gts, double max_threshold, int intervals,
           const std::vector<bool>& valid) {
  check_pair(preds, gts, valid, "auc");
  if (!(max_threshold > 0)) throw std::invalid_argument("auc: max threshold must be positive");
  if (intervals < 1) throw std::invalid_argument("auc: need at least one interval");
  std::vector<double> errors;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (selected(valid, i)) errors.push_back(dist(preds[i], gts[i]));
  if (errors.empty()) throw std::invalid_argument("auc: no keypoints");
  std::sort(errors.begin(), errors.end());
  // Integer accumulation of the trapezoid so the all-correct / none-correct
  // cases come out exact.
  long long twice = 0;
  for (int s = 0; s <= intervals; ++s) {
    const double thr = max_threshold * s / intervals;
    const long long correct = std::upper_bound(errors.begin(), errors.end(), thr) - errors.begin();
    twice += (s == 0 || s == intervals) ? correct : 2 * correct;
  }
  return static_cast<double>(twice) / (2.0 * intervals * static_cast<double>(errors.size()));
}

double epe(std::span<const Point2> preds, std::span<const Point2> gts, const std::vector<bool>& valid) {
  check_pair(preds, gts, valid, "epe");
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!selected(valid, i)) continue;
    sum += dist(preds[i], gts[i]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("epe: no keypoints");
  return sum / n;
}

SigmaResult sigmas_from_annotators(std::span<const RepeatedInstance> instances, int num_keypoints) {
  SigmaResult out;
  out.sigma.assign(static_cast<std::size_t>(num_keypoints), std::numeric_limits<double>::quiet_NaN());
  out.samples.assign(static_cast<std::size_t>(num_keypoints), 0);
  std::vector<double> sum_sq(static_cast<std::size_t>(num_keypoints), 0.0);
  for (const RepeatedInstance& inst : instances) {
    if (inst.annotators.size() < 2) throw std::invalid_argument("sigmas_from_annotators: need >= 2 annotators per instance");
    if (!(inst.scale > 0)) throw std::invalid_argument("sigmas_from_annotators: scale must be positive");
    for (const AnnotatorLabel& a : inst.annotators)
      if (static_cast<int>(a.keypoints.size()) != num_keypoints || static_cast<int>(a.labeled.size()) != num_keypoints)
        throw std::invalid_argument("sigmas_from_annotators: inconsistent keypoint layout");
    for (std::size_t k = 0; k < static_cast<std::size_t>(num_keypoints); ++k) {
      Point2 mean{};
      int n = 0;
      for (const AnnotatorLabel& a : inst.annotators) {
        if (!a.labeled[k]) continue;
        mean.x += a.keypoints[k].x;
        mean.y += a.keypoints[k].y;
        ++n;
      }
      if (n < 2) continue;
      mean.x /= n;
      mean.y /= n;
      for (const AnnotatorLabel& a : inst.annotators) {
        if (!a.labeled[k]) continue;
        const double dx = (a.keypoints[k].x - mean.x) / inst.scale;
        const double dy = (a.keypoints[k].y - mean.y) / inst.scale;
        sum_sq[k] += dx * dx + dy * dy;
      }
      out.samples[k] += n;
    }
  }
  for (std::size_t k = 0; k < static_cast<std::size_t>(num_keypoints); ++k) {
    if (out.samples[k] == 0) {
      out.excluded.push_back(static_cast<int>(k));
      continue;
    }
    out.sigma[k] = std::sqrt(sum_sq[k] / out.samples[k]);
  }
  return out;
}

}  // namespace wbnas
