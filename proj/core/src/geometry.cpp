// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "wbnas/rng.hpp"

namespace wbnas {

Point2 HeatmapStack::to_source(Point2 g) const {
  return {origin.x + stride * (g.x + 0.5) - 0.5, origin.y + stride * (g.y + 0.5) - 0.5};
}

Point2 HeatmapStack::to_grid(Point2 s) const {
  return {(s.x - origin.x + 0.5) / stride - 0.5, (s.y - origin.y + 0.5) / stride - 0.5};
}

EncodeResult encode_gaussian(std::span<const Point2> keypoints, const std::vector<bool>& visible, int height, int width,
                             double sigma, double stride, Point2 origin) {
  if (!(sigma > 0)) throw std::invalid_argument("encode_gaussian: sigma must be positive");
  if (visible.size() != keypoints.size()) throw std::invalid_argument("encode_gaussian: visibility size mismatch");
  const int k_count = static_cast<int>(keypoints.size());
  EncodeResult out{HeatmapStack(k_count, height, width, stride, origin), std::vector<bool>(keypoints.size(), false)};
  const double denom = 2.0 * sigma * sigma;
  for (int k = 0; k < k_count; ++k) {
    const Point2 p = keypoints[static_cast<std::size_t>(k)];
    if (!visible[static_cast<std::size_t>(k)]) continue;
    if (!(p.x >= -0.5 && p.x <= width - 0.5 && p.y >= -0.5 && p.y <= height - 0.5)) {
      out.outside[static_cast<std::size_t>(k)] = true;
      continue;
    }
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) {
        const double dy = i - p.y;
        const double dx = j - p.x;
        out.heatmaps.at(k, i, j) = std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  return out;
}

namespace {

std::pair<int, int> argmax_rc(const HeatmapStack& hm, int k) {
  const auto plane = hm.channel(k);
  std::size_t best = 0;
  for (std::size_t idx = 1; idx < plane.size(); ++idx)
    if (plane[idx] > plane[best]) best = idx;
  return {static_cast<int>(best) / hm.width, static_cast<int>(best) % hm.width};
}

}  // namespace

std::vector<DecodedKeypoint> decode_argmax(const HeatmapStack& hm) {
  std::vector<DecodedKeypoint> out;
  for (int k = 0; k < hm.channels; ++k) {
    const auto [r, c] = argmax_rc(hm, k);
    DecodedKeypoint d;
    d.grid = {static_cast<double>(c), static_cast<double>(r)};
    d.source = hm.to_source(d.grid);
    d.confidence = hm.at(k, r, c);
    out.push_back(d);
  }
  return out;
}

std::vector<DecodedKeypoint> decode_quarter_offset(const HeatmapStack& hm) {
  std::vector<DecodedKeypoint> out;
  for (int k = 0; k < hm.channels; ++k) {
    const auto [r, c] = argmax_rc(hm, k);
    double x = c;
    double y = r;
    if (c > 0 && c < hm.width - 1) {
      const double diff = hm.at(k, r, c + 1) - hm.at(k, r, c - 1);
      if (diff > 0) x += 0.25;
      if (diff < 0) x -= 0.25;
    }
    if (r > 0 && r < hm.height - 1) {
      const double diff = hm.at(k, r + 1, c) - hm.at(k, r - 1, c);
      if (diff > 0) y += 0.25;
      if (diff < 0) y -= 0.25;
    }
    DecodedKeypoint d;
    d.grid = {x, y};
    d.source = hm.to_source(d.grid);
    d.confidence = hm.at(k, r, c);
    out.push_back(d);
  }
  return out;
}

BoxKpts keypoints_from_box(const Box& b) {
  return BoxKpts{{Point2{b.x, b.y}, Point2{b.x + b.w, b.y}, Point2{b.x + b.w, b.y + b.h}, Point2{b.x, b.y + b.h},
                  b.center()}};
}

Box box_from_points(std::span<const Point2> pts) {
  if (pts.empty()) return {};
  double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
  for (const Point2& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

Box box_from_keypoints(const BoxKpts& kpts) { return box_from_points(kpts.points); }

Box expand_roi(const Box& box, double ratio) {
  const double grow = ratio - 1.0;
  return {box.x - box.w * grow / 2, box.y - box.h * grow / 2, box.w * ratio, box.h * ratio};
}

BilinearTap bilinear_tap(int in_h, int in_w, double gx, double gy) {
  gx = std::clamp(gx, 0.0, static_cast<double>(in_w - 1));
  gy = std::clamp(gy, 0.0, static_cast<double>(in_h - 1));
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const int x1 = std::min(x0 + 1, in_w - 1);
  const int y1 = std::min(y0 + 1, in_h - 1);
  const double fx = gx - x0;
  const double fy = gy - y0;
  auto flat = [in_w](int y, int x) { return static_cast<std::uint32_t>(y * in_w + x); };
  BilinearTap t;
  t.index = {flat(y0, x0), flat(y0, x1), flat(y1, x0), flat(y1, x1)};
  t.weight = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  return t;
}

std::vector<BilinearTap> roi_align_taps(int in_h, int in_w, double stride, Point2 origin, const Box& box, int out_h,
                                        int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("roi_align: output size must be >= 1");
  if (in_h < 1 || in_w < 1) throw std::invalid_argument("roi_align: empty feature map");
  std::vector<BilinearTap> taps;
  taps.reserve(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) {
    const double sy = box.y + (i + 0.5) * box.h / out_h;
    const double gy = (sy - origin.y + 0.5) / stride - 0.5;
    for (int j = 0; j < out_w; ++j) {
      const double sx = box.x + (j + 0.5) * box.w / out_w;
      const double gx = (sx - origin.x + 0.5) / stride - 0.5;
      taps.push_back(bilinear_tap(in_h, in_w, gx, gy));
    }
  }
  return taps;
}

HeatmapStack roi_align(const HeatmapStack& f, const Box& box, int out_h, int out_w) {
  const auto taps = roi_align_taps(f.height, f.width, f.stride, f.origin, box, out_h, out_w);
  // The crop's own frame: cell (0, 0) center sits at box corner + half a cell.
  HeatmapStack out(f.channels, out_h, out_w, 1.0, {});
  for (int k = 0; k < f.channels; ++k) {
    const auto src = f.channel(k);
    auto dst = out.channel(k);
    for (std::size_t o = 0; o < taps.size(); ++o) {
      double v = 0;
      for (int t = 0; t < 4; ++t) v += taps[o].weight[static_cast<std::size_t>(t)] * src[taps[o].index[static_cast<std::size_t>(t)]];
      dst[o] = v;
    }
  }
  return out;
}

HeatmapStack resize_bilinear(const HeatmapStack& hm, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output size must be >= 1");
  if (out_h == hm.height && out_w == hm.width) return hm;
  HeatmapStack out(hm.channels, out_h, out_w, hm.stride * hm.height / out_h, hm.origin);
  const double sy = static_cast<double>(hm.height) / out_h;
  const double sx = static_cast<double>(hm.width) / out_w;
  std::vector<BilinearTap> taps;
  taps.reserve(out.plane());
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) taps.push_back(bilinear_tap(hm.height, hm.width, (j + 0.5) * sx - 0.5, (i + 0.5) * sy - 0.5));
  for (int k = 0; k < hm.channels; ++k) {
    const auto src = hm.channel(k);
    auto dst = out.channel(k);
    for (std::size_t o = 0; o < taps.size(); ++o) {
      double v = 0;
      for (std::size_t t = 0; t < 4; ++t) v += taps[o].weight[t] * src[taps[o].index[t]];
      dst[o] = v;
    }
  }
  return out;
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  if (det == 0) throw std::invalid_argument("affine transform is singular");
  const double a = m[4] / det, b = -m[1] / det, d = -m[3] / det, e = m[0] / det;
  return AffineTransform{{a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])}};
}

AffineTransform AffineTransform::compose(const AffineTransform& o) const {
  const auto& p = m;
  const auto& q = o.m;
  return AffineTransform{{p[0] * q[0] + p[1] * q[3], p[0] * q[1] + p[1] * q[4], p[0] * q[2] + p[1] * q[5] + p[2],
                          p[3] * q[0] + p[4] * q[3], p[3] * q[1] + p[4] * q[4], p[3] * q[2] + p[4] * q[5] + p[5]}};
}

AffineTransform make_crop_transform(const Box& box, int out_w, int out_h, double scale, double rotation_deg,
                                    bool flip) {
  if (!(box.w > 0 && box.h > 0)) throw std::invalid_argument("augmentation: box has zero area");
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("augmentation: output size must be >= 1");
  if (!(scale > 0)) throw std::invalid_argument("augmentation: scale must be positive");
  const Point2 c = box.center();
  const Point2 co{out_w / 2.0 - 0.5, out_h / 2.0 - 0.5};
  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double sx = out_w / (box.w * scale);
  const double sy = out_h / (box.h * scale);

  const AffineTransform to_center{{1, 0, -c.x, 0, 1, -c.y}};
  const AffineTransform rotate{{cs, sn, 0, -sn, cs, 0}};
  const AffineTransform resize{{sx, 0, 0, 0, sy, 0}};
  const AffineTransform mirror{{flip ? -1.0 : 1.0, 0, 0, 0, 1, 0}};
  const AffineTransform to_out{{1, 0, co.x, 0, 1, co.y}};
  return to_out.compose(mirror.compose(resize.compose(rotate.compose(to_center))));
}

AffineTransform make_augmentation_transform(const Box& box, int out_w, int out_h, const AugmentationParams& params,
                                            std::uint64_t seed) {
  Rng rng(seed);
  const double scale = rng.uniform(1.0 - params.scale_jitter, 1.0 + params.scale_jitter);
  const double rotation = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg);
  const bool flip = rng.bernoulli(params.flip_probability);
  return make_crop_transform(box, out_w, out_h, scale, rotation, flip);
}

}  // namespace wbnas
