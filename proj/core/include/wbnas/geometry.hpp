// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace wbnas {

// Coordinate convention (used everywhere in this library): pixel centers sit
// at integer coordinates, so pixel (i, j) covers [j - 0.5, j + 0.5] x
// [i - 0.5, i + 0.5] and a W x H grid spans [-0.5, W - 0.5] x [-0.5, H - 0.5].
// A grid with stride s and origin o relates to its source frame by
//   source = o + s * (grid + 0.5) - 0.5.

struct Point2 {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// K x H x W stack of non-negative confidences.
struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  double stride = 1.0;
  Point2 origin;  // source-frame offset of the grid
  std::vector<double> values;

  HeatmapStack() = default;
  HeatmapStack(int k, int h, int w, double stride_ = 1.0, Point2 origin_ = {})
      : channels(k), height(h), width(w), stride(stride_), origin(origin_),
        values(static_cast<std::size_t>(k) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0) {}

  double& at(int k, int i, int j) { return values[index(k, i, j)]; }
  double at(int k, int i, int j) const { return values[index(k, i, j)]; }
  std::size_t index(int k, int i, int j) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(height) + static_cast<std::size_t>(i)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(j);
  }
  std::span<double> channel(int k) {
    return {values.data() + static_cast<std::size_t>(k) * plane(), plane()};
  }
  std::span<const double> channel(int k) const {
    return {values.data() + static_cast<std::size_t>(k) * plane(), plane()};
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  Point2 to_source(Point2 grid) const;
  Point2 to_grid(Point2 source) const;
};

struct Box {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  Point2 center() const { return {x + w / 2, y + h / 2}; }
  double area() const { return w * h; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Corners (top-left, top-right, bottom-right, bottom-left) then center.
struct BoxKpts {
  std::array<Point2, 5> points;
  friend bool operator==(const BoxKpts&, const BoxKpts&) = default;
};

struct EncodeResult {
  HeatmapStack heatmaps;
  std::vector<bool> outside;  // keypoint fell outside the grid; its channel is zero
};

/// Amplitude-1 Gaussian per visible keypoint. Keypoints are in grid coordinates
/// of the output stack.
EncodeResult encode_gaussian(std::span<const Point2> keypoints, const std::vector<bool>& visible, int height, int width,
                             double sigma, double stride = 1.0, Point2 origin = {});

struct DecodedKeypoint {
  Point2 grid;    // location in heatmap coordinates
  Point2 source;  // mapped through stride / origin
  double confidence = 0;
};

/// Argmax (lowest row-major index on ties) shifted 0.25 px per axis toward the
/// larger of the two axis neighbors; no shift when they are equal or when the
/// peak sits on the border of that axis.
std::vector<DecodedKeypoint> decode_quarter_offset(const HeatmapStack& hm);
/// Plain argmax, same tie rule.
std::vector<DecodedKeypoint> decode_argmax(const HeatmapStack& hm);

BoxKpts keypoints_from_box(const Box& box);
/// Axis-aligned bounding rectangle of all five points.
Box box_from_keypoints(const BoxKpts& kpts);
Box box_from_points(std::span<const Point2> pts);

/// Scales width and height by `ratio` about the center. No clamping.
Box expand_roi(const Box& box, double ratio);

/// Bilinear RoIAlign with one sample at each output cell center. `box` is in
/// the features' source frame; samples outside the map clamp to the border.
HeatmapStack roi_align(const HeatmapStack& features, const Box& box, int out_h, int out_w);

/// Sampling taps behind roi_align: for each output cell, four (flat input
/// index within a channel, weight) pairs. Shared by the supernet's backward pass.
struct BilinearTap {
  std::array<std::uint32_t, 4> index{};
  std::array<double, 4> weight{};
};
std::vector<BilinearTap> roi_align_taps(int in_h, int in_w, double stride, Point2 origin, const Box& box, int out_h,
                                        int out_w);
/// Bilinear tap at a grid location, clamped to the border.
BilinearTap bilinear_tap(int in_h, int in_w, double gx, double gy);

/// 2x3 matrix [a b c; d e f] mapping (x, y) -> (a x + b y + c, d x + e y + f).
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point2 apply(Point2 p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }
  double determinant() const { return m[0] * m[4] - m[1] * m[3]; }
  AffineTransform inverse() const;
  /// this o other (apply other first).
  AffineTransform compose(const AffineTransform& other) const;
};

struct AugmentationParams {
  double scale_jitter = 0.5;        // scale factor drawn from [1 - j, 1 + j]
  double max_rotation_deg = 40.0;   // rotation drawn from [-r, r]
  double flip_probability = 0.5;
};

/// Crop -> scale -> rotate -> optional horizontal flip -> resize to out size,
/// with explicit parameters. `scale` > 1 zooms out (a larger source region).
/// Positive rotation turns the box's right-middle point toward the output top.
/// Throws std::invalid_argument for a zero-area box.
AffineTransform make_crop_transform(const Box& box, int out_w, int out_h, double scale, double rotation_deg,
                                    bool flip);

/// Same composition with parameters drawn deterministically from `seed`.
AffineTransform make_augmentation_transform(const Box& box, int out_w, int out_h, const AugmentationParams& params,
                                            std::uint64_t seed);

/// Bilinear resize that keeps the pixel-center convention (half-pixel aligned).
/// Same-size resize is an exact copy. Values are not renormalized.
HeatmapStack resize_bilinear(const HeatmapStack& hm, int out_h, int out_w);

}  // namespace wbnas
