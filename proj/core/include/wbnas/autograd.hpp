// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wbnas/geometry.hpp"

namespace wbnas {

/// Dense C x H x W array of doubles.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t size() const { return v.size(); }
  double& at(int k, int i, int j) { return v[(static_cast<std::size_t>(k) * h + i) * w + j]; }
  double at(int k, int i, int j) const { return v[(static_cast<std::size_t>(k) * h + i) * w + j]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Trainable array with a gradient buffer of the same size.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Active slice of an elastic convolution. Weights are laid out
/// [max_out][max_in][k][k]; the slice uses output channels [0, out_channels)
/// and input channels [0, in_channels), split into `groups` block-diagonal
/// groups on the active counts. Padding is k / 2.
struct ConvSlice {
  int kernel = 3;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  int groups = 1;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const;
};

/// Reverse-mode recorder. Nodes are appended in evaluation order and
/// backward() walks them in reverse. Parameter gradients accumulate.
class Tape {
 public:
  Var constant(Tensor t);

  /// Elastic convolution with optional bias, both sliced per `slice`.
  Var conv2d(Var x, Parameter& weight, Parameter* bias, const ConvSlice& slice);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var scale(Var x, double a);
  /// Half-pixel aligned bilinear resize (identity when the size is unchanged).
  Var resize(Var x, int out_h, int out_w);
  /// RoIAlign on a map whose grid relates to its source frame by (stride, origin).
  Var roi_align(Var x, double stride, Point2 origin, const Box& box, int out_h, int out_w);
  /// Mean squared error over unmasked channels, as a 1 x 1 x 1 tensor. An
  /// empty mask keeps every channel; if none are kept the loss is 0.
  Var mse(Var pred, const Tensor& target, const std::vector<bool>& mask);
  Var sum(std::span<const Var> scalars);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node and parameter.
  void backward(Var loss);
  const Tensor& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }
  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

  /// MACs of every conv recorded so far, per counter slot.
  std::uint64_t macs(int slot) const { return macs_.at(static_cast<std::size_t>(slot)); }
  void set_mac_slot(int slot) { slot_ = slot; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Node&)> back;
  };
  Var push(Tensor value, std::function<void(Tape&, Node&)> back);
  Tensor& grad_of(int id);

  std::vector<Node> nodes_;
  std::array<std::uint64_t, 4> macs_{};
  int slot_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace wbnas
