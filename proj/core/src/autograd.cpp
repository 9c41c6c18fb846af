// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/autograd.hpp"

#include <algorithm>
#include <stdexcept>

namespace wbnas {

Var Tape::push(Tensor value, std::function<void(Tape&, Node&)> back) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_of(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.v.empty()) n.grad = Tensor(n.value.c, n.value.h, n.value.w);
  return n.grad;
}

Var Tape::constant(Tensor t) { return push(std::move(t), nullptr); }

Var Tape::conv2d(Var xv, Parameter& weight, Parameter* bias, const ConvSlice& s) {
  const Tensor& x = value(xv);
  if (weight.shape.size() != 4 || weight.shape[2] != s.kernel || weight.shape[3] != s.kernel)
    throw std::invalid_argument("conv2d: kernel does not match weight " + weight.name);
  const int max_out = weight.shape[0];
  const int max_in = weight.shape[1];
  if (s.in_channels != x.c) throw std::invalid_argument("conv2d: input has " + std::to_string(x.c) + " channels, slice expects " + std::to_string(s.in_channels) + " (" + weight.name + ")");
  if (s.out_channels > max_out || s.in_channels > max_in)
    throw std::invalid_argument("conv2d: slice exceeds weight " + weight.name);
  if (s.groups < 1 || s.in_channels % s.groups || s.out_channels % s.groups)
    throw std::invalid_argument("conv2d: groups must divide channel counts (" + weight.name + ")");
  const int k = s.kernel;
  const int pad = k / 2;
  const int ho = (x.h + 2 * pad - k) / s.stride + 1;
  const int wo = (x.w + 2 * pad - k) / s.stride + 1;
  const int ipg = s.in_channels / s.groups;
  const int opg = s.out_channels / s.groups;
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  auto widx = [=](int o, int i) { return (static_cast<std::size_t>(o) * max_in + i) * kk; };

  Tensor y(s.out_channels, ho, wo);
  for (int o = 0; o < s.out_channels; ++o) {
    const int g = o / opg;
    double* yo = y.v.data() + static_cast<std::size_t>(o) * y.plane();
    if (bias) std::fill(yo, yo + y.plane(), bias->value[static_cast<std::size_t>(o)]);
    for (int i = g * ipg; i < (g + 1) * ipg; ++i) {
      const double* xi = x.v.data() + static_cast<std::size_t>(i) * x.plane();
      const double* wk = weight.value.data() + widx(o, i);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride - pad + kx;
              if (ix < 0 || ix >= x.w) continue;
              yo[oy * wo + ox] += wv * xi[iy * x.w + ix];
            }
          }
        }
      }
    }
  }
  macs_[static_cast<std::size_t>(slot_)] += kk * static_cast<std::uint64_t>(ipg) *
                                            static_cast<std::uint64_t>(s.out_channels) *
                                            static_cast<std::uint64_t>(ho) * static_cast<std::uint64_t>(wo);

  const int xid = xv.id;
  return push(std::move(y), [=, &weight](Tape& t, Node& self) {
    const Tensor& xin = t.nodes_[static_cast<std::size_t>(xid)].value;
    Tensor& dx = t.grad_of(xid);
    const Tensor& dy = self.grad;
    for (int o = 0; o < s.out_channels; ++o) {
      const int g = o / opg;
      const double* dyo = dy.v.data() + static_cast<std::size_t>(o) * dy.plane();
      if (bias) {
        double acc = 0;
        for (std::size_t p = 0; p < dy.plane(); ++p) acc += dyo[p];
        bias->grad[static_cast<std::size_t>(o)] += acc;
      }
      for (int i = g * ipg; i < (g + 1) * ipg; ++i) {
        const double* xi = xin.v.data() + static_cast<std::size_t>(i) * xin.plane();
        double* dxi = dx.v.data() + static_cast<std::size_t>(i) * dx.plane();
        const double* wk = weight.value.data() + widx(o, i);
        double* dwk = weight.grad.data() + widx(o, i);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wk[ky * k + kx];
            double dw = 0;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * s.stride - pad + ky;
              if (iy < 0 || iy >= xin.h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * s.stride - pad + kx;
                if (ix < 0 || ix >= xin.w) continue;
                const double d = dyo[oy * wo + ox];
                dw += d * xi[iy * xin.w + ix];
                dxi[iy * xin.w + ix] += wv * d;
              }
            }
            dwk[ky * k + kx] += dw;
          }
        }
      }
    }
  });
}

Var Tape::relu(Var xv) {
  Tensor y = value(xv);
  for (double& a : y.v) a = a > 0 ? a : 0.0;
  const int xid = xv.id;
  return push(std::move(y), [xid](Tape& t, Node& self) {
    Tensor& dx = t.grad_of(xid);
    for (std::size_t p = 0; p < dx.v.size(); ++p)
      if (self.value.v[p] > 0) dx.v[p] += self.grad.v[p];
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.c != tb.c || ta.h != tb.h || ta.w != tb.w) throw std::invalid_argument("add: shape mismatch");
  Tensor y = ta;
  for (std::size_t p = 0; p < y.v.size(); ++p) y.v[p] += tb.v[p];
  const int ia = a.id, ib = b.id;
  return push(std::move(y), [ia, ib](Tape& t, Node& self) {
    for (int id : {ia, ib}) {
      Tensor& d = t.grad_of(id);
      for (std::size_t p = 0; p < d.v.size(); ++p) d.v[p] += self.grad.v[p];
    }
  });
}

Var Tape::scale(Var xv, double a) {
  Tensor y = value(xv);
  for (double& e : y.v) e *= a;
  const int xid = xv.id;
  return push(std::move(y), [xid, a](Tape& t, Node& self) {
    Tensor& d = t.grad_of(xid);
    for (std::size_t p = 0; p < d.v.size(); ++p) d.v[p] += a * self.grad.v[p];
  });
}

namespace {

Tensor apply_taps(const Tensor& x, const std::vector<BilinearTap>& taps, int out_h, int out_w) {
  Tensor y(x.c, out_h, out_w);
  for (int c = 0; c < x.c; ++c) {
    const double* src = x.v.data() + static_cast<std::size_t>(c) * x.plane();
    double* dst = y.v.data() + static_cast<std::size_t>(c) * y.plane();
    for (std::size_t o = 0; o < taps.size(); ++o) {
      double v = 0;
      for (std::size_t t = 0; t < 4; ++t) v += taps[o].weight[t] * src[taps[o].index[t]];
      dst[o] = v;
    }
  }
  return y;
}

void scatter_taps(Tensor& dx, const Tensor& dy, const std::vector<BilinearTap>& taps) {
  for (int c = 0; c < dx.c; ++c) {
    double* dst = dx.v.data() + static_cast<std::size_t>(c) * dx.plane();
    const double* src = dy.v.data() + static_cast<std::size_t>(c) * dy.plane();
    for (std::size_t o = 0; o < taps.size(); ++o)
      for (std::size_t t = 0; t < 4; ++t) dst[taps[o].index[t]] += taps[o].weight[t] * src[o];
  }
}

}  // namespace

Var Tape::resize(Var xv, int out_h, int out_w) {
  const Tensor& x = value(xv);
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output size must be >= 1");
  std::vector<BilinearTap> taps;
  taps.reserve(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
  const double sy = static_cast<double>(x.h) / out_h;
  const double sx = static_cast<double>(x.w) / out_w;
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) taps.push_back(bilinear_tap(x.h, x.w, (j + 0.5) * sx - 0.5, (i + 0.5) * sy - 0.5));
  Tensor y = (out_h == x.h && out_w == x.w) ? x : apply_taps(x, taps, out_h, out_w);
  const int xid = xv.id;
  return push(std::move(y), [xid, taps = std::move(taps)](Tape& t, Node& self) {
    scatter_taps(t.grad_of(xid), self.grad, taps);
  });
}

Var Tape::roi_align(Var xv, double stride, Point2 origin, const Box& box, int out_h, int out_w) {
  const Tensor& x = value(xv);
  auto taps = roi_align_taps(x.h, x.w, stride, origin, box, out_h, out_w);
  Tensor y = apply_taps(x, taps, out_h, out_w);
  const int xid = xv.id;
  return push(std::move(y), [xid, taps = std::move(taps)](Tape& t, Node& self) {
    scatter_taps(t.grad_of(xid), self.grad, taps);
  });
}

Var Tape::mse(Var pv, const Tensor& target, const std::vector<bool>& mask) {
  const Tensor& pred = value(pv);
  if (pred.c != target.c || pred.h != target.h || pred.w != target.w)
    throw std::invalid_argument("mse: prediction and target shapes differ");
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(pred.c))
    throw std::invalid_argument("mse: mask size mismatch");
  int kept = 0;
  for (int k = 0; k < pred.c; ++k) kept += mask.empty() || mask[static_cast<std::size_t>(k)];
  const double norm = kept == 0 ? 0.0 : 1.0 / (static_cast<double>(kept) * static_cast<double>(pred.plane()));
  double loss = 0;
  for (int k = 0; k < pred.c; ++k) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(k)]) continue;
    for (std::size_t p = 0; p < pred.plane(); ++p) {
      const std::size_t idx = static_cast<std::size_t>(k) * pred.plane() + p;
      const double d = pred.v[idx] - target.v[idx];
      loss += d * d;
    }
  }
  Tensor y(1, 1, 1, loss * norm);
  const int pid = pv.id;
  return push(std::move(y), [pid, target, mask, norm](Tape& t, Node& self) {
    const Tensor& p = t.nodes_[static_cast<std::size_t>(pid)].value;
    Tensor& d = t.grad_of(pid);
    const double g = self.grad.v[0] * 2.0 * norm;
    for (int k = 0; k < p.c; ++k) {
      if (!mask.empty() && !mask[static_cast<std::size_t>(k)]) continue;
      for (std::size_t q = 0; q < p.plane(); ++q) {
        const std::size_t idx = static_cast<std::size_t>(k) * p.plane() + q;
        d.v[idx] += g * (p.v[idx] - target.v[idx]);
      }
    }
  });
}

Var Tape::sum(std::span<const Var> scalars) {
  double s = 0;
  std::vector<int> ids;
  for (Var v : scalars) {
    const Tensor& t = value(v);
    if (t.size() != 1) throw std::invalid_argument("sum: expects scalar nodes");
    s += t.v[0];
    ids.push_back(v.id);
  }
  return push(Tensor(1, 1, 1, s), [ids](Tape& t, Node& self) {
    for (int id : ids) t.grad_of(id).v[0] += self.grad.v[0];
  });
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be a scalar node");
  grad_of(loss.id).v[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.back && !n.grad.v.empty()) n.back(*this, n);
  }
}

}  // namespace wbnas
