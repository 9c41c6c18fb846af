// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "wbnas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "wbnas/rng.hpp"

namespace wbnas {

HeadLayout toy_head_layout() { return HeadLayout{3, 5, 3, 3, 2}; }

namespace {

int out_channels_of(const StageSpace& ss, int channel) {
  return ss.op == OperatorKind::Bottleneck ? channel * kBottleneckExpansion : channel;
}

int log2_int(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

// Seed streams of a training run.
constexpr std::uint64_t kDataStream = 0xDA7A;
constexpr std::uint64_t kStepStream = 0x5A4D;

constexpr double kResidualInitScale = 0.1;

}  // namespace

int max_feature_channels(const SearchSpace& space) {
  int best = 0;
  for (ModuleKind head : {ModuleKind::FaceHead, ModuleKind::HandHead}) {
    const auto& conn = space.module(head).connection;
    if (!conn) continue;
    for (int fs : conn->feature_stages)
      for (const StageSpace& ss : space.bodynet.stages)
        if (ss.stage_index == fs) best = std::max(best, out_channels_of(ss, ss.branches.front().channel.end));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Construction

Supernet::Supernet(SearchSpace space, HeadLayout layout, std::uint64_t init_seed)
    : space_(std::move(space)), layout_(layout) {
  if (auto problems = check_space(space_); !problems.empty())
    throw std::invalid_argument("supernet: bad search space: " + problems.front());
  Rng rng(init_seed);
  body_ = build_module(space_.bodynet, layout_.image_channels, layout_.body_outputs);
  face_ = build_module(space_.facehead, max_feature_channels(space_), layout_.face_outputs);
  hand_ = build_module(space_.handhead, max_feature_channels(space_), layout_.hand_outputs);
  // Weights are drawn after the layout is fixed so the draw order is the
  // parameter order.
  for (Parameter& p : params_) {
    if (p.shape.size() == 4) {
      const double fan_in = static_cast<double>(p.shape[1]) * p.shape[2] * p.shape[3];
      // He init for hidden convs, unit gain on outputs; residual tails and
      // fusion paths start small since nothing normalizes the sums.
      double std = std::sqrt(2.0 / fan_in);
      if (p.name.find(".out") != std::string::npos) std = std::sqrt(1.0 / fan_in);
      if (p.name.find(".fuse") != std::string::npos || p.name.ends_with("conv3.weight") ||
          (p.name.ends_with("conv2.weight") && p.shape[2] == 3 && p.name.find("stage1") == std::string::npos))
        std *= kResidualInitScale;
      for (double& v : p.value) v = std * rng.normal();
    }
  }
}

Supernet::Conv Supernet::make_conv(const std::string& name, int kernel, int in, int out, bool bias) {
  Conv c;
  Parameter w;
  w.name = name + ".weight";
  w.shape = {out, in, kernel, kernel};
  w.value.assign(static_cast<std::size_t>(out) * in * kernel * kernel, 0.0);
  w.grad.assign(w.value.size(), 0.0);
  c.weight = static_cast<int>(params_.size());
  params_.push_back(std::move(w));
  if (bias) {
    Parameter b;
    b.name = name + ".bias";
    b.shape = {out};
    b.value.assign(static_cast<std::size_t>(out), 0.0);
    b.grad.assign(b.value.size(), 0.0);
    c.bias = static_cast<int>(params_.size());
    params_.push_back(std::move(b));
  }
  return c;
}

Supernet::Module Supernet::build_module(const ModuleSpace& ms, int in_channels, int out_channels) {
  Module mod;
  const std::string mname(to_string(ms.kind));
  std::vector<int> prev{in_channels};
  for (const StageSpace& ss : ms.stages) {
    Stage st;
    const std::string sname = mname + ".stage" + std::to_string(ss.stage_index);
    if (ss.op == OperatorKind::PlainConv) {
      const int c = ss.branches.front().channel.end;
      for (int l = 0; l < ss.depth.end; ++l)
        st.layers.push_back(make_conv(sname + ".layer" + std::to_string(l), 3, l == 0 ? prev.front() : c, c, true));
      prev = {c};
      mod.stages.push_back(std::move(st));
      continue;
    }
    std::vector<int> chans;
    for (const BranchSpace& bs : ss.branches) chans.push_back(out_channels_of(ss, bs.channel.end));
    st.blocks.resize(chans.size());
    for (std::size_t b = 0; b < chans.size(); ++b) {
      const std::string bname = sname + ".branch" + std::to_string(b + 1);
      const int cmax = ss.branches[b].channel.end;
      if (ss.op == OperatorKind::BasicBlock) {
        const int src = b < prev.size() ? prev[b] : prev.back();
        st.transition.push_back(make_conv(bname + ".transition", 3, src, chans[b], true));
      }
      for (int d = 0; d < ss.depth.end; ++d) {
        const std::string kname = bname + ".block" + std::to_string(d);
        Block blk;
        if (ss.op == OperatorKind::Bottleneck) {
          const int in = d == 0 ? prev.front() : chans[b];
          blk.c1 = make_conv(kname + ".conv1", 1, in, cmax, true);
          blk.c2 = make_conv(kname + ".conv2", 3, cmax, cmax, true);
          blk.c3 = make_conv(kname + ".conv3", 1, cmax, chans[b], true);
          if (d == 0) blk.proj = make_conv(kname + ".proj", 1, in, chans[b], true);
        } else {
          blk.c1 = make_conv(kname + ".conv1", 3, cmax, cmax, true);
          blk.c2 = make_conv(kname + ".conv2", 3, cmax, cmax, true);
        }
        st.blocks[b].push_back(blk);
      }
    }
    if (chans.size() > 1) {
      const int modules = (ss.depth.end + kBlocksPerModule - 1) / kBlocksPerModule;
      st.fusion.resize(static_cast<std::size_t>(modules));
      for (int m = 0; m < modules; ++m) {
        auto& fm = st.fusion[static_cast<std::size_t>(m)];
        fm.assign(chans.size(), std::vector<std::vector<Conv>>(chans.size()));
        for (std::size_t j = 0; j < chans.size(); ++j) {
          for (std::size_t i = 0; i < chans.size(); ++i) {
            if (i == j) continue;
            const std::string fname =
                sname + ".fuse" + std::to_string(m) + "." + std::to_string(i + 1) + "to" + std::to_string(j + 1);
            if (i > j) {
              fm[j][i].push_back(make_conv(fname, 1, chans[i], chans[j], true));
            } else {
              for (std::size_t k = i + 1; k <= j; ++k)
                fm[j][i].push_back(make_conv(fname + ".down" + std::to_string(k - i), 3, chans[i],
                                             k == j ? chans[j] : chans[i], true));
            }
          }
        }
      }
    }
    prev = chans;
    mod.stages.push_back(std::move(st));
  }
  if (ms.kind == ModuleKind::BodyNet) {
    mod.output.push_back(make_conv(mname + ".out", 1, prev.front(), out_channels, true));
  } else {
    for (std::size_t b = 0; b < prev.size(); ++b)
      mod.output.push_back(make_conv(mname + ".out.branch" + std::to_string(b + 1), 1, prev[b], out_channels, b == 0));
  }
  return mod;
}

Parameter& Supernet::parameter(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + name + "'");
}

void Supernet::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

void Supernet::apply_gradients(double lr) {
  for (Parameter& p : params_)
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
}

// ---------------------------------------------------------------------------
// Forward

Var Supernet::conv(Tape& tape, Var x, const Conv& c, int kernel, int stride, int out, int groups) {
  ConvSlice s{kernel, stride, x.value().c, out, groups};
  return tape.conv2d(x, params_[static_cast<std::size_t>(c.weight)],
                     c.bias >= 0 ? &params_[static_cast<std::size_t>(c.bias)] : nullptr, s);
}

std::vector<Var> Supernet::run_module(Tape& tape, const ModuleSpace& ms, const Module& mod,
                                      const ModuleChoice& choice, Var input, std::vector<Var>* stage_features) {
  std::vector<Var> prev{input};
  for (std::size_t si = 0; si < ms.stages.size(); ++si) {
    const StageSpace& ss = ms.stages[si];
    const StageChoice& sc = choice.stages.at(si);
    const Stage& st = mod.stages[si];

    if (ss.op == OperatorKind::PlainConv) {
      const BranchChoice& bc = sc.branches.at(0);
      const int strided = log2_int(ss.branches.front().resolution_divisor);
      Var x = prev.front();
      for (int l = 0; l < sc.depth; ++l)
        x = tape.relu(conv(tape, x, st.layers[static_cast<std::size_t>(l)], 3, l < strided ? 2 : 1, bc.channel, bc.groups));
      prev = {x};
      if (stage_features) stage_features->push_back(x);
      continue;
    }

    const std::size_t nb = ss.branches.size();
    std::vector<int> chans;
    for (std::size_t b = 0; b < nb; ++b) chans.push_back(out_channels_of(ss, sc.branches[b].channel));

    std::vector<Var> xs(nb);
    if (ss.op == OperatorKind::Bottleneck) {
      xs[0] = prev.front();
    } else {
      for (std::size_t b = 0; b < nb; ++b) {
        if (b < prev.size())
          xs[b] = tape.relu(conv(tape, prev[b], st.transition[b], 3, 1, chans[b]));
        else
          xs[b] = tape.relu(conv(tape, prev.back(), st.transition[b], 3, 2, chans[b]));
      }
    }

    for (int d = 0; d < sc.depth; ++d) {
      for (std::size_t b = 0; b < nb; ++b) {
        const Block& blk = st.blocks[b][static_cast<std::size_t>(d)];
        const int c = sc.branches[b].channel;
        const int g = sc.branches[b].groups;
        Var x = xs[b];
        Var h;
        Var res = x;
        if (ss.op == OperatorKind::Bottleneck) {
          h = tape.relu(conv(tape, x, blk.c1, 1, 1, c));
          h = tape.relu(conv(tape, h, blk.c2, 3, 1, c, g));
          h = conv(tape, h, blk.c3, 1, 1, chans[b]);
          if (x.value().c != chans[b]) res = conv(tape, x, blk.proj, 1, 1, chans[b]);
        } else {
          if (x.value().c != c) throw std::logic_error("basic block input width differs from its branch");
          h = tape.relu(conv(tape, x, blk.c1, 3, 1, c, g));
          h = conv(tape, h, blk.c2, 3, 1, c, g);
        }
        xs[b] = tape.relu(tape.add(h, res));
      }
      const bool module_end = (d + 1) % kBlocksPerModule == 0 || d + 1 == sc.depth;
      if (nb > 1 && module_end) {
        const auto& fm = st.fusion[static_cast<std::size_t>(d / kBlocksPerModule)];
        std::vector<Var> fused(nb);
        for (std::size_t j = 0; j < nb; ++j) {
          Var acc = xs[j];
          for (std::size_t i = 0; i < nb; ++i) {
            if (i == j) continue;
            Var y = xs[i];
            if (i > j) {
              y = conv(tape, y, fm[j][i][0], 1, 1, chans[j]);
              y = tape.resize(y, xs[j].value().h, xs[j].value().w);
            } else {
              for (std::size_t k = i + 1; k <= j; ++k) {
                y = conv(tape, y, fm[j][i][k - i - 1], 3, 2, k == j ? chans[j] : chans[i]);
                if (k != j) y = tape.relu(y);
              }
            }
            acc = tape.add(acc, y);
          }
          fused[j] = tape.relu(acc);
        }
        xs = std::move(fused);
      }
    }
    prev = xs;
    if (stage_features) stage_features->push_back(xs.front());
  }
  return prev;
}

Var Supernet::run_output(Tape& tape, const ModuleSpace& ms, const Module& mod, const ModuleChoice&,
                         const std::vector<Var>& branches, int out_channels) {
  if (ms.kind == ModuleKind::BodyNet) return conv(tape, branches.front(), mod.output.front(), 1, 1, out_channels);
  const int h = branches.front().value().h;
  const int w = branches.front().value().w;
  Var acc = conv(tape, branches.front(), mod.output.front(), 1, 1, out_channels);
  for (std::size_t b = 1; b < branches.size(); ++b) {
    Var up = tape.resize(branches[b], h, w);
    acc = tape.add(acc, conv(tape, up, mod.output[b], 1, 1, out_channels));
  }
  return acc;
}

SubnetOutputs Supernet::forward(Tape& tape, const SubNetworkSpec& spec, const SupernetInput& input) {
  if (auto v = validate(spec, space_); !v.empty())
    throw std::invalid_argument("forward: invalid spec: " + v.front().path + ": " + v.front().message);
  const int H = spec.bodynet.height;
  const int W = space_.bodynet.width_for(H);
  if (input.image.c != layout_.image_channels || input.image.h != H || input.image.w != W)
    throw std::invalid_argument("forward: image is " + std::to_string(input.image.c) + "x" +
                                std::to_string(input.image.h) + "x" + std::to_string(input.image.w) +
                                ", sub-network expects " + std::to_string(layout_.image_channels) + "x" +
                                std::to_string(H) + "x" + std::to_string(W));
  SubnetOutputs out;
  tape.set_mac_slot(0);
  std::vector<Var> features;
  const Var image = tape.constant(input.image);
  const auto body = run_module(tape, space_.bodynet, body_, spec.bodynet, image, &features);
  out.body = run_output(tape, space_.bodynet, body_, spec.bodynet, body, layout_.body_outputs);

  auto head = [&](const ModuleSpace& ms, const Module& mod, const ModuleChoice& mc, const Box& box, Box& crop,
                  int outputs) {
    const Connection& conn = *mc.connection;
    std::size_t pos = 0;
    while (space_.bodynet.stages[pos].stage_index != conn.feature_stage) ++pos;
    const Var feat = features.at(pos);
    const double stride = static_cast<double>(H) / feat.value().h;
    crop = expand_roi(box, conn.roi_expansion());
    const Var x = tape.roi_align(feat, stride, Point2{}, crop, mc.height, ms.width_for(mc.height));
    const auto br = run_module(tape, ms, mod, mc, x, nullptr);
    return run_output(tape, ms, mod, mc, br, outputs);
  };
  tape.set_mac_slot(1);
  out.face = head(space_.facehead, face_, spec.facehead, input.face_box, out.face_crop, layout_.face_outputs);
  tape.set_mac_slot(2);
  out.left_hand = head(space_.handhead, hand_, spec.handhead, input.left_hand_box, out.left_hand_crop,
                       layout_.hand_outputs);
  out.right_hand = head(space_.handhead, hand_, spec.handhead, input.right_hand_box, out.right_hand_crop,
                        layout_.hand_outputs);
  tape.set_mac_slot(0);
  return out;
}

// ---------------------------------------------------------------------------
// Losses

double mse_loss(const HeatmapStack& pred, const HeatmapStack& target, const std::vector<bool>& mask) {
  if (pred.channels != target.channels || pred.height != target.height || pred.width != target.width)
    throw std::invalid_argument("mse_loss: prediction and target shapes differ");
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(pred.channels))
    throw std::invalid_argument("mse_loss: mask size mismatch");
  double sum = 0;
  int kept = 0;
  for (int k = 0; k < pred.channels; ++k) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(k)]) continue;
    ++kept;
    const auto p = pred.channel(k);
    const auto t = target.channel(k);
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] - t[i]) * (p[i] - t[i]);
  }
  if (kept == 0) return 0.0;
  return sum / (static_cast<double>(kept) * static_cast<double>(pred.plane()));
}

HeatmapStack distill_targets(const HeatmapStack& teacher, int student_h, int student_w) {
  return resize_bilinear(teacher, student_h, student_w);
}

// ---------------------------------------------------------------------------
// Synthetic task

TrainBatch make_synthetic_task(std::uint64_t seed, int n_samples, const SyntheticTaskConfig& cfg) {
  if (n_samples < 0) throw std::invalid_argument("make_synthetic_task: negative sample count");
  const int ho = cfg.ref_height / cfg.output_stride;
  const int wo = cfg.ref_width / cfg.output_stride;
  if (ho < 3 || wo < 3) throw std::invalid_argument("make_synthetic_task: reference frame too small");
  Rng rng(seed);
  TrainBatch batch;
  batch.config = cfg;
  auto labeled = [&](int n) {
    std::vector<bool> v;
    for (int i = 0; i < n; ++i) v.push_back(!rng.bernoulli(cfg.unlabeled_probability));
    return v;
  };
  auto square = [&](double lo, double hi) {
    const double s = rng.uniform(lo, hi);
    return Box{rng.uniform(0.0, cfg.ref_width - s), rng.uniform(0.0, cfg.ref_height - s), s, s};
  };
  auto inside = [&](const Box& b, int n) {
    std::vector<Point2> pts;
    for (int i = 0; i < n; ++i)
      pts.push_back({b.x + b.w * rng.uniform(0.2, 0.8), b.y + b.h * rng.uniform(0.2, 0.8)});
    return pts;
  };
  for (int n = 0; n < n_samples; ++n) {
    SyntheticInstance inst;
    const double s = cfg.output_stride;
    for (int k = 0; k < cfg.body_keypoints; ++k) {
      const double gx = 1.0 + static_cast<double>(rng.uniform_index(static_cast<std::uint64_t>(wo - 2)));
      const double gy = 1.0 + static_cast<double>(rng.uniform_index(static_cast<std::uint64_t>(ho - 2)));
      inst.body.push_back({s * (gx + 0.5) - 0.5, s * (gy + 0.5) - 0.5});
    }
    inst.body_labeled = labeled(cfg.body_keypoints);
    inst.face_box = square(10.0, 14.0);
    inst.face = inside(inst.face_box, cfg.face_keypoints);
    inst.face_labeled = labeled(cfg.face_keypoints);
    inst.left_hand_box = square(8.0, 12.0);
    inst.left_hand = inside(inst.left_hand_box, cfg.hand_keypoints);
    inst.left_labeled = labeled(cfg.hand_keypoints);
    inst.right_hand_box = square(8.0, 12.0);
    inst.right_hand = inside(inst.right_hand_box, cfg.hand_keypoints);
    inst.right_labeled = labeled(cfg.hand_keypoints);
    batch.instances.push_back(std::move(inst));
  }
  return batch;
}

namespace {

// Fully saturated colour at hue t in [0, 1).
std::array<double, 3> hue_color(double t) {
  const double h = t * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  switch (sector) {
    case 0: return {1, f, 0};
    case 1: return {1 - f, 1, 0};
    case 2: return {0, 1, f};
    case 3: return {0, 1 - f, 1};
    case 4: return {f, 0, 1};
    default: return {1, 0, 1 - f};
  }
}

FrameScale frame_for(const SyntheticTaskConfig& cfg, int height, int width) {
  if (height * cfg.ref_width != width * cfg.ref_height)
    throw std::invalid_argument("input " + std::to_string(height) + "x" + std::to_string(width) +
                                " does not share the reference aspect");
  return FrameScale{static_cast<double>(height) / cfg.ref_height};
}

HeatmapStack crop_targets(std::span<const Point2> pts, const std::vector<bool>& labeled, const Box& crop, int res,
                          double sigma, std::vector<bool>& mask) {
  const double stride = crop.w / res;
  const Point2 origin{crop.x + 0.5, crop.y + 0.5};
  std::vector<Point2> grid;
  for (const Point2& p : pts) grid.push_back({(p.x - crop.x) / stride - 0.5, (p.y - crop.y) / stride - 0.5});
  auto enc = encode_gaussian(grid, labeled, res, res, sigma, stride, origin);
  mask = labeled;
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = mask[k] && !enc.outside[k];
  return std::move(enc.heatmaps);
}

HeatmapStack to_stack(const Tensor& t, double stride, Point2 origin) {
  HeatmapStack hm(t.c, t.h, t.w, stride, origin);
  hm.values = t.v;
  return hm;
}

Tensor to_tensor(const HeatmapStack& hm) {
  Tensor t(hm.channels, hm.height, hm.width);
  t.v = hm.values;
  return t;
}

}  // namespace

SupernetInput render_input(const SyntheticInstance& inst, const SyntheticTaskConfig& cfg, int height, int width) {
  const FrameScale fs = frame_for(cfg, height, width);
  SupernetInput in;
  in.image = Tensor(3, height, width);
  const double total = cfg.body_keypoints + cfg.face_keypoints + 2.0 * cfg.hand_keypoints;
  const double sigma = cfg.image_sigma * fs.r;
  const double denom = 2.0 * sigma * sigma;
  int idx = 0;
  auto draw = [&](const std::vector<Point2>& pts) {
    for (const Point2& p : pts) {
      const auto color = hue_color(idx++ / total);
      const Point2 c = fs.to_image(p);
      for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
          const double g = std::exp(-((i - c.y) * (i - c.y) + (j - c.x) * (j - c.x)) / denom);
          for (int ch = 0; ch < 3; ++ch) in.image.at(ch, i, j) += color[static_cast<std::size_t>(ch)] * g;
        }
      }
    }
  };
  draw(inst.body);
  draw(inst.face);
  draw(inst.left_hand);
  draw(inst.right_hand);
  in.face_box = fs.to_image(inst.face_box);
  in.left_hand_box = fs.to_image(inst.left_hand_box);
  in.right_hand_box = fs.to_image(inst.right_hand_box);
  return in;
}

Supervision make_supervision(const SyntheticInstance& inst, const SyntheticTaskConfig& cfg, int height, int width,
                             int face_res, double face_expansion, int hand_res, double hand_expansion) {
  frame_for(cfg, height, width);
  Supervision sup;
  const Spatial out = downsample(Spatial{height, width}, cfg.output_stride);
  const double stride = static_cast<double>(cfg.ref_height) / out.h;
  std::vector<Point2> grid;
  for (const Point2& p : inst.body) grid.push_back({(p.x + 0.5) / stride - 0.5, (p.y + 0.5) / stride - 0.5});
  auto enc = encode_gaussian(grid, inst.body_labeled, out.h, out.w, cfg.body_sigma, stride, Point2{});
  sup.body = std::move(enc.heatmaps);
  sup.body_mask = inst.body_labeled;
  for (std::size_t k = 0; k < sup.body_mask.size(); ++k) sup.body_mask[k] = sup.body_mask[k] && !enc.outside[k];
  sup.face = crop_targets(inst.face, inst.face_labeled, expand_roi(inst.face_box, face_expansion), face_res,
                          cfg.head_sigma, sup.face_mask);
  sup.left_hand = crop_targets(inst.left_hand, inst.left_labeled, expand_roi(inst.left_hand_box, hand_expansion),
                               hand_res, cfg.head_sigma, sup.left_mask);
  sup.right_hand = crop_targets(inst.right_hand, inst.right_labeled,
                                expand_roi(inst.right_hand_box, hand_expansion), hand_res, cfg.head_sigma,
                                sup.right_mask);
  return sup;
}

namespace {

struct Recorded {
  SubnetOutputs out;
  SubnetPrediction pred;
};

Recorded record(Supernet& net, Tape& tape, const SubNetworkSpec& spec, const SyntheticInstance& inst,
                const SyntheticTaskConfig& cfg) {
  const int H = spec.bodynet.height;
  const int W = net.space().bodynet.width_for(H);
  const SupernetInput input = render_input(inst, cfg, H, W);
  Recorded r;
  r.out = net.forward(tape, spec, input);
  const Tensor& body = r.out.body.value();
  r.pred.body = to_stack(body, static_cast<double>(cfg.ref_height) / body.h, Point2{});
  r.pred.face_crop = expand_roi(inst.face_box, spec.facehead.connection->roi_expansion());
  r.pred.left_hand_crop = expand_roi(inst.left_hand_box, spec.handhead.connection->roi_expansion());
  r.pred.right_hand_crop = expand_roi(inst.right_hand_box, spec.handhead.connection->roi_expansion());
  auto head = [](const Tensor& t, const Box& crop) {
    return to_stack(t, crop.w / t.w, Point2{crop.x + 0.5, crop.y + 0.5});
  };
  r.pred.face = head(r.out.face.value(), r.pred.face_crop);
  r.pred.left_hand = head(r.out.left_hand.value(), r.pred.left_hand_crop);
  r.pred.right_hand = head(r.out.right_hand.value(), r.pred.right_hand_crop);
  return r;
}

HeatmapStack map_head(const HeatmapStack& teacher, const Box& teacher_crop, const HeatmapStack& student,
                      const Box& student_crop) {
  HeatmapStack out = teacher_crop == student_crop
                         ? distill_targets(teacher, student.height, student.width)
                         : roi_align(teacher, student_crop, student.height, student.width);
  out.stride = student.stride;
  out.origin = student.origin;
  return out;
}

}  // namespace

SubnetPrediction predict(const Supernet& net, const SubNetworkSpec& spec, const SyntheticInstance& inst,
                         const SyntheticTaskConfig& cfg) {
  Tape tape;
  // forward() only reads parameter values; gradients are touched by backward().
  return record(const_cast<Supernet&>(net), tape, spec, inst, cfg).pred;
}

Supervision distill_supervision(const SubnetPrediction& teacher, const Supervision& gt,
                                const SubnetPrediction& student) {
  Supervision s = gt;
  s.body = distill_targets(teacher.body, student.body.height, student.body.width);
  s.body.stride = student.body.stride;
  s.body.origin = student.body.origin;
  s.face = map_head(teacher.face, teacher.face_crop, student.face, student.face_crop);
  s.left_hand = map_head(teacher.left_hand, teacher.left_hand_crop, student.left_hand, student.left_hand_crop);
  s.right_hand = map_head(teacher.right_hand, teacher.right_hand_crop, student.right_hand, student.right_hand_crop);
  return s;
}

LossBreakdown backward_subnet(Supernet& net, const SubNetworkSpec& spec, const TrainBatch& batch,
                              const LossWeights& weights, const std::vector<SubnetPrediction>* teacher,
                              std::vector<SubnetPrediction>* predictions) {
  const auto& cfg = batch.config;
  const std::size_t n = batch.instances.size();
  if (teacher && teacher->size() != n) throw std::invalid_argument("backward_subnet: one teacher prediction per instance");
  LossBreakdown total;
  if (n == 0) return total;
  const double inv = 1.0 / static_cast<double>(n);
  const double face_e = spec.facehead.connection->roi_expansion();
  const double hand_e = spec.handhead.connection->roi_expansion();
  for (std::size_t i = 0; i < n; ++i) {
    const SyntheticInstance& inst = batch.instances[i];
    Tape tape;
    Recorded r = record(net, tape, spec, inst, cfg);
    const int H = spec.bodynet.height;
    Supervision sup = make_supervision(inst, cfg, H, net.space().bodynet.width_for(H), spec.facehead.height, face_e,
                                       spec.handhead.height, hand_e);
    if (teacher) sup = distill_supervision((*teacher)[i], sup, r.pred);

    const Var lb = tape.mse(r.out.body, to_tensor(sup.body), sup.body_mask);
    const Var lf = tape.mse(r.out.face, to_tensor(sup.face), sup.face_mask);
    const Var ll = tape.mse(r.out.left_hand, to_tensor(sup.left_hand), sup.left_mask);
    const Var lr = tape.mse(r.out.right_hand, to_tensor(sup.right_hand), sup.right_mask);
    const Var hands[] = {ll, lr};
    const Var lh = tape.scale(tape.sum(hands), 0.5);
    const Var terms[] = {tape.scale(lb, weights.body * inv), tape.scale(lf, weights.face * inv),
                         tape.scale(lh, weights.hand * inv)};
    tape.backward(tape.sum(terms));
    total.body += lb.value().v[0] * inv;
    total.face += lf.value().v[0] * inv;
    total.hand += lh.value().v[0] * inv;
    if (predictions) predictions->push_back(std::move(r.pred));
  }
  return total;
}

SandwichStep train_step_sandwich(Supernet& net, const TrainBatch& batch, std::uint64_t step_seed, double lr,
                                 int n_random) {
  if (n_random < 0) throw std::invalid_argument("train_step_sandwich: negative random count");
  SandwichStep step;
  net.zero_grad();
  std::vector<SubnetPrediction> teacher;
  const SubNetworkSpec biggest = sample_extreme(net.space(), Extreme::Biggest);
  step.members.push_back({"biggest", biggest, backward_subnet(net, biggest, batch, {}, nullptr, &teacher)});
  const SubNetworkSpec smallest = sample_extreme(net.space(), Extreme::Smallest);
  step.members.push_back({"smallest", smallest, backward_subnet(net, smallest, batch, {}, &teacher)});
  for (int r = 0; r < n_random; ++r) {
    const SubNetworkSpec spec = sample_random(net.space(), derive_seed(step_seed, 1, static_cast<std::uint64_t>(r)));
    step.members.push_back({"random", spec, backward_subnet(net, spec, batch, {}, &teacher)});
  }
  net.apply_gradients(lr);
  step.forward_passes = static_cast<int>(step.members.size());
  return step;
}

TrainBatch training_batch(const TrainConfig& cfg, std::uint64_t step) {
  return make_synthetic_task(derive_seed(cfg.seed, kDataStream, step), cfg.batch_size, cfg.task);
}

void train(Supernet& net, const TrainConfig& cfg, std::uint64_t first_step,
           const std::function<void(std::uint64_t, const SandwichStep&)>& on_step) {
  for (std::uint64_t s = first_step; s < static_cast<std::uint64_t>(cfg.steps); ++s) {
    const SandwichStep st =
        train_step_sandwich(net, training_batch(cfg, s), derive_seed(cfg.seed, kStepStream, s), cfg.learning_rate,
                            cfg.n_random);
    if (on_step) on_step(s, st);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'W', 'B', 'N', 'A', 'S', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Supernet& net, const Checkpoint& meta) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, meta.space_name);
  for (int v : {meta.layout.image_channels, meta.layout.body_outputs, meta.layout.face_outputs,
                meta.layout.hand_outputs, meta.layout.hand_multiplicity})
    put<std::int32_t>(out, v);
  put<std::uint64_t>(out, meta.seed);
  put<std::uint64_t>(out, meta.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.parameters().size()));
  for (const Parameter& p : net.parameters()) {
    put_string(out, p.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put<std::int32_t>(out, d);
    put<std::uint64_t>(out, p.value.size());
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint_header(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint meta;
  meta.space_name = get_string(in);
  meta.layout.image_channels = get<std::int32_t>(in);
  meta.layout.body_outputs = get<std::int32_t>(in);
  meta.layout.face_outputs = get<std::int32_t>(in);
  meta.layout.hand_outputs = get<std::int32_t>(in);
  meta.layout.hand_multiplicity = get<std::int32_t>(in);
  meta.seed = get<std::uint64_t>(in);
  meta.step = get<std::uint64_t>(in);
  return meta;
}

Checkpoint load_checkpoint(std::istream& in, Supernet& net) {
  Checkpoint meta = read_checkpoint_header(in);
  if (meta.space_name != net.space().name)
    throw std::runtime_error("checkpoint: space '" + meta.space_name + "' does not match '" + net.space().name + "'");
  const auto count = get<std::uint32_t>(in);
  if (count != net.parameters().size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (Parameter& p : net.parameters()) {
    const std::string name = get_string(in);
    if (name != p.name) throw std::runtime_error("checkpoint: expected " + p.name + ", found " + name);
    const auto ndim = get<std::uint32_t>(in);
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(get<std::int32_t>(in));
    if (shape != p.shape) throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    const auto n = get<std::uint64_t>(in);
    if (n != p.value.size()) throw std::runtime_error("checkpoint: size mismatch for " + p.name);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
  }
  return meta;
}

}  // namespace wbnas
