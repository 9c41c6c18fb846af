// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "wbnas/autograd.hpp"
#include "wbnas/cost_model.hpp"
#include "wbnas/geometry.hpp"
#include "wbnas/search_space.hpp"

namespace wbnas {

/// Output counts of the desk-scale task: 5 body, 3 face and 3 points per hand.
HeadLayout toy_head_layout();

/// One person as seen by the network: the image at the bodynet input size and
/// the face / hand boxes in that image's pixel frame.
struct SupernetInput {
  Tensor image;
  Box face_box;
  Box left_hand_box;
  Box right_hand_box;
};

struct SubnetOutputs {
  Var body;
  Var face;
  Var left_hand;
  Var right_hand;
  /// Expanded crop boxes actually fed to RoIAlign (image frame).
  Box face_crop;
  Box left_hand_crop;
  Box right_hand_crop;
};

/// Weight-shared network covering every sub-network of a search space. Each
/// conv stores its maximal weight block; a sub-network slices the leading
/// output / input channels and the leading blocks of each stage.
class Supernet {
 public:
  Supernet(SearchSpace space, HeadLayout layout, std::uint64_t init_seed);

  const SearchSpace& space() const { return space_; }
  const HeadLayout& layout() const { return layout_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  /// Records the sub-network's forward pass on `tape`. MACs land in tape slots
  /// 0 (bodynet), 1 (facehead) and 2 (handhead, both hands).
  SubnetOutputs forward(Tape& tape, const SubNetworkSpec& spec, const SupernetInput& input);

  void zero_grad();
  /// p -= lr * grad for every parameter.
  void apply_gradients(double lr);

 private:
  struct Conv {
    int weight = -1;
    int bias = -1;
  };
  struct Block {
    Conv c1, c2, c3, proj;
  };
  struct Stage {
    std::vector<Conv> layers;                     // stem
    std::vector<Conv> transition;                 // per branch
    std::vector<std::vector<Block>> blocks;       // [branch][block]
    // [fusion module][target j][source i] -> conv chain
    std::vector<std::vector<std::vector<std::vector<Conv>>>> fusion;
  };
  struct Module {
    std::vector<Stage> stages;
    std::vector<Conv> output;  // one per branch of the last stage (bodynet: branch 1 only)
  };

  Conv make_conv(const std::string& name, int kernel, int in, int out, bool bias);
  Module build_module(const ModuleSpace& ms, int in_channels, int out_channels);
  std::vector<Var> run_module(Tape& tape, const ModuleSpace& ms, const Module& mod, const ModuleChoice& choice,
                              Var input, std::vector<Var>* stage_features);
  Var run_output(Tape& tape, const ModuleSpace& ms, const Module& mod, const ModuleChoice& choice,
                 const std::vector<Var>& branches, int out_channels);
  Var conv(Tape& tape, Var x, const Conv& c, int kernel, int stride, int out, int groups = 1);

  SearchSpace space_;
  HeadLayout layout_;
  std::vector<Parameter> params_;
  Module body_, face_, hand_;
};

/// Largest feature-channel count any connection of `space` can hand a head.
int max_feature_channels(const SearchSpace& space);

// ---------------------------------------------------------------------------
// Losses.

struct LossBreakdown {
  double body = 0;
  double face = 0;
  double hand = 0;
  double total() const { return body + face + hand; }
};

struct LossWeights {
  double body = 1;
  double face = 1;
  double hand = 1;
};

/// (1 / (K' H W)) sum over unmasked channels of (pred - target)^2, K' the
/// number of unmasked channels; 0 when every channel is masked.
double mse_loss(const HeatmapStack& pred, const HeatmapStack& target, const std::vector<bool>& mask = {});

/// Teacher heatmaps resized (bilinear, not renormalized) to the student's grid.
HeatmapStack distill_targets(const HeatmapStack& teacher, int student_h, int student_w);

// ---------------------------------------------------------------------------
// Synthetic task.

/// One synthetic person in the reference frame (the largest bodynet input).
/// Keypoints are pixel coordinates; boxes are square.
struct SyntheticInstance {
  std::vector<Point2> body, face, left_hand, right_hand;
  std::vector<bool> body_labeled, face_labeled, left_labeled, right_labeled;
  Box face_box, left_hand_box, right_hand_box;
};

struct SyntheticTaskConfig {
  int ref_height = 48;
  int ref_width = 36;
  int body_keypoints = 5;
  int face_keypoints = 3;
  int hand_keypoints = 3;
  int output_stride = 4;        // bodynet heatmap stride
  double image_sigma = 1.5;     // blob radius in reference pixels
  double body_sigma = 1.0;      // target sigma in heatmap cells
  double head_sigma = 1.0;
  double unlabeled_probability = 0.1;
};

struct TrainBatch {
  SyntheticTaskConfig config;
  std::vector<SyntheticInstance> instances;
};

/// `n_samples` independent instances, deterministic per seed. Body keypoints
/// sit on integer cells of the reference heatmap grid.
TrainBatch make_synthetic_task(std::uint64_t seed, int n_samples, const SyntheticTaskConfig& config = {});

/// Maps reference-frame coordinates to an image of height `height`.
struct FrameScale {
  double r = 1.0;
  Point2 to_image(Point2 p) const { return {(p.x + 0.5) * r - 0.5, (p.y + 0.5) * r - 0.5}; }
  Point2 to_reference(Point2 p) const { return {(p.x + 0.5) / r - 0.5, (p.y + 0.5) / r - 0.5}; }
  Box to_image(const Box& b) const {
    const Point2 o = to_image(Point2{b.x, b.y});
    return {o.x, o.y, b.w * r, b.h * r};
  }
};

/// Colour-coded blob rendering of an instance at (height, width).
SupernetInput render_input(const SyntheticInstance& inst, const SyntheticTaskConfig& cfg, int height, int width);

/// Ground-truth targets of one instance for a given sub-network shape.
struct Supervision {
  HeatmapStack body, face, left_hand, right_hand;
  std::vector<bool> body_mask, face_mask, left_mask, right_mask;
};

/// Body targets at stride `output_stride` of a `height` input; head targets on
/// a head_res x head_res grid over each box expanded by `roi_expansion`.
Supervision make_supervision(const SyntheticInstance& inst, const SyntheticTaskConfig& cfg, int height, int width,
                             int face_res, double face_expansion, int hand_res, double hand_expansion);

/// Predictions of one sub-network on one instance, detached from any tape.
struct SubnetPrediction {
  HeatmapStack body, face, left_hand, right_hand;
  Box face_crop, left_hand_crop, right_hand_crop;  // reference frame
};

/// Forward without recording gradients. Reads the parameters only, so
/// concurrent calls on one network are safe.
SubnetPrediction predict(const Supernet& net, const SubNetworkSpec& spec, const SyntheticInstance& inst,
                         const SyntheticTaskConfig& cfg);

/// Loss and gradient of one sub-network over a batch, supervised by ground
/// truth or, when `teacher` is given (one per instance), by the teacher's
/// predictions mapped onto this sub-network's grids. Gradients accumulate
/// into the parameters; the loss is averaged over instances.
LossBreakdown backward_subnet(Supernet& net, const SubNetworkSpec& spec, const TrainBatch& batch,
                              const LossWeights& weights = {},
                              const std::vector<SubnetPrediction>* teacher = nullptr,
                              std::vector<SubnetPrediction>* predictions = nullptr);

/// Maps a teacher prediction onto the student's grids: bodynet maps are resized;
/// head maps are resized when both crops coincide and resampled through the
/// student's crop box otherwise.
Supervision distill_supervision(const SubnetPrediction& teacher, const Supervision& ground_truth,
                                const SubnetPrediction& student_shape);

struct SandwichMember {
  std::string role;  // "biggest", "smallest", "random"
  SubNetworkSpec spec;
  LossBreakdown loss;
};

struct SandwichStep {
  std::vector<SandwichMember> members;
  int forward_passes = 0;  // sub-networks evaluated this step
};

/// One sandwich-rule step: biggest on ground truth, then smallest and
/// `n_random` random sub-networks distilled from the biggest's predictions;
/// accumulated gradients applied once with plain gradient descent.
SandwichStep train_step_sandwich(Supernet& net, const TrainBatch& batch, std::uint64_t step_seed, double lr,
                                 int n_random = 2);

struct TrainConfig {
  std::uint64_t seed = 0;
  int steps = 200;
  int batch_size = 2;
  double learning_rate = 0.05;
  int n_random = 2;
  SyntheticTaskConfig task;
};

/// Batch drawn at `step` of a run.
TrainBatch training_batch(const TrainConfig& cfg, std::uint64_t step);

/// Runs steps [first_step, cfg.steps). `on_step` (may be empty) sees every step.
void train(Supernet& net, const TrainConfig& cfg, std::uint64_t first_step,
           const std::function<void(std::uint64_t, const SandwichStep&)>& on_step);

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  std::string space_name;
  HeadLayout layout;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;  // next step to run
};

void save_checkpoint(std::ostream& out, const Supernet& net, const Checkpoint& meta);
/// Restores parameters into `net` (which must have matching shapes) and returns the metadata.
Checkpoint load_checkpoint(std::istream& in, Supernet& net);
/// Reads only the metadata.
Checkpoint read_checkpoint_header(std::istream& in);

}  // namespace wbnas
