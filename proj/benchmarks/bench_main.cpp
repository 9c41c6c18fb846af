// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "wbnas/cost_model.hpp"
#include "wbnas/geometry.hpp"
#include "wbnas/metrics.hpp"
#include "wbnas/rng.hpp"
#include "wbnas/search_space.hpp"
#include "wbnas/serialization.hpp"
#include "wbnas/supernet.hpp"

namespace wbnas {
namespace {

void BM_ConvCost(benchmark::State& state) {
  const LayerShape s{3, 3, 64, 64, 4, {96, 72}, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv_cost(s));
}
BENCHMARK(BM_ConvCost);

void BM_SubnetworkCost(benchmark::State& state) {
  const SearchSpace sp = builtin_space("default");
  std::vector<SubNetworkSpec> specs;
  for (std::uint64_t s = 0; s < 64; ++s) specs.push_back(sample_random(sp, s));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(subnetwork_cost(sp, specs[i++ % specs.size()]).total_macs());
}
BENCHMARK(BM_SubnetworkCost);

void BM_SampleRandom(benchmark::State& state) {
  const SearchSpace sp = builtin_space("default");
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_random(sp, seed++));
}
BENCHMARK(BM_SampleRandom);

PoseResult random_pose(Rng& rng, int k, double score) {
  PoseResult p;
  for (int j = 0; j < k; ++j) {
    p.keypoints.push_back({rng.uniform(0, 200), rng.uniform(0, 200)});
    p.visibility.push_back(2);
  }
  p.area = rng.uniform(1000, 20000);
  p.score = score;
  return p;
}

void BM_Oks(benchmark::State& state) {
  Rng rng(1);
  const PoseResult a = random_pose(rng, 133, 1), b = random_pose(rng, 133, 1);
  const std::vector<double> k(133, 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(oks(a, b, k, std::sqrt(b.area)));
}
BENCHMARK(BM_Oks);

void BM_MapMar(benchmark::State& state) {
  Rng rng(2);
  std::vector<ImageEval> images(static_cast<std::size_t>(state.range(0)));
  for (auto& img : images) {
    for (int g = 0; g < 3; ++g) img.ground_truths.push_back(random_pose(rng, 133, 1));
    for (int d = 0; d < 5; ++d) img.detections.push_back(random_pose(rng, 133, rng.uniform()));
  }
  OksParams params;
  params.k.assign(133, 0.05);
  params.thresholds = OksParams::coco_thresholds();
  for (auto _ : state) benchmark::DoNotOptimize(map_mar(images, params).map);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MapMar)->Arg(10)->Arg(100);

void BM_RoiAlign(benchmark::State& state) {
  Rng rng(3);
  HeatmapStack f(32, 72, 96);
  for (double& v : f.values) v = rng.uniform();
  const Box box{20.3, 11.7, 30.1, 28.4};
  const int r = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(roi_align(f, box, r, r).values.data());
}
BENCHMARK(BM_RoiAlign)->Arg(16)->Arg(64);

void BM_DecodeQuarterOffset(benchmark::State& state) {
  Rng rng(4);
  std::vector<Point2> kp;
  for (int j = 0; j < 133; ++j) kp.push_back({rng.uniform(2, 70), rng.uniform(2, 94)});
  const auto enc = encode_gaussian(kp, std::vector<bool>(133, true), 96, 72, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(decode_quarter_offset(enc.heatmaps).size());
}
BENCHMARK(BM_DecodeQuarterOffset);

void BM_SupernetForwardBackward(benchmark::State& state) {
  const SearchSpace sp = builtin_space("toy");
  Supernet net(sp, toy_head_layout(), 1);
  const auto batch = make_synthetic_task(5, 1);
  const SubNetworkSpec spec =
      sample_extreme(sp, state.range(0) ? Extreme::Biggest : Extreme::Smallest);
  for (auto _ : state) {
    net.zero_grad();
    benchmark::DoNotOptimize(backward_subnet(net, spec, batch).total());
  }
}
BENCHMARK(BM_SupernetForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace wbnas

BENCHMARK_MAIN();
