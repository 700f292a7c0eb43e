// Copyright 2026 The chgate Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <vector>

#include "chgate/kernels.hpp"
#include "chgate/rng.hpp"

namespace {

using chgate::kernels::ConvGeometry;

struct ConvCase {
  ConvGeometry g;
  std::vector<float> x, w, y;
};

// Args: batch, channels (in = out), spatial size, kernel size.
ConvCase make_case(const benchmark::State& state) {
  const std::int64_t n = state.range(0), c = state.range(1), s = state.range(2),
                     k = state.range(3);
  ConvCase cc;
  cc.g = chgate::kernels::conv_geometry({n, c, s, s}, {c, c, k, k}, 1, k / 2);
  chgate::RngStream rng =
      chgate::RngStream::derive(0, chgate::StreamFamily::kTest, {1});
  cc.x.resize(static_cast<std::size_t>(n * cc.g.in_image()));
  cc.w.resize(static_cast<std::size_t>(c * cc.g.kernel_row()));
  cc.y.resize(static_cast<std::size_t>(n * cc.g.out_image()));
  for (float& v : cc.x) v = static_cast<float>(rng.normal());
  for (float& v : cc.w) v = static_cast<float>(rng.normal());
  return cc;
}

void set_counters(benchmark::State& state, const ConvGeometry& g) {
  const double flops = 2.0 * static_cast<double>(g.batch * g.out_image() * g.kernel_row());
  state.counters["FLOP/s"] =
      benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate);
  state.counters["threads"] = chgate::kernels::num_threads();
}

void BM_ConvReference(benchmark::State& state) {
  ConvCase cc = make_case(state);
  for (auto _ : state) {
    chgate::kernels::conv2d_forward_reference(cc.g, cc.x.data(), cc.w.data(), cc.y.data());
    benchmark::DoNotOptimize(cc.y.data());
  }
  set_counters(state, cc.g);
}

void BM_ConvParallel(benchmark::State& state) {
  ConvCase cc = make_case(state);
  for (auto _ : state) {
    chgate::kernels::conv2d_forward(cc.g, cc.x.data(), cc.w.data(), cc.y.data());
    benchmark::DoNotOptimize(cc.y.data());
  }
  set_counters(state, cc.g);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 16, 16, 3})->Args({64, 16, 16, 1})->Args({64, 32, 8, 3})->Args({8, 64, 32, 3});
  b->Unit(benchmark::kMillisecond);
}

BENCHMARK(BM_ConvReference)->Apply(shapes);
BENCHMARK(BM_ConvParallel)->Apply(shapes);

}  // namespace

int main(int argc, char** argv) {
  chgate::kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
