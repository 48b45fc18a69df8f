// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "g2pm/kernels.hpp"
#include "g2pm/model.hpp"

namespace {

using g2pm::Backend;
using g2pm::kernels::Real;

std::vector<Real> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> d;
  std::vector<Real> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Square products of side n.
void BM_Gemm(benchmark::State& state, Backend be) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<Real> c(n * n);
  for (auto _ : state) {
    g2pm::kernels::gemm_nn(be, n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// A batch of instances with 8 tokens each at width 64, 4 heads; the shape of
// one backbone layer during pre-training.
void BM_Attention(benchmark::State& state, Backend be, bool backward) {
  const auto instances = static_cast<std::size_t>(state.range(0));
  const std::size_t tokens = 8, dim = 64, heads = 4, rows = instances * tokens;
  const auto offsets = g2pm::model::uniform_offsets(instances, tokens);
  const g2pm::kernels::AttentionShape shape{dim, heads, offsets};
  const auto q = random_buffer(rows * dim, 3), k = random_buffer(rows * dim, 4), v = random_buffer(rows * dim, 5);
  const auto dout = random_buffer(rows * dim, 6);
  std::vector<Real> out(rows * dim), probs(g2pm::kernels::attention_prob_offsets(offsets, heads).back());
  std::vector<Real> dq(rows * dim), dk(rows * dim), dv(rows * dim);
  g2pm::kernels::attention_forward(be, shape, q.data(), k.data(), v.data(), out.data(), probs.data());
  for (auto _ : state) {
    if (backward) {
      g2pm::kernels::attention_backward(be, shape, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                        dq.data(), dk.data(), dv.data());
      benchmark::DoNotOptimize(dq.data());
    } else {
      g2pm::kernels::attention_forward(be, shape, q.data(), k.data(), v.data(), out.data(), probs.data());
      benchmark::DoNotOptimize(out.data());
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(instances));
}

BENCHMARK_CAPTURE(BM_Gemm, serial, Backend::serial)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK_CAPTURE(BM_Gemm, omp, Backend::omp)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK_CAPTURE(BM_Attention, forward_serial, Backend::serial, false)->Arg(64)->Arg(512);
BENCHMARK_CAPTURE(BM_Attention, forward_omp, Backend::omp, false)->Arg(64)->Arg(512);
BENCHMARK_CAPTURE(BM_Attention, backward_serial, Backend::serial, true)->Arg(64)->Arg(512);
BENCHMARK_CAPTURE(BM_Attention, backward_omp, Backend::omp, true)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
