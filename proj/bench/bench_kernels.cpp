#include <benchmark/benchmark.h>

#include <vector>

#include "adapool/kernels.hpp"
#include "adapool/rng.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  adapool::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// Shapes follow the tiny backbone: 8 images x 65 tokens, width 64.
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(m * k, 1);
  auto b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      adapool::kernels::gemm(a, b, c, m, k, n, false);
    else
      adapool::kernels::serial::gemm(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * static_cast<double>(m * k * n),
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 8, tokens = 65, heads = 4, head_dim = 16;
  const std::size_t d = heads * head_dim;
  auto qkv = random_vec(batch * tokens * 3 * d, 3);
  std::vector<float> out(batch * tokens * d), probs(batch * heads * tokens * tokens);
  for (auto _ : state) {
    if constexpr (Parallel)
      adapool::kernels::attention_forward(qkv, out, probs, batch, tokens, heads, head_dim);
    else
      adapool::kernels::serial::attention_forward(qkv, out, probs, batch, tokens, heads, head_dim);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
  const std::size_t rows = 520, d = 64;
  auto x = random_vec(rows * d, 4);
  std::vector<float> gamma(d, 1.0f), beta(d, 0.0f), y(rows * d), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      adapool::kernels::layer_norm_forward(x, gamma, beta, y, mean, rstd, rows, d, 1e-5f);
    else
      adapool::kernels::serial::layer_norm_forward(x, gamma, beta, y, mean, rstd, rows, d, 1e-5f);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Args({520, 64, 192})->Args({520, 64, 256})->Args({520, 256, 64})->Args({256, 256, 256});
BENCHMARK(BM_Gemm<false>)->Args({520, 64, 192})->Args({520, 64, 256})->Args({520, 256, 64})->Args({256, 256, 256});
BENCHMARK(BM_Attention<true>);
BENCHMARK(BM_Attention<false>);
BENCHMARK(BM_LayerNorm<true>);
BENCHMARK(BM_LayerNorm<false>);

BENCHMARK_MAIN();
