// Serial reference vs OpenMP kernels, plus one full forward/backward pass.
//   bench_kernels --benchmark_filter=gemm_nn

#include <benchmark/benchmark.h>

#include <vector>

#include "depo/kernels.hpp"
#include "depo/model.hpp"
#include "depo/rng.hpp"

using namespace depo;

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  return v;
}

template <kernels::Exec E>
void BM_gemm_nn(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), k = 64, m = 64;
  const auto a = random_matrix(static_cast<std::size_t>(n * k), 1);
  const auto b = random_matrix(static_cast<std::size_t>(k * m), 2);
  std::vector<double> c(static_cast<std::size_t>(n * m));
  for (auto _ : state) {
    kernels::gemm_nn(E, a, b, c, n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * k * m);
}

template <kernels::Exec E>
void BM_gemm_nt(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), k = 64, m = 256;
  const auto a = random_matrix(static_cast<std::size_t>(n * k), 3);
  const auto b = random_matrix(static_cast<std::size_t>(m * k), 4);
  std::vector<double> c(static_cast<std::size_t>(n * m));
  for (auto _ : state) {
    kernels::gemm_nt(E, a, b, c, n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * k * m);
}

template <kernels::Exec E>
void BM_gemm_tn_acc(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0)), n = 64, m = 64;
  const auto a = random_matrix(static_cast<std::size_t>(k * n), 5);
  const auto b = random_matrix(static_cast<std::size_t>(k * m), 6);
  std::vector<double> c(static_cast<std::size_t>(n * m));
  for (auto _ : state) {
    kernels::gemm_tn_acc(E, a, b, c, k, n, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * k * m);
}

template <kernels::Exec E>
void BM_forward_backward(benchmark::State& state) {
  const ModelConfig cfg;
  const int len = static_cast<int>(state.range(0));
  auto values = random_matrix(cfg.parameter_count(), 7);
  for (auto& x : values) x *= 0.05;
  const Transformer model(cfg, values);
  Rng rng(8);
  Tokens seq(static_cast<std::size_t>(len));
  for (auto& t : seq) t = static_cast<TokenId>(7 + uniform_below(rng, 200));
  std::vector<int> rows(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) rows[static_cast<std::size_t>(i)] = i;
  ForwardCache cache;
  std::vector<double> logits, grad(values.size());
  for (auto _ : state) {
    model.forward(seq, rows, cache, logits, E);
    model.backward(cache, logits, grad, E);
    benchmark::DoNotOptimize(grad.data());
  }
}

constexpr auto S = kernels::Exec::Serial;
constexpr auto P = kernels::Exec::Parallel;

}  // namespace

BENCHMARK(BM_gemm_nn<S>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nn<P>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<S>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<P>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_tn_acc<S>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_tn_acc<P>)->Arg(64)->Arg(256);
BENCHMARK(BM_forward_backward<S>)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward_backward<P>)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
