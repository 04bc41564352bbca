#include <benchmark/benchmark.h>

#include <vector>

#include "excelformer/autodiff.hpp"
#include "excelformer/kernels.hpp"
#include "excelformer/model.hpp"
#include "excelformer/rng.hpp"

using namespace excelformer;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

using Gemm = void (*)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);

template <Gemm kernel>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const std::size_t k = n;
  const auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    kernel(m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * m * n * k));
}

template <Gemm kernel>
void BM_gemm_nt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const std::size_t k = n;
  const auto a = noise(m * k, 3), b = noise(n * k, 4);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    kernel(m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * m * n * k));
}

template <bool parallel>
void BM_masked_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = static_cast<std::size_t>(state.range(1));
  const auto logits = noise(rows * cols, 5);
  std::vector<double> mask(cols * cols, 0.0), out(rows * cols);
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = 0; j < i; ++j) mask[i * cols + j] = kMaskValue;
  for (auto _ : state) {
    if constexpr (parallel) {
      kernels::masked_softmax(rows, cols, logits.data(), mask, out.data());
    } else {
      kernels::reference::masked_softmax(rows, cols, logits.data(), mask, out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_model_step(benchmark::State& state) {
  ModelConfig c;
  c.d = static_cast<std::size_t>(state.range(0));
  c.heads = c.d / 8;
  const std::size_t f = 8;
  Rng init(6);
  const ExcelFormer model(c, ImportanceVector{noise(f, 7)}, init);
  Tensor x(Shape{128, f}, noise(128 * f, 8));
  Rng drop(9);
  for (auto _ : state) {
    Tape tape;
    const auto pass = model.forward(tape, x, drop, true);
    tape.backward(ad::mean(pass.output));
    benchmark::DoNotOptimize(pass.params.head.wf.grad().data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<kernels::reference::gemm>)->Name("gemm/reference")->Args({512, 256})->Args({4096, 256});
BENCHMARK(BM_gemm<kernels::gemm>)->Name("gemm/parallel")->Args({512, 256})->Args({4096, 256});
BENCHMARK(BM_gemm_nt<kernels::reference::gemm_nt>)->Name("gemm_nt/reference")->Args({512, 256});
BENCHMARK(BM_gemm_nt<kernels::gemm_nt>)->Name("gemm_nt/parallel")->Args({512, 256});
BENCHMARK(BM_masked_softmax<false>)->Name("masked_softmax/reference")->Args({32768, 16});
BENCHMARK(BM_masked_softmax<true>)->Name("masked_softmax/parallel")->Args({32768, 16});
BENCHMARK(BM_model_step)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
