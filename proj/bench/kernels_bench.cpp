// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "coconut/kernels.hpp"

using namespace coconut;

namespace {

std::vector<DataSeries> make_data(std::size_t count) {
  auto series = random_walk_generate(count, 256, 11);
  for (auto& s : series) znormalize_in_place(s.values);
  return series;
}

const std::vector<DataSeries>& data() {
  static const auto d = make_data(1 << 14);
  return d;
}

std::span<const DataSeries> slice(benchmark::State& state) {
  return std::span(data()).first(static_cast<std::size_t>(state.range(0)));
}

void BM_SummarizeParallel(benchmark::State& state) {
  const IndexShape shape;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::summarize_batch(slice(state), shape));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SummarizeSerial(benchmark::State& state) {
  const IndexShape shape;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::summarize_batch(slice(state), shape));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LowerBoundsParallel(benchmark::State& state) {
  const IndexShape shape;
  const auto keys = kernels::serial::summarize_batch(slice(state), shape);
  const auto q = paa(data().front().values, shape.segments);
  const auto& table = breakpoints(shape.bits);
  std::vector<double> out(keys.size());
  for (auto _ : state) {
    kernels::lower_bounds(q, keys, table, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LowerBoundsSerial(benchmark::State& state) {
  const IndexShape shape;
  const auto keys = kernels::serial::summarize_batch(slice(state), shape);
  const auto q = paa(data().front().values, shape.segments);
  const auto& table = breakpoints(shape.bits);
  std::vector<double> out(keys.size());
  for (auto _ : state) {
    kernels::serial::lower_bounds(q, keys, table, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LinearScanParallel(benchmark::State& state) {
  const auto& q = data().back().values;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::linear_scan(q, slice(state)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LinearScanSerial(benchmark::State& state) {
  const auto& q = data().back().values;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::linear_scan(q, slice(state)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_SummarizeParallel)->Arg(1 << 10)->Arg(1 << 14);
BENCHMARK(BM_SummarizeSerial)->Arg(1 << 10)->Arg(1 << 14);
BENCHMARK(BM_LowerBoundsParallel)->Arg(1 << 10)->Arg(1 << 14);
BENCHMARK(BM_LowerBoundsSerial)->Arg(1 << 10)->Arg(1 << 14);
BENCHMARK(BM_LinearScanParallel)->Arg(1 << 10)->Arg(1 << 14);
BENCHMARK(BM_LinearScanSerial)->Arg(1 << 10)->Arg(1 << 14);

BENCHMARK_MAIN();
