#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ted/metrics.hpp"

namespace {

std::vector<double> random_progresses(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> progresses;
  progresses.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double p = uniform(rng);
    progresses.push_back(p > 0.7 ? 1.0 : p);
  }
  return progresses;
}

ted::ProgressCurve random_curve(int t_max, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ted::ProgressCurve curve;
  curve.sample_id = "bench";
  double level = 0.0;
  for (int t = 0; t < t_max; ++t) {
    if (rng() % 3 == 0) level = std::min(1.0, level + 0.1);
    curve.values.push_back(level);
  }
  return curve;
}

void BM_PassAtK(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto progresses = random_progresses(n, 42);
  const int k = n / 2 + 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ted::pass_at_k(progresses, k, 1.0));
  }
}
BENCHMARK(BM_PassAtK)->Arg(8)->Arg(20)->Arg(1000);

void BM_PassHatK(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto progresses = random_progresses(n, 43);
  const int k = n / 4 + 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ted::pass_hat_k(progresses, k, 1.0));
  }
}
BENCHMARK(BM_PassHatK)->Arg(20)->Arg(1000);

void BM_Auc(benchmark::State& state) {
  const auto curve = random_curve(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ted::auc(curve));
  }
}
BENCHMARK(BM_Auc)->Arg(15)->Arg(256);

void BM_Ppt(benchmark::State& state) {
  const auto curve = random_curve(static_cast<int>(state.range(0)), 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ted::ppt(curve));
  }
}
BENCHMARK(BM_Ppt)->Arg(15)->Arg(256);

void BM_TrialMoments(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> z;
  for (int i = 0; i < g; ++i) z.push_back(uniform(rng));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ted::trial_moments(z, g));
  }
}
BENCHMARK(BM_TrialMoments)->Arg(5)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
