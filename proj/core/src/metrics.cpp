#include "ted/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ted {

double log_choose(long long n, long long k) {
  if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(static_cast<double>(n + 1)) -
         std::lgamma(static_cast<double>(k + 1)) -
         std::lgamma(static_cast<double>(n - k + 1));
}

double choose(long long n, long long k) {
  if (k < 0 || k > n || n < 0) return 0.0;
  if (k == 0 || k == n) return 1.0;
  if (n <= 62) {
    // C(62, 31) fits in 64 bits; intermediates use 128.
    unsigned __int128 result = 1;
    const long long kk = std::min(k, n - k);
    for (long long i = 1; i <= kk; ++i) {
      result = result * static_cast<unsigned __int128>(n - kk + i) /
               static_cast<unsigned __int128>(i);
    }
    return static_cast<double>(static_cast<unsigned long long>(result));
  }
  return std::exp(log_choose(n, k));
}

namespace {

int success_count(std::span<const double> progresses, double threshold) {
  return static_cast<int>(std::count_if(
      progresses.begin(), progresses.end(),
      [threshold](double p) { return p >= threshold; }));
}

void validate_k(int k, std::size_t n) {
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("k must satisfy 1 <= k <= n (k=" +
                                std::to_string(k) +
                                ", n=" + std::to_string(n) + ")");
  }
}

}  // namespace

double pass_at_k(std::span<const double> progresses, int k, double threshold) {
  validate_k(k, progresses.size());
  const long long n = static_cast<long long>(progresses.size());
  const long long c = success_count(progresses, threshold);
  if (c == 0) return 0.0;
  if (k > n - c) return 1.0;  // every k-subset contains a success
  return 1.0 - choose(n - c, k) / choose(n, k);
}

double pass_hat_k(std::span<const double> progresses, int k, double threshold) {
  validate_k(k, progresses.size());
  const long long n = static_cast<long long>(progresses.size());
  const long long c = success_count(progresses, threshold);
  if (c < k) return 0.0;
  if (c == n) return 1.0;
  return choose(c, k) / choose(n, k);
}

double auc(const ProgressCurve& curve, AucAxis axis) {
  if (curve.values.empty()) {
    throw std::invalid_argument("auc of an empty curve");
  }
  const int t_max = curve.t_max();
  if (axis == AucAxis::turn_anchored) {
    if (t_max == 1) return curve.value_at(1);
    double area = 0.0;
    for (int t = 1; t < t_max; ++t) {
      area += (curve.value_at(t) + curve.value_at(t + 1)) / 2.0;
    }
    return area / static_cast<double>(t_max - 1);
  }
  // zero_anchored: segment [0,1] rises from p(0) = 0.
  double area = curve.value_at(1) / 2.0;
  for (int t = 1; t < t_max; ++t) {
    area += (curve.value_at(t) + curve.value_at(t + 1)) / 2.0;
  }
  return area / static_cast<double>(t_max);
}

int first_turn_at_final(const ProgressCurve& curve) {
  if (curve.values.empty()) {
    throw std::invalid_argument("empty curve");
  }
  const double final_value = curve.final_value();
  for (int t = 1; t <= curve.t_max(); ++t) {
    if (curve.value_at(t) == final_value) return t;
  }
  return curve.t_max();
}

double ppt(const ProgressCurve& curve) {
  if (curve.values.empty()) {
    throw std::invalid_argument("empty curve");
  }
  const double final_value = curve.final_value();
  if (final_value == 0.0) return 0.0;
  return final_value / static_cast<double>(first_turn_at_final(curve));
}

namespace {

double mean_over_samples(
    const std::vector<std::vector<double>>& per_sample_values, int k,
    double (*fold)(std::span<const double>, int)) {
  if (per_sample_values.empty()) {
    throw std::invalid_argument("no samples");
  }
  double total = 0.0;
  for (const auto& values : per_sample_values) {
    if (static_cast<int>(values.size()) < k) {
      throw std::invalid_argument("sample has fewer than k trials");
    }
    total += fold(std::span<const double>(values.data(),
                                          static_cast<std::size_t>(k)),
                  k);
  }
  return total / static_cast<double>(per_sample_values.size());
}

double fold_max(std::span<const double> values, int) {
  return *std::max_element(values.begin(), values.end());
}

double fold_mean(std::span<const double> values, int k) {
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(k);
}

}  // namespace

double max_progress_rate_at_k(
    const std::vector<std::vector<double>>& per_sample_progresses, int k) {
  return mean_over_samples(per_sample_progresses, k, fold_max);
}

double mean_prog_at_k(
    const std::vector<std::vector<double>>& per_sample_progresses, int k) {
  return mean_over_samples(per_sample_progresses, k, fold_mean);
}

double max_over_trials(
    const std::vector<std::vector<double>>& per_sample_values, int k) {
  return mean_over_samples(per_sample_values, k, fold_max);
}

std::pair<double, double> trial_moments(std::span<const double> z_values,
                                        int note_count) {
  if (note_count < 1) {
    throw std::invalid_argument("note_count must be >= 1");
  }
  double expectation = 0.0;
  double variance = 0.0;
  for (double z : z_values) {
    expectation += z;
    variance += z * (1.0 - z);
  }
  const auto g = static_cast<double>(note_count);
  return {expectation / g, variance / (g * g)};
}

SampleMetrics compute_sample_metrics(const std::vector<TrialOutcome>& outcomes,
                                     PersonaKind persona,
                                     const std::string& dataset_tag, int k,
                                     double threshold, AucAxis axis) {
  if (outcomes.empty()) {
    throw std::invalid_argument("no trial outcomes");
  }
  validate_k(k, outcomes.size());

  std::vector<double> progresses;
  std::vector<double> aucs;
  std::vector<double> ppts;
  progresses.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto& outcome = outcomes[static_cast<std::size_t>(i)];
    progresses.push_back(outcome.final_progress);
    aucs.push_back(auc(outcome.curve, axis));
    ppts.push_back(ppt(outcome.curve));
  }

  SampleMetrics metrics;
  metrics.sample_id = outcomes.front().sample_id;
  metrics.dataset_tag = dataset_tag;
  metrics.persona = persona;
  metrics.k = k;
  metrics.threshold = threshold;
  metrics.mean_prog = fold_mean(progresses, k);
  metrics.max_prog = fold_max(progresses, k);
  metrics.max_auc = fold_max(aucs, k);
  metrics.max_ppt = fold_max(ppts, k);
  metrics.pass_at = pass_at_k(progresses, k, threshold);
  metrics.pass_hat = pass_hat_k(progresses, k, threshold);
  return metrics;
}

MeanWithCi mean_with_ci(std::span<const double> values) {
  MeanWithCi result;
  result.count = static_cast<int>(values.size());
  if (values.empty()) return result;
  result.mean = std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(values.size());
  if (values.size() < 2) return result;
  double ss = 0.0;
  for (double v : values) {
    ss += (v - result.mean) * (v - result.mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  result.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return result;
}

}  // namespace ted
