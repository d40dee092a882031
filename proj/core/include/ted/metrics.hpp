#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ted/judge.hpp"
#include "ted/trajectory.hpp"

namespace ted {

/// Binomial coefficient. Exact integer arithmetic up to n = 62, log-space
/// beyond that (n up to ~10^3 without overflow).
double choose(long long n, long long k);

double log_choose(long long n, long long k);

/// Probability that at least one of k trials sampled from n succeeds, where
/// a trial succeeds iff its progress reaches the threshold:
/// 1 - C(n-c, k) / C(n, k). With n = k this is the max success indicator.
double pass_at_k(std::span<const double> progresses, int k, double threshold);

/// Probability that all k sampled trials succeed: C(c, k) / C(n, k).
double pass_hat_k(std::span<const double> progresses, int k, double threshold);

enum class AucAxis {
  /// Trapezoids over turns [1, T_max], normalized by (T_max - 1); a curve
  /// that is 1 from turn 1 scores exactly 1. T_max = 1 returns p(1).
  turn_anchored,
  /// Integration from t = 0 with p(0) = 0, normalized by T_max.
  zero_anchored,
};

/// Normalized area under the per-turn progress curve.
double auc(const ProgressCurve& curve, AucAxis axis = AucAxis::turn_anchored);

/// Progress per turn: terminal progress divided by the earliest turn that
/// attains it; 0 when the terminal progress is 0.
double ppt(const ProgressCurve& curve);

/// Earliest turn attaining the curve's terminal value (1 when the curve is
/// all zero).
int first_turn_at_final(const ProgressCurve& curve);

/// Per sample: max of final progress over the first k trials; mean over
/// samples.
double max_progress_rate_at_k(
    const std::vector<std::vector<double>>& per_sample_progresses, int k);

/// Per sample: mean of final progress over the first k trials; mean over
/// samples.
double mean_prog_at_k(
    const std::vector<std::vector<double>>& per_sample_progresses, int k);

/// Per sample: max of an arbitrary per-trial metric over the first k trials;
/// mean over samples. Backs MaxAUC@k and MaxPPT@k.
double max_over_trials(
    const std::vector<std::vector<double>>& per_sample_values, int k);

/// Expectation and variance of trial progress under the independent-Bernoulli
/// model: (sum z / |G|, sum z(1-z) / |G|^2).
std::pair<double, double> trial_moments(std::span<const double> z_values,
                                        int note_count);

/// One trial's judged outcome, the metrics-facing slice of a judge artifact.
struct TrialOutcome {
  std::string sample_id;
  int trial_index = 1;
  double final_progress = 0.0;
  ProgressCurve curve;
  std::vector<SubgoalAssessment> assessments;
};

/// Per-sample values of the Table-style metric set.
struct SampleMetrics {
  std::string sample_id;
  std::string dataset_tag;
  PersonaKind persona = PersonaKind::expert;
  int k = 1;
  double threshold = 1.0;
  double mean_prog = 0.0;
  double max_prog = 0.0;
  double max_auc = 0.0;
  double max_ppt = 0.0;
  double pass_at = 0.0;
  double pass_hat = 0.0;
};

SampleMetrics compute_sample_metrics(const std::vector<TrialOutcome>& outcomes,
                                     PersonaKind persona,
                                     const std::string& dataset_tag, int k,
                                     double threshold, AucAxis axis);

/// Mean and normal-approximation 95% confidence half-width.
struct MeanWithCi {
  double mean = 0.0;
  double ci95 = 0.0;
  int count = 0;
};

MeanWithCi mean_with_ci(std::span<const double> values);

}  // namespace ted
