#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ted/gateway.hpp"
#include "ted/trajectory.hpp"

namespace ted {

enum class Grade { complete, incomplete };

enum class ParsedGrade { complete, incomplete, unparseable };

/// Scans for the last occurrence of GRADE:<spaces><letter>.
/// C maps to complete, I to incomplete, anything else is unparseable.
ParsedGrade parse_grade(const std::string& reply);

struct SubgoalVerdict {
  Grade grade = Grade::incomplete;
  std::string explanation;  // full judge reply
  int run_index = 0;        // q in 1..Q
  bool unparseable = false; // reply never yielded a grade; scored incomplete

  friend bool operator==(const SubgoalVerdict&, const SubgoalVerdict&) = default;
};

/// Q verdicts for one (sample, trajectory, grading-note) triple.
struct SubgoalAssessment {
  std::string grading_note_id;
  std::vector<SubgoalVerdict> verdicts;
  double z = 0.0;  // (#complete)/Q
  Grade majority = Grade::incomplete;
  bool invalid = false;  // every run unparseable

  friend bool operator==(const SubgoalAssessment&, const SubgoalAssessment&) =
      default;
};

struct JudgeConfig {
  std::string model = "gpt-4.1";
  double temperature = 0.7;
  int max_output_tokens = 1024;
  int q = 5;              // odd, so majority votes cannot tie
  int parse_retries = 2;  // extra calls after an unparseable reply
};

/// One judge call on the full prompt assembled from the transcript views.
SubgoalVerdict judge_once(Provider& gateway, const TaskSample& sample,
                          const GradingNote& note, const Trajectory& trajectory,
                          const JudgeConfig& config, int run_index = 1);

/// Q independent judge runs with majority vote. Q must be odd.
SubgoalAssessment assess_subgoal(Provider& gateway, const TaskSample& sample,
                                 const GradingNote& note,
                                 const Trajectory& trajectory,
                                 const JudgeConfig& config);

/// Proportion of grading notes whose majority verdict is complete.
double progress(Provider& gateway, const TaskSample& sample,
                const Trajectory& trajectory, const JudgeConfig& config);

enum class CurveMode { bisect, exhaustive };

/// Per-turn progress for one trajectory. values[t-1] is p(t) for t in
/// 1..t_max; progress is held flat after early termination. Non-decreasing
/// by construction.
struct ProgressCurve {
  std::string sample_id;
  int trial_index = 1;
  std::vector<double> values;
  std::map<std::string, std::optional<int>> achieved_turn;

  int t_max() const { return static_cast<int>(values.size()); }
  double value_at(int t) const { return values.at(static_cast<std::size_t>(t - 1)); }
  double final_value() const { return values.empty() ? 0.0 : values.back(); }

  friend bool operator==(const ProgressCurve&, const ProgressCurve&) = default;
};

struct CurveResult {
  ProgressCurve curve;
  /// Assessments of the full trajectory (the t = |turns| prefix), reused for
  /// diagnosis so the curve and the final progress always agree.
  std::vector<SubgoalAssessment> final_assessments;
};

/// For each grading note, finds the earliest prefix the majority judges
/// complete. Exhaustive mode probes every prefix; bisect mode binary-searches
/// over turns, relying on completed subgoals staying completed.
CurveResult progress_curve(Provider& gateway, const TaskSample& sample,
                           const Trajectory& trajectory, CurveMode mode,
                           const JudgeConfig& config);

/// Judge artifact persisted per trial; input to metrics and diagnosis.
struct TrialJudgeArtifact {
  std::string sample_id;
  PersonaKind persona = PersonaKind::expert;
  int trial_index = 1;
  std::vector<SubgoalAssessment> assessments;  // full-trajectory judgments
  ProgressCurve curve;
  double final_progress = 0.0;

  friend bool operator==(const TrialJudgeArtifact&, const TrialJudgeArtifact&) =
      default;
};

std::string serialize(const TrialJudgeArtifact& artifact);
TrialJudgeArtifact deserialize_judge_artifact(const std::string& json_text);

}  // namespace ted
