#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ted/gateway.hpp"
#include "ted/judge.hpp"
#include "ted/trajectory.hpp"

namespace ted {

/// A (trial, grading-note) pair whose judged success probability is below 1:
/// either a consistent failure (z = 0) or judge disagreement (0 < z < 1).
struct ErrorCandidate {
  std::string id;  // "<sample>/<trial>/<note_id>", used as error_id downstream
  std::string sample_id;
  int trial_index = 1;
  GradingNote note;
  std::vector<std::string> explanations;  // all Q judge explanations
  double z = 0.0;

  friend bool operator==(const ErrorCandidate&, const ErrorCandidate&) = default;
};

struct LowLevelError {
  std::string candidate_id;
  std::string error_type;
  std::string explanation;
  bool unidentified = false;  // identification output stayed malformed

  friend bool operator==(const LowLevelError&, const LowLevelError&) = default;
};

struct ErrorCluster {
  std::string label;
  std::vector<std::string> error_types;
  std::vector<std::string> error_ids;

  friend bool operator==(const ErrorCluster&, const ErrorCluster&) = default;
};

struct DiagnoseConfig {
  std::string model = "gpt-4.1";
  double temperature = 0.2;
  int max_output_tokens = 1024;
  int json_retries = 2;  // extra calls after a malformed strict-JSON reply
};

/// One candidate per (trial, note) with z < 1, carrying all Q explanations.
std::vector<ErrorCandidate> build_candidates(
    const std::string& sample_id, int trial_index,
    const std::vector<GradingNote>& notes,
    const std::vector<SubgoalAssessment>& assessments);

/// Consistent failures identify from the first explanation; disagreements
/// identify every explanation and resolve with one selective call.
LowLevelError identify_error(Provider& gateway, const ErrorCandidate& candidate,
                             const DiagnoseConfig& config);

/// One clustering call over all error types and the subgoals. The reply is
/// mechanically validated: the clusters must partition the input error ids,
/// and error types naming different tools must not share a cluster. A
/// violation triggers one repair retry, then a DiagnoseError.
std::vector<ErrorCluster> cluster_errors(
    Provider& gateway, const std::vector<LowLevelError>& errors,
    const std::vector<GradingNote>& notes, const DiagnoseConfig& config,
    const std::vector<std::string>& tool_lexicon = {});

/// Validation used by cluster_errors, exposed for tests. Returns the list of
/// violations (empty = valid).
std::vector<std::string> validate_clusters(
    const std::vector<ErrorCluster>& clusters,
    const std::vector<LowLevelError>& errors,
    const std::vector<std::string>& tool_lexicon);

/// snake_case identifiers (candidate tool names) found in the error types;
/// the default lexicon when none is supplied.
std::vector<std::string> derive_tool_lexicon(
    const std::vector<LowLevelError>& errors);

struct ScatterPoint {
  int trial_index = 1;
  double expectation = 0.0;
  double variance = 0.0;

  friend bool operator==(const ScatterPoint&, const ScatterPoint&) = default;
};

/// One (E[progress], Var[progress]) point per trial, from per-note z values.
std::vector<ScatterPoint> scatter_data(
    const std::vector<TrialJudgeArtifact>& artifacts);

/// Appends a delimited section listing the cluster labels verbatim to the
/// agent instruction. Re-running replaces the section; an empty cluster list
/// leaves the instruction unchanged.
std::string error_insertion(const std::string& agent_instruction,
                            const std::vector<ErrorCluster>& clusters);

/// Full diagnosis output for one trial set, persisted as JSON.
struct DiagnosisReport {
  std::vector<ErrorCandidate> candidates;
  std::vector<LowLevelError> low_level_errors;
  std::vector<ErrorCluster> clusters;
};

std::string serialize(const DiagnosisReport& report);
DiagnosisReport deserialize_diagnosis(const std::string& json_text);

}  // namespace ted
