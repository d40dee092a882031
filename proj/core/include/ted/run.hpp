#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ted/gateway.hpp"
#include "ted/judge.hpp"
#include "ted/metrics.hpp"
#include "ted/trajectory.hpp"

namespace ted {

/// All run knobs in one place. Loadable from a JSON file with ${ENV}
/// interpolation; CLI flags override individual fields.
struct RunConfig {
  std::filesystem::path dataset;
  std::vector<PersonaKind> personas = {PersonaKind::expert,
                                       PersonaKind::non_expert};

  // Provider: live | scripted:<path> | replay:<path> | record:<path>
  std::string provider = "live";
  std::string base_url = "https://api.openai.com";
  std::string api_key_env = "TED_API_KEY";

  std::string user_model = "gpt-4.1";
  double user_temperature = 0.7;
  std::string agent_model = "gpt-4.1";
  double agent_temperature = 0.0;
  std::string judge_model = "gpt-4.1";
  double judge_temperature = 0.7;
  std::string diagnose_model = "gpt-4.1";
  double diagnose_temperature = 0.2;
  int max_output_tokens = 1024;

  // Agent under test: reference (built-in demo tools) | scripted:<path>
  std::string agent = "reference";
  std::string agent_desc;
  std::string agent_system_prompt = "You are a helpful assistant.";
  int tool_budget = 10;
  /// Diagnosis report whose cluster labels get appended to the agent system
  /// prompt before the run (the error-insertion remediation).
  std::optional<std::filesystem::path> error_insertion_from;

  std::optional<int> n_trials;   // overrides per-sample n
  std::optional<int> max_turns;  // overrides per-sample cap
  /// k values for the @k metrics; empty means one entry, the effective n.
  /// The first entry is the headline k used in the summary table.
  std::vector<int> k_values;
  int q = 5;
  double threshold = 1.0;
  AucAxis auc_axis = AucAxis::turn_anchored;
  CurveMode curve_mode = CurveMode::bisect;
  std::string termination_token = "###STOP###";
  std::string diagnose_scope = "per_trial";  // per_trial | pooled

  std::filesystem::path out = "runs";
  std::string run_id = "run";
  int workers = 1;
  std::uint64_t seed = 0;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Throws ConfigError on inconsistent settings (even k, k > n, bad scope...).
void validate_config(const RunConfig& config);

struct StageFailure {
  std::string sample_id;
  std::string persona;
  int trial_index = 0;  // 0 when the failure is not trial-scoped
  std::string stage;
  std::string message;
};

struct RunSummary {
  std::filesystem::path run_dir;
  std::vector<StageFailure> failures;

  bool ok() const { return failures.empty(); }
};

/// Full pipeline: talk, judge, diagnose, metrics + report. Every stage's
/// artifacts are persisted before the next begins and keyed by input
/// fingerprints, so re-invocation resumes instead of recomputing.
/// `provider_override` substitutes the configured provider (tests inject
/// callback or recording providers this way).
RunSummary run_eval(const RunConfig& config, Provider* provider_override = nullptr);

// Individual stages, same caching behavior.
RunSummary run_talk(const RunConfig& config, Provider* provider_override = nullptr);
RunSummary run_judge(const RunConfig& config, Provider* provider_override = nullptr);
RunSummary run_diagnose(const RunConfig& config,
                        Provider* provider_override = nullptr);
/// Metrics + report emission from persisted artifacts; no model calls.
RunSummary run_metrics(const RunConfig& config);

/// Emits report files from whatever artifacts exist under the run directory:
/// report/metrics.csv (per-sample, full precision), report/aggregates.csv,
/// report/curves.csv and report/summary.md (two decimals). Returns false and
/// writes a "no results" summary when the run produced nothing.
bool emit_report(const RunConfig& config);

std::filesystem::path run_directory(const RunConfig& config);

}  // namespace ted
