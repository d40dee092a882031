// ted: user-aware evaluation harness for conversational tool-using agents.
//
// Verbs: talk, judge, metrics, diagnose, run, report, convert, promote.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ted/dataset.hpp"
#include "ted/gateway.hpp"
#include "ted/run.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_file;
  std::string dataset;
  std::vector<std::string> personas;
  std::string provider;
  std::string out;
  std::string run_id;
  std::string agent;
  std::string auc_axis;
  std::string curve_mode;
  std::string diagnose_scope;
  int trials = -1;
  std::vector<int> k;
  int q = -1;
  int max_turns = -1;
  int workers = -1;
  double threshold = -1.0;
  bool resume = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_file, "Run config file (JSON)");
  cmd->add_option("--dataset", flags.dataset, "Dataset file (JSON list of samples)");
  cmd->add_option("--persona", flags.personas,
                  "Persona to run: expert or non_expert (repeatable)");
  cmd->add_option("--provider", flags.provider,
                  "live | scripted:<path> | replay:<path> | record:<path>");
  cmd->add_option("--out", flags.out, "Output directory for run artifacts");
  cmd->add_option("--run-id", flags.run_id, "Run identifier under --out");
  cmd->add_option("--agent", flags.agent, "reference | scripted:<path>");
  cmd->add_option("--trials", flags.trials, "Trials per sample (overrides dataset)");
  cmd->add_option("--k", flags.k,
                  "k for the @k metrics (repeatable; default: n)");
  cmd->add_option("--q", flags.q, "Judge runs per subgoal (odd)");
  cmd->add_option("--max-turns", flags.max_turns, "Turn cap (overrides dataset)");
  cmd->add_option("--threshold", flags.threshold, "pass@k success threshold");
  cmd->add_option("--workers", flags.workers, "Concurrent trial workers");
  cmd->add_option("--auc-axis", flags.auc_axis, "turn | zero");
  cmd->add_option("--curve-mode", flags.curve_mode, "bisect | exhaustive");
  cmd->add_option("--diagnose-scope", flags.diagnose_scope, "per_trial | pooled");
  cmd->add_flag("--resume", flags.resume,
                "Reuse artifacts from an earlier invocation of the same run id "
                "(fingerprint-matched stages are always skipped; this flag "
                "merely documents intent)");
}

ted::RunConfig build_config(const CommonFlags& flags) {
  ted::RunConfig config;
  if (!flags.config_file.empty()) {
    config = ted::load_run_config(flags.config_file);
  }
  if (!flags.dataset.empty()) config.dataset = flags.dataset;
  if (!flags.personas.empty()) {
    config.personas.clear();
    for (const auto& name : flags.personas) {
      config.personas.push_back(ted::persona_from_string(name));
    }
  }
  if (!flags.provider.empty()) config.provider = flags.provider;
  if (!flags.out.empty()) config.out = flags.out;
  if (!flags.run_id.empty()) config.run_id = flags.run_id;
  if (!flags.agent.empty()) config.agent = flags.agent;
  if (flags.trials >= 0) config.n_trials = flags.trials;
  if (!flags.k.empty()) config.k_values = flags.k;
  if (flags.q >= 0) config.q = flags.q;
  if (flags.max_turns >= 0) config.max_turns = flags.max_turns;
  if (flags.threshold >= 0.0) config.threshold = flags.threshold;
  if (flags.workers >= 0) config.workers = flags.workers;
  if (!flags.auc_axis.empty()) {
    config.auc_axis = flags.auc_axis == "zero" ? ted::AucAxis::zero_anchored
                                               : ted::AucAxis::turn_anchored;
  }
  if (!flags.curve_mode.empty()) {
    config.curve_mode = flags.curve_mode == "exhaustive"
                            ? ted::CurveMode::exhaustive
                            : ted::CurveMode::bisect;
  }
  if (!flags.diagnose_scope.empty()) config.diagnose_scope = flags.diagnose_scope;
  ted::validate_config(config);
  return config;
}

int report_summary(const ted::RunSummary& summary) {
  if (summary.ok()) {
    std::cout << "ok: artifacts under " << summary.run_dir.string() << "\n";
    return 0;
  }
  std::cerr << summary.failures.size() << " stage failure(s):\n";
  for (const auto& failure : summary.failures) {
    std::cerr << "  [" << failure.stage << "] " << failure.sample_id;
    if (!failure.persona.empty()) std::cerr << "/" << failure.persona;
    if (failure.trial_index > 0) std::cerr << "/trial_" << failure.trial_index;
    std::cerr << ": " << failure.message << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TED evaluation harness: simulate users, grade trajectories, "
               "compute turn-aware metrics, diagnose errors"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* talk = app.add_subcommand("talk", "Run user-agent conversations only");
  add_common_flags(talk, flags);
  auto* judge = app.add_subcommand("judge", "Grade persisted trajectories");
  add_common_flags(judge, flags);
  auto* metrics = app.add_subcommand("metrics", "Compute metrics and reports");
  add_common_flags(metrics, flags);
  auto* diagnose = app.add_subcommand("diagnose", "Run error analysis");
  add_common_flags(diagnose, flags);
  auto* run = app.add_subcommand("run", "All stages: talk, judge, diagnose, report");
  add_common_flags(run, flags);
  auto* report = app.add_subcommand("report", "Emit report files from artifacts");
  add_common_flags(report, flags);

  std::string scenarios_file;
  std::string staging_file;
  auto* convert = app.add_subcommand(
      "convert", "Convert milestone scenarios into staged grading notes");
  convert->add_option("--scenarios", scenarios_file, "Scenario file (JSON)")
      ->required();
  convert->add_option("--out", staging_file, "Staging file for review")
      ->required();
  convert->add_option("--config", flags.config_file, "Run config file (JSON)");
  convert->add_option("--provider", flags.provider,
                      "live | scripted:<path> | replay:<path> | record:<path>");

  std::string promote_in;
  std::string promote_out;
  int promote_max_turns = 8;
  int promote_trials = 8;
  std::string promote_tag = "converted";
  auto* promote = app.add_subcommand(
      "promote", "Turn a reviewed staging file into a runnable dataset");
  promote->add_option("staging", promote_in, "Reviewed staging file")->required();
  promote->add_option("--dataset-out", promote_out, "Dataset file to write")
      ->required();
  promote->add_option("--max-turns", promote_max_turns, "max_turns per sample");
  promote->add_option("--trials", promote_trials, "n_trials per sample");
  promote->add_option("--tag", promote_tag, "dataset_tag for the samples");

  CLI11_PARSE(app, argc, argv);

  try {
    if (promote->parsed()) {
      const auto staged = ted::load_staging(promote_in);
      ted::PromoteOptions options;
      options.max_turns = promote_max_turns;
      options.n_trials = promote_trials;
      options.dataset_tag = promote_tag;
      const auto samples = ted::promote_staging(staged, options);
      ted::save_dataset(promote_out, samples);
      std::cout << "wrote " << samples.size() << " samples to " << promote_out
                << "\n";
      return 0;
    }

    if (convert->parsed()) {
      const ted::RunConfig config = build_config(flags);
      ted::HttpProviderConfig http;
      http.base_url = config.base_url;
      if (const char* key = std::getenv(config.api_key_env.c_str())) {
        http.api_key = key;
      }
      auto provider = ted::make_provider(config.provider, http);
      ted::ConvertConfig convert_config;
      convert_config.model = config.diagnose_model;
      convert_config.temperature = config.diagnose_temperature;

      const auto scenarios = ted::load_scenarios(scenarios_file);
      std::vector<ted::StagedScenario> staged;
      for (const auto& scenario : scenarios) {
        ted::StagedScenario entry;
        entry.scenario_name = scenario.scenario_name;
        entry.description = scenario.description;
        entry.notes =
            ted::convert_milestones(*provider, scenario, convert_config);
        staged.push_back(std::move(entry));
      }
      ted::save_staging(staging_file, staged);
      std::cout << "staged " << staged.size() << " scenarios to "
                << staging_file << " (review before promoting)\n";
      return 0;
    }

    const ted::RunConfig config = build_config(flags);
    if (talk->parsed()) return report_summary(ted::run_talk(config));
    if (judge->parsed()) return report_summary(ted::run_judge(config));
    if (diagnose->parsed()) return report_summary(ted::run_diagnose(config));
    if (metrics->parsed() || report->parsed()) {
      return report_summary(ted::run_metrics(config));
    }
    if (run->parsed()) return report_summary(ted::run_eval(config));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
