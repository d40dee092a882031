#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ted/gateway.hpp"
#include "ted/trajectory.hpp"

namespace ted {

/// Loads a dataset file (a JSON list of TaskSample records). Every sample
/// must validate; ids must be unique; any failure rejects the whole file.
std::vector<TaskSample> load_dataset(const std::filesystem::path& path);

void save_dataset(const std::filesystem::path& path,
                  const std::vector<TaskSample>& samples);

struct Milestone {
  int index = 0;
  std::string constraint_type;  // snapshot/addition/removal/update_similarity
  std::string details;
};

/// A source-benchmark scenario: milestones plus a DAG of dependencies where
/// edge (i, j) means milestone j depends on milestone i.
struct MilestoneScenario {
  std::string scenario_name;
  std::string description;
  std::vector<Milestone> milestones;
  std::vector<std::pair<int, int>> dag_edges;
};

std::vector<MilestoneScenario> load_scenarios(const std::filesystem::path& path);

struct ConvertConfig {
  std::string model = "gpt-4.1";
  double temperature = 0.2;
  int max_output_tokens = 2048;
  int json_retries = 2;
};

/// Human-readable dependency lines generated from the edge list, fed into
/// the conversion prompt.
std::string dependency_analysis(const MilestoneScenario& scenario);

/// One model call converting milestones into grading notes. The reply is a
/// JSON array with one entry per milestone, each a string or an array of
/// strings. Throws on cycles in the DAG and on malformed replies after
/// retries. Output is meant for a staging file and human review, never for
/// direct use as a runnable dataset.
std::vector<GradingNote> convert_milestones(Provider& gateway,
                                            const MilestoneScenario& scenario,
                                            const ConvertConfig& config = {});

/// Staged conversion output awaiting review.
struct StagedScenario {
  std::string scenario_name;
  std::string description;
  std::vector<GradingNote> notes;
};

void save_staging(const std::filesystem::path& path,
                  const std::vector<StagedScenario>& staged);
std::vector<StagedScenario> load_staging(const std::filesystem::path& path);

struct PromoteOptions {
  int max_turns = 8;
  int n_trials = 8;
  std::string dataset_tag = "converted";
};

/// Turns reviewed staging entries into a validated dataset file.
std::vector<TaskSample> promote_staging(
    const std::vector<StagedScenario>& staged, const PromoteOptions& options);

}  // namespace ted
