#include "ted/dataset.hpp"

#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "ted/prompts.hpp"

namespace ted {

using json = nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DatasetError("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    throw DatasetError("cannot write " + path.string());
  }
  out << content;
}

}  // namespace

std::vector<TaskSample> load_dataset(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DatasetError("dataset parse error in " + path.string() + ": " +
                       e.what());
  }
  if (!j.is_array()) {
    throw DatasetError("dataset file must be a JSON list of samples");
  }

  std::vector<TaskSample> samples;
  std::vector<std::string> violations;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    TaskSample sample;
    try {
      sample = detail::sample_from_json(j[i]);
    } catch (const json::exception& e) {
      throw DatasetError("sample " + std::to_string(i) + " malformed: " +
                         e.what());
    }
    const ValidationResult result = validate_sample(sample);
    for (const auto& violation : result.violations) {
      violations.push_back("sample '" + sample.id + "': " + violation);
    }
    if (!ids.insert(sample.id).second) {
      violations.push_back("duplicate sample id '" + sample.id + "'");
    }
    samples.push_back(std::move(sample));
  }
  if (!violations.empty()) {
    std::string detail;
    for (const auto& violation : violations) {
      detail += "\n  " + violation;
    }
    throw DatasetError("dataset rejected:" + detail);
  }
  return samples;
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<TaskSample>& samples) {
  json j = json::array();
  for (const auto& sample : samples) {
    j.push_back(detail::sample_to_json(sample));
  }
  write_file(path, j.dump(2) + "\n");
}

std::vector<MilestoneScenario> load_scenarios(
    const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DatasetError("scenario parse error in " + path.string() + ": " +
                       e.what());
  }
  std::vector<MilestoneScenario> scenarios;
  for (const auto& sj : j) {
    MilestoneScenario scenario;
    scenario.scenario_name = sj.at("scenario_name").get<std::string>();
    scenario.description = sj.value("description", std::string{});
    for (const auto& mj : sj.at("milestones")) {
      Milestone milestone;
      milestone.index = mj.at("index").get<int>();
      milestone.constraint_type = mj.value("constraint_type", std::string{});
      milestone.details = mj.at("details").get<std::string>();
      scenario.milestones.push_back(std::move(milestone));
    }
    if (sj.contains("dag_edges")) {
      for (const auto& ej : sj["dag_edges"]) {
        scenario.dag_edges.emplace_back(ej.at(0).get<int>(), ej.at(1).get<int>());
      }
    }
    scenarios.push_back(std::move(scenario));
  }
  return scenarios;
}

namespace {

void check_acyclic(const MilestoneScenario& scenario) {
  const int n = static_cast<int>(scenario.milestones.size());
  std::vector<int> indegree(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> adjacency(static_cast<std::size_t>(n));
  for (const auto& [from, to] : scenario.dag_edges) {
    if (from < 0 || from >= n || to < 0 || to >= n) {
      throw DatasetError("dag edge (" + std::to_string(from) + ", " +
                         std::to_string(to) + ") references invalid milestone");
    }
    adjacency[static_cast<std::size_t>(from)].push_back(to);
    ++indegree[static_cast<std::size_t>(to)];
  }
  std::queue<int> ready;
  for (int i = 0; i < n; ++i) {
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push(i);
  }
  int visited = 0;
  while (!ready.empty()) {
    const int node = ready.front();
    ready.pop();
    ++visited;
    for (int next : adjacency[static_cast<std::size_t>(node)]) {
      if (--indegree[static_cast<std::size_t>(next)] == 0) ready.push(next);
    }
  }
  if (visited != n) {
    throw DatasetError("cycle in dag_edges of scenario " +
                       scenario.scenario_name);
  }
}

}  // namespace

std::string dependency_analysis(const MilestoneScenario& scenario) {
  if (scenario.dag_edges.empty()) {
    return "No dependencies between milestones.";
  }
  std::string analysis;
  for (const auto& [from, to] : scenario.dag_edges) {
    analysis += "Milestone " + std::to_string(to) + " depends on milestone " +
                std::to_string(from) + ".\n";
  }
  return analysis;
}

std::vector<GradingNote> convert_milestones(Provider& gateway,
                                            const MilestoneScenario& scenario,
                                            const ConvertConfig& config) {
  check_acyclic(scenario);

  std::string milestone_lines;
  for (const auto& milestone : scenario.milestones) {
    milestone_lines += "Milestone " + std::to_string(milestone.index) + ": " +
                       milestone.details;
    if (!milestone.constraint_type.empty()) {
      milestone_lines += " (constraint type: " + milestone.constraint_type + ")";
    }
    milestone_lines += "\n";
  }
  json edges = json::array();
  for (const auto& [from, to] : scenario.dag_edges) {
    edges.push_back(json::array({from, to}));
  }

  const std::string body = fill_template(
      prompts::milestone_conversion(),
      {{"scenario_name", scenario.scenario_name},
       {"scenario_description", scenario.description},
       {"total_milestones", std::to_string(scenario.milestones.size())},
       {"milestone_edge_list", edges.dump()},
       {"dependency_analysis", dependency_analysis(scenario)},
       {"milestones", milestone_lines},
       {"json_schema",
        R"(["subgoal for milestone 0", ["subgoal a for milestone 1", "subgoal b for milestone 1"], ...])"}});

  ChatRequest request;
  request.model = config.model;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = "convert";
  request.messages.push_back({Role::user, body, {}});

  for (int attempt = 0; attempt <= config.json_retries; ++attempt) {
    const ChatResult result = gateway.complete(request);
    std::string text = result.content;
    const auto bracket = text.find('[');
    if (bracket == std::string::npos) continue;
    text = text.substr(bracket);
    const auto close = text.rfind(']');
    if (close != std::string::npos) {
      text = text.substr(0, close + 1);
    }
    json parsed = json::parse(text, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_array()) continue;

    std::vector<GradingNote> notes;
    int counter = 1;
    bool well_formed = true;
    for (const auto& entry : parsed) {
      if (entry.is_string()) {
        notes.push_back(GradingNote{"note_" + std::to_string(counter++),
                                    entry.get<std::string>()});
      } else if (entry.is_array()) {
        for (const auto& inner : entry) {
          if (!inner.is_string()) {
            well_formed = false;
            break;
          }
          notes.push_back(GradingNote{"note_" + std::to_string(counter++),
                                      inner.get<std::string>()});
        }
      } else {
        well_formed = false;
      }
      if (!well_formed) break;
    }
    if (well_formed && !notes.empty()) {
      return notes;
    }
  }
  throw DatasetError("milestone conversion for " + scenario.scenario_name +
                     " stayed malformed after retries");
}

void save_staging(const std::filesystem::path& path,
                  const std::vector<StagedScenario>& staged) {
  json j = json::array();
  for (const auto& entry : staged) {
    json notes = json::array();
    for (const auto& note : entry.notes) {
      notes.push_back(json{{"id", note.id}, {"text", note.text}});
    }
    j.push_back(json{{"scenario_name", entry.scenario_name},
                     {"description", entry.description},
                     {"notes", std::move(notes)}});
  }
  write_file(path, j.dump(2) + "\n");
}

std::vector<StagedScenario> load_staging(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DatasetError("staging parse error in " + path.string() + ": " +
                       e.what());
  }
  std::vector<StagedScenario> staged;
  for (const auto& sj : j) {
    StagedScenario entry;
    entry.scenario_name = sj.at("scenario_name").get<std::string>();
    entry.description = sj.value("description", std::string{});
    for (const auto& nj : sj.at("notes")) {
      entry.notes.push_back(GradingNote{nj.at("id").get<std::string>(),
                                        nj.at("text").get<std::string>()});
    }
    staged.push_back(std::move(entry));
  }
  return staged;
}

std::vector<TaskSample> promote_staging(
    const std::vector<StagedScenario>& staged, const PromoteOptions& options) {
  std::vector<TaskSample> samples;
  std::vector<std::string> violations;
  for (const auto& entry : staged) {
    TaskSample sample;
    sample.id = entry.scenario_name;
    sample.instruction = entry.description;
    sample.grading_notes = entry.notes;
    sample.max_turns = options.max_turns;
    sample.n_trials = options.n_trials;
    sample.dataset_tag = options.dataset_tag;
    const ValidationResult result = validate_sample(sample);
    for (const auto& violation : result.violations) {
      violations.push_back("scenario '" + sample.id + "': " + violation);
    }
    samples.push_back(std::move(sample));
  }
  if (!violations.empty()) {
    std::string detail;
    for (const auto& violation : violations) {
      detail += "\n  " + violation;
    }
    throw DatasetError("staging rejected:" + detail);
  }
  return samples;
}

}  // namespace ted
