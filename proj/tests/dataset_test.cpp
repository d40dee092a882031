#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ted/dataset.hpp"
#include "test_support.hpp"

using namespace ted;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path(fs::temp_directory_path() / name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { fs::remove(path); }
};

MilestoneScenario wifi_scenario() {
  MilestoneScenario scenario;
  scenario.scenario_name = "find_current_city_low_battery_mode";
  scenario.description = "Locate the user while low battery mode blocks radios.";
  scenario.milestones = {
      {0, "snapshot_similarity", "low battery mode is disabled"},
      {1, "update_similarity", "wifi is enabled"},
      {2, "snapshot_similarity",
       "tool_trace shows get_current_location returning Cupertino"},
  };
  scenario.dag_edges = {{0, 1}, {0, 2}};
  return scenario;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("load_dataset accepts a valid file and round-trips") {
  const auto samples = testing::toy_dataset();
  const fs::path path = fs::temp_directory_path() / "ted_dataset_ok.json";
  save_dataset(path, samples);
  const auto loaded = load_dataset(path);
  CHECK(loaded == samples);
  fs::remove(path);
}

TEST_CASE("the shipped toy dataset stays loadable") {
  const auto samples =
      load_dataset(fs::path(TED_SOURCE_DIR) / "datasets" / "toy.json");
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].id == "wifi_city");
  CHECK(samples[1].grading_notes.size() == 3);
  const auto scenarios = load_scenarios(
      fs::path(TED_SOURCE_DIR) / "datasets" / "scenarios_example.json");
  REQUIRE(scenarios.size() == 2);
  CHECK(scenarios[0].dag_edges.size() == 5);
}

TEST_CASE("load_dataset preserves sample counts at benchmark scale") {
  std::vector<TaskSample> many;
  for (int i = 0; i < 37; ++i) {
    TaskSample sample = testing::toy_dataset().front();
    sample.id = "scenario_" + std::to_string(i);
    many.push_back(std::move(sample));
  }
  const fs::path path = fs::temp_directory_path() / "ted_dataset_37.json";
  save_dataset(path, many);
  CHECK(load_dataset(path).size() == 37);
  fs::remove(path);
}

TEST_CASE("load_dataset is all-or-nothing") {
  SUBCASE("duplicate sample ids reject the whole file") {
    auto samples = testing::toy_dataset();
    samples.push_back(samples.front());
    const fs::path path = fs::temp_directory_path() / "ted_dataset_dup.json";
    save_dataset(path, samples);
    CHECK_THROWS_WITH_AS(load_dataset(path),
                         doctest::Contains("duplicate sample id"), DatasetError);
    fs::remove(path);
  }
  SUBCASE("one invalid sample rejects the whole file") {
    auto samples = testing::toy_dataset();
    samples[1].grading_notes.clear();
    const fs::path path = fs::temp_directory_path() / "ted_dataset_bad.json";
    save_dataset(path, samples);
    CHECK_THROWS_WITH_AS(load_dataset(path),
                         doctest::Contains("empty grading_notes"), DatasetError);
    fs::remove(path);
  }
  SUBCASE("malformed JSON names the parse context") {
    TempFile bad("ted_dataset_parse.json", "[{\"id\": \"x\", }]");
    CHECK_THROWS_AS(load_dataset(bad.path), DatasetError);
  }
  SUBCASE("a non-list document is rejected") {
    TempFile bad("ted_dataset_obj.json", "{}");
    CHECK_THROWS_WITH_AS(load_dataset(bad.path), doctest::Contains("JSON list"),
                         DatasetError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset("/nonexistent/nowhere.json"), DatasetError);
  }
}

TEST_CASE("dependency_analysis renders edge semantics") {
  const MilestoneScenario scenario = wifi_scenario();
  const std::string analysis = dependency_analysis(scenario);
  CHECK(analysis.find("Milestone 1 depends on milestone 0.") != std::string::npos);
  CHECK(analysis.find("Milestone 2 depends on milestone 0.") != std::string::npos);
  MilestoneScenario bare = scenario;
  bare.dag_edges.clear();
  CHECK(dependency_analysis(bare).find("No dependencies") != std::string::npos);
}

TEST_CASE("convert_milestones fills the template and parses mixed arrays") {
  const MilestoneScenario scenario = wifi_scenario();
  std::string seen;
  CallbackProvider provider([&](const ChatRequest& request) {
    seen = request.messages.back().content;
    return ChatResult{
        .content = R"([
          "Agent should ensure low battery mode is disabled",
          ["Agent should enable WiFi after ensuring low battery mode is disabled",
           "Agent should enable location services after ensuring low battery mode is disabled"],
          "Agent should call get_current_location to retrieve the user's location"
        ])"};
  });
  const auto notes = convert_milestones(provider, scenario);
  REQUIRE(notes.size() == 4);
  CHECK(notes[0].id == "note_1");
  CHECK(notes[1].text.find("after ensuring low battery mode is disabled") !=
        std::string::npos);
  // template carried scenario, milestones and the dependency analysis
  CHECK(seen.find(scenario.scenario_name) != std::string::npos);
  CHECK(seen.find("TOTAL MILESTONES: 3") != std::string::npos);
  CHECK(seen.find("Milestone 1 depends on milestone 0.") != std::string::npos);
  CHECK(seen.find("Milestone 2: tool_trace shows get_current_location") !=
        std::string::npos);
  CHECK(seen.find("[[0,1],[0,2]]") != std::string::npos);
  // communication milestones get the inform/tell phrasing rule
  CHECK(seen.find("Agent should inform/tell the user [content]") !=
        std::string::npos);
  CHECK(seen.find("snapshot_similarity: Agent should achieve the target state") !=
        std::string::npos);
}

TEST_CASE("convert_milestones retries malformed replies, then errors") {
  const MilestoneScenario scenario = wifi_scenario();
  SUBCASE("retry rescues") {
    auto provider = ScriptedProvider::from_texts(
        {"not json at all", R"(["Agent should enable WiFi"])"});
    const auto notes = convert_milestones(*provider, scenario);
    REQUIRE(notes.size() == 1);
    CHECK(notes[0].text == "Agent should enable WiFi");
  }
  SUBCASE("persistent garbage is an error") {
    auto provider = ScriptedProvider::from_texts({"x", "y", "z"});
    CHECK_THROWS_AS(convert_milestones(*provider, scenario), DatasetError);
  }
}

TEST_CASE("convert_milestones rejects cyclic dependency graphs") {
  MilestoneScenario cyclic = wifi_scenario();
  cyclic.dag_edges = {{0, 1}, {1, 2}, {2, 0}};
  CallbackProvider provider([](const ChatRequest&) {
    return ChatResult{.content = "[]"};
  });
  CHECK_THROWS_WITH_AS(convert_milestones(provider, cyclic),
                       doctest::Contains("cycle"), DatasetError);
}

TEST_CASE("scenario files load") {
  const std::string content = R"json([{
    "scenario_name": "convert_currency",
    "description": "Convert 2048 USD to CNY",
    "milestones": [
      {"index": 0, "constraint_type": "snapshot_similarity",
       "details": "tool_trace shows convert_currency(amount=2048, USD, CNY)"}
    ]
  }])json";
  TempFile file("ted_scenarios.json", content);
  const auto scenarios = load_scenarios(file.path);
  REQUIRE(scenarios.size() == 1);
  CHECK(scenarios[0].scenario_name == "convert_currency");
  CHECK(scenarios[0].milestones.size() == 1);
  CHECK(scenarios[0].dag_edges.empty());
}

TEST_CASE("staging round-trips and promotes into a validated dataset") {
  std::vector<StagedScenario> staged = {
      {"convert_currency",
       "Ask the assistant to convert 2048 USD to CNY.",
       {{"note_1",
         "Agent should call convert_currency with the arguments amount=2048"}}},
  };
  const fs::path path = fs::temp_directory_path() / "ted_staging.json";
  save_staging(path, staged);
  const auto loaded = load_staging(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].scenario_name == staged[0].scenario_name);
  CHECK(loaded[0].notes == staged[0].notes);
  fs::remove(path);

  PromoteOptions options;
  options.max_turns = 8;
  options.n_trials = 8;
  options.dataset_tag = "toolsandbox";
  const auto samples = promote_staging(loaded, options);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].id == "convert_currency");
  CHECK(samples[0].max_turns == 8);
  CHECK(samples[0].n_trials == 8);
  CHECK(samples[0].dataset_tag == "toolsandbox");
  CHECK(validate_sample(samples[0]).ok());

  SUBCASE("staged scenarios without notes are rejected") {
    staged[0].notes.clear();
    CHECK_THROWS_WITH_AS(promote_staging(staged, options),
                         doctest::Contains("empty grading_notes"), DatasetError);
  }
}

}  // TEST_SUITE
