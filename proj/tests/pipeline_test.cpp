#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ted/dataset.hpp"
#include "ted/diagnose.hpp"
#include "ted/run.hpp"
#include "test_support.hpp"

using namespace ted;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig toy_config(const fs::path& root, const std::string& run_id) {
  const fs::path dataset = root / "dataset.json";
  if (!fs::exists(dataset)) {
    save_dataset(dataset, testing::toy_dataset());
  }
  RunConfig config;
  config.dataset = dataset;
  config.out = root / "runs";
  config.run_id = run_id;
  config.q = 3;
  config.workers = 1;
  return config;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("run_eval produces the full artifact tree offline") {
  TempDir root("ted_pipeline_full");
  RunConfig config = toy_config(root.path, "r1");
  CallbackProvider provider(testing::pipeline_rule_reply);

  const auto net_before = HttpProvider::network_requests();
  const RunSummary summary = run_eval(config, &provider);
  CHECK(HttpProvider::network_requests() == net_before);
  CHECK(summary.ok());

  const fs::path run_dir = summary.run_dir;
  for (const std::string sample : {"wifi_city", "currency"}) {
    for (const std::string persona : {"expert", "non_expert"}) {
      for (int trial = 1; trial <= 2; ++trial) {
        CAPTURE(sample + "/" + persona + "/" + std::to_string(trial));
        CHECK(fs::exists(run_dir / sample / persona /
                         ("trial_" + std::to_string(trial) + ".json")));
        CHECK(fs::exists(run_dir / sample / persona /
                         ("trial_" + std::to_string(trial) + ".judge.json")));
      }
      CHECK(fs::exists(run_dir / sample / persona / "diagnosis.json"));
      CHECK(fs::exists(run_dir / sample / persona / "scatter.csv"));
    }
  }
  CHECK(fs::exists(run_dir / "report" / "metrics.csv"));
  CHECK(fs::exists(run_dir / "report" / "curves.csv"));
  CHECK(fs::exists(run_dir / "report" / "aggregates.csv"));
  CHECK(fs::exists(run_dir / "report" / "summary.md"));
  CHECK(fs::exists(run_dir / "failures.json"));

  SUBCASE("judged progress matches the scenario design") {
    const json stored = json::parse(
        slurp(run_dir / "wifi_city" / "expert" / "trial_1.judge.json"));
    const TrialJudgeArtifact artifact =
        deserialize_judge_artifact(stored.at("payload").dump());
    CHECK(artifact.final_progress == 1.0);  // expert completes in one turn
    CHECK(artifact.curve.value_at(1) == 1.0);

    const json stored_non = json::parse(
        slurp(run_dir / "wifi_city" / "non_expert" / "trial_1.judge.json"));
    const TrialJudgeArtifact non_expert =
        deserialize_judge_artifact(stored_non.at("payload").dump());
    CHECK(non_expert.final_progress == 1.0);
    CHECK(non_expert.curve.value_at(1) == 0.5);  // wifi half first
    CHECK(non_expert.curve.value_at(2) == 1.0);
  }

  SUBCASE("diagnosis captures the consistent currency failure") {
    const json stored =
        json::parse(slurp(run_dir / "currency" / "expert" / "diagnosis.json"));
    const DiagnosisReport report =
        deserialize_diagnosis(stored.at("payload").dump());
    REQUIRE(report.candidates.size() == 2);  // one per trial, note b3
    for (const auto& candidate : report.candidates) {
      CHECK(candidate.note.id == "b3");
      CHECK(candidate.z == 0.0);
    }
    CHECK(report.low_level_errors.size() == 2);
    CHECK_FALSE(report.clusters.empty());
    CHECK(report.clusters.front().label.find("get_exchange_rate_history") !=
          std::string::npos);
  }

  SUBCASE("summary table carries the five metric columns") {
    const std::string summary_md = slurp(run_dir / "report" / "summary.md");
    for (const std::string column :
         {"MeanProg@k", "MaxProg@k", "MaxAUC@k", "MaxPPT@k", "pass@k"}) {
      CHECK(summary_md.find(column) != std::string::npos);
    }
  }

  SUBCASE("metric rows cover every sample x persona x metric") {
    const std::string csv = slurp(run_dir / "report" / "metrics.csv");
    int lines = -1;  // header
    for (char c : csv) {
      if (c == '\n') ++lines;
    }
    CHECK(lines == 2 * 2 * 6);
  }

  SUBCASE("aggregate values match the hand-computed scenario") {
    // wifi_city: everything complete (expert turn 1; non-expert turns 1+2)
    // currency: 2 of 3 notes complete on turn 1, b3 never
    auto aggregate = [&](const std::string& persona, const std::string& metric) {
      const std::string csv = slurp(run_dir / "report" / "aggregates.csv");
      const std::string key = "toy," + persona + "," + metric + ",2,";
      const auto pos = csv.find(key);
      REQUIRE(pos != std::string::npos);
      const auto start = pos + key.size();
      return std::stod(csv.substr(start, csv.find(',', start) - start));
    };
    CHECK(aggregate("expert", "MeanProg@k") ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(aggregate("expert", "MaxAUC@k") ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(aggregate("expert", "MaxPPT@k") ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(aggregate("expert", "pass@k") == doctest::Approx(0.5));
    // non-expert wifi curve is (0.5, 1, 1, 1): auc = (0.75 + 2) / 3
    CHECK(aggregate("non_expert", "MaxAUC@k") ==
          doctest::Approx((2.75 / 3.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    // terminal 1.0 first reached at turn 2 halves the wifi PPT
    CHECK(aggregate("non_expert", "MaxPPT@k") ==
          doctest::Approx((0.5 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(aggregate("non_expert", "pass@k") == doctest::Approx(0.5));
  }
}

TEST_CASE("re-invocation resumes from persisted artifacts") {
  TempDir root("ted_pipeline_resume");
  RunConfig config = toy_config(root.path, "r1");

  std::atomic<int> talk_calls{0};
  CallbackProvider provider([&](const ChatRequest& request) {
    if (request.request_tag == "user_reflect" ||
        request.request_tag == "user_respond" || request.request_tag == "agent") {
      ++talk_calls;
    }
    return testing::pipeline_rule_reply(request);
  });

  const RunSummary first = run_talk(config, &provider);
  CHECK(first.ok());
  const int talk_cost = talk_calls.load();
  CHECK(talk_cost > 0);

  // killing mid-judge and re-running the full pipeline re-issues no talk calls
  const RunSummary second = run_eval(config, &provider);
  CHECK(second.ok());
  CHECK(talk_calls.load() == talk_cost);

  // a third full run re-issues nothing at all
  const auto total = provider.calls();
  const RunSummary third = run_eval(config, &provider);
  CHECK(third.ok());
  CHECK(provider.calls() == total);
}

TEST_CASE("changing judge settings invalidates only the judge stage") {
  TempDir root("ted_pipeline_invalidate");
  RunConfig config = toy_config(root.path, "r1");
  std::atomic<int> talk_calls{0};
  std::atomic<int> judge_calls{0};
  CallbackProvider provider([&](const ChatRequest& request) {
    if (request.request_tag == "judge") ++judge_calls;
    if (request.request_tag == "user_respond") ++talk_calls;
    return testing::pipeline_rule_reply(request);
  });
  CHECK(run_eval(config, &provider).ok());
  const int talk_before = talk_calls.load();
  const int judge_before = judge_calls.load();

  config.q = 1;  // different judging contract
  CHECK(run_eval(config, &provider).ok());
  CHECK(talk_calls.load() == talk_before);
  CHECK(judge_calls.load() > judge_before);
}

TEST_CASE("k greater than n is rejected before any provider call") {
  TempDir root("ted_pipeline_reject");
  RunConfig config = toy_config(root.path, "r1");
  config.k_values = {5};  // samples carry n_trials = 2
  CallbackProvider provider(testing::pipeline_rule_reply);
  CHECK_THROWS_AS(run_eval(config, &provider), ConfigError);
  CHECK(provider.calls() == 0);
}

TEST_CASE("two runs from the same rules produce byte-identical CSVs") {
  TempDir root("ted_pipeline_determinism");
  CallbackProvider provider(testing::pipeline_rule_reply);

  RunConfig first = toy_config(root.path, "da");
  RunConfig second = toy_config(root.path, "db");
  CHECK(run_eval(first, &provider).ok());
  CHECK(run_eval(second, &provider).ok());

  for (const std::string name : {"metrics.csv", "curves.csv", "aggregates.csv"}) {
    CHECK(slurp(run_directory(first) / "report" / name) ==
          slurp(run_directory(second) / "report" / name));
  }
}

TEST_CASE("staged verbs compose to the same result as one full run") {
  TempDir root("ted_pipeline_staged");
  CallbackProvider provider(testing::pipeline_rule_reply);

  RunConfig staged = toy_config(root.path, "staged");
  CHECK(run_talk(staged, &provider).ok());
  CHECK(run_judge(staged, &provider).ok());
  CHECK(run_diagnose(staged, &provider).ok());
  CHECK(run_metrics(staged).ok());

  RunConfig full = toy_config(root.path, "full");
  CHECK(run_eval(full, &provider).ok());

  for (const std::string name : {"metrics.csv", "curves.csv", "aggregates.csv"}) {
    CHECK(slurp(run_directory(staged) / "report" / name) ==
          slurp(run_directory(full) / "report" / name));
  }
  CHECK(slurp(run_directory(staged) / "report" / "summary.md") ==
        slurp(run_directory(full) / "report" / "summary.md"));
}

TEST_CASE("worker fan-out leaves the reports unchanged") {
  TempDir root("ted_pipeline_workers");
  CallbackProvider provider(testing::pipeline_rule_reply);

  RunConfig serial = toy_config(root.path, "serial");
  RunConfig fanned = toy_config(root.path, "fanned");
  fanned.workers = 4;
  CHECK(run_eval(serial, &provider).ok());
  CHECK(run_eval(fanned, &provider).ok());

  // a request-deterministic provider makes concurrency invisible in content
  for (const std::string name : {"metrics.csv", "curves.csv"}) {
    CHECK(slurp(run_directory(serial) / "report" / name) ==
          slurp(run_directory(fanned) / "report" / name));
  }
}

TEST_CASE("empty runs emit an explicit no-results report and fail") {
  TempDir root("ted_pipeline_empty");
  RunConfig config = toy_config(root.path, "r1");
  const RunSummary summary = run_metrics(config);  // nothing judged yet
  CHECK_FALSE(summary.ok());
  CHECK(slurp(run_directory(config) / "report" / "summary.md")
            .find("No results") != std::string::npos);
}

TEST_CASE("stage failures are reported per trial and the run continues") {
  TempDir root("ted_pipeline_failures");
  RunConfig config = toy_config(root.path, "r1");
  // user proxy responses run dry midway: later trials fail, earlier persist
  int budget = 40;
  CallbackProvider provider([&](const ChatRequest& request) {
    if (--budget < 0) {
      throw ExhaustedRetriesError("simulated outage");
    }
    return testing::pipeline_rule_reply(request);
  });
  const RunSummary summary = run_talk(config, &provider);
  CHECK_FALSE(summary.ok());
  const std::string failures = slurp(run_directory(config) / "failures.json");
  CHECK(failures.find("talk") != std::string::npos);
  // at least one trajectory was still persisted
  CHECK(fs::exists(run_directory(config) / "wifi_city" / "expert" /
                   "trial_1.json"));
}

TEST_CASE("clustering is grounded in the candidates' subgoals only") {
  TempDir root("ted_pipeline_subgoals");
  RunConfig config = toy_config(root.path, "r1");
  std::string cluster_prompt;
  CallbackProvider provider([&](const ChatRequest& request) {
    if (request.request_tag == "cluster" && cluster_prompt.empty()) {
      cluster_prompt = request.messages.back().content;
    }
    return testing::pipeline_rule_reply(request);
  });
  CHECK(run_eval(config, &provider).ok());
  REQUIRE_FALSE(cluster_prompt.empty());
  // only the failing currency note b3 is a candidate; satisfied notes stay out
  CHECK(cluster_prompt.find("get_exchange_rate_history") != std::string::npos);
  CHECK(cluster_prompt.find("Agent should tell the user the converted amount") ==
        std::string::npos);
}

TEST_CASE("multiple k values report side by side") {
  TempDir root("ted_pipeline_multik");
  RunConfig config = toy_config(root.path, "r1");
  config.k_values = {2, 1};
  CallbackProvider provider(testing::pipeline_rule_reply);
  CHECK(run_eval(config, &provider).ok());

  const std::string csv =
      slurp(run_directory(config) / "report" / "metrics.csv");
  CHECK(csv.find("wifi_city,toy,expert,pass@k,2,") != std::string::npos);
  CHECK(csv.find("wifi_city,toy,expert,pass@k,1,") != std::string::npos);
  // pass^k is non-increasing in k, so per-sample rows must reflect k
  CHECK(csv.find("currency,toy,expert,pass^k,1,") != std::string::npos);
  const std::string summary =
      slurp(run_directory(config) / "report" / "summary.md");
  CHECK(summary.find("metrics use k=2") != std::string::npos);
}

TEST_CASE("run config parsing interpolates environment variables") {
  ::setenv("TED_TEST_MODEL", "gpt-4o-mini", 1);
  const RunConfig config = parse_run_config(R"({
    "dataset": "x.json",
    "judge_model": "${TED_TEST_MODEL}",
    "q": 3,
    "personas": ["expert"]
  })");
  CHECK(config.judge_model == "gpt-4o-mini");
  CHECK(config.q == 3);
  REQUIRE(config.personas.size() == 1);
  CHECK(config.personas[0] == PersonaKind::expert);
  CHECK_THROWS_AS(parse_run_config(R"({"judge_model": "${TED_UNSET_VAR}"})"),
                  ConfigError);
}

TEST_CASE("validate_config rejects inconsistent settings") {
  RunConfig config;
  config.q = 4;
  CHECK_THROWS_AS(validate_config(config), ConfigError);
  config.q = 5;
  config.k_values = {10};
  config.n_trials = 5;
  CHECK_THROWS_AS(validate_config(config), ConfigError);
  config.k_values = {3};
  CHECK_NOTHROW(validate_config(config));
  config.threshold = 1.5;
  CHECK_THROWS_AS(validate_config(config), ConfigError);
  config.threshold = 1.0;
  config.diagnose_scope = "sometimes";
  CHECK_THROWS_AS(validate_config(config), ConfigError);
  config.diagnose_scope = "per_trial";
  config.max_turns = 0;
  CHECK_THROWS_AS(validate_config(config), ConfigError);
  config.max_turns = 8;
  config.n_trials = 0;
  CHECK_THROWS_AS(validate_config(config), ConfigError);
}

TEST_CASE("error insertion feeds the agent system prompt") {
  TempDir root("ted_pipeline_insertion");
  RunConfig config = toy_config(root.path, "r1");

  DiagnosisReport report;
  report.clusters.push_back(
      {"Missing get_exchange_rate_history call", {}, {}});
  const fs::path diagnosis = root.path / "prior_diagnosis.json";
  {
    std::ofstream out(diagnosis);
    out << json{{"input_fingerprint", "x"},
                {"payload", json::parse(serialize(report))}}
               .dump();
  }
  config.error_insertion_from = diagnosis;

  std::string seen_system;
  CallbackProvider provider([&](const ChatRequest& request) {
    if (request.request_tag == "agent" && seen_system.empty()) {
      seen_system = request.messages.front().content;
    }
    return testing::pipeline_rule_reply(request);
  });
  CHECK(run_talk(config, &provider).ok());
  CHECK(seen_system.find("Missing get_exchange_rate_history call") !=
        std::string::npos);
  CHECK(seen_system.find("[Known failure modes]") != std::string::npos);
}

}  // TEST_SUITE
