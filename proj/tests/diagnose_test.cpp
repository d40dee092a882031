#include <doctest.h>

#include <nlohmann/json.hpp>

#include "ted/diagnose.hpp"
#include "test_support.hpp"

using namespace ted;
using nlohmann::json;

namespace {

SubgoalAssessment assessment_with_z(const std::string& note_id, double z, int q) {
  SubgoalAssessment assessment;
  assessment.grading_note_id = note_id;
  const int completes = static_cast<int>(z * q + 0.5);
  for (int i = 1; i <= q; ++i) {
    SubgoalVerdict verdict;
    verdict.run_index = i;
    verdict.grade = i <= completes ? Grade::complete : Grade::incomplete;
    verdict.explanation = "run " + std::to_string(i) + " reasoning for " + note_id;
    assessment.verdicts.push_back(std::move(verdict));
  }
  assessment.z = static_cast<double>(completes) / q;
  assessment.majority = assessment.z > 0.5 ? Grade::complete : Grade::incomplete;
  return assessment;
}

std::vector<GradingNote> toy_notes() {
  return {{"n1", "Agent should call book_reservation to book the flight"},
          {"n2", "Agent should cancel reservation K1NW8N"},
          {"n3", "Agent should inform the user of the total"}};
}

LowLevelError make_error(std::string id, std::string type) {
  LowLevelError error;
  error.candidate_id = std::move(id);
  error.error_type = std::move(type);
  error.explanation = "detail";
  return error;
}

}  // namespace

TEST_SUITE("diagnose") {

TEST_CASE("build_candidates keeps exactly the z<1 pairs") {
  const std::vector<SubgoalAssessment> assessments = {
      assessment_with_z("n1", 1.0, 5),  // never a candidate
      assessment_with_z("n2", 0.0, 5),  // consistent failure
      assessment_with_z("n3", 0.4, 5),  // disagreement
  };
  const auto candidates =
      build_candidates("sample_14", 6, toy_notes(), assessments);
  REQUIRE(candidates.size() == 2);
  CHECK(candidates[0].note.id == "n2");
  CHECK(candidates[0].z == 0.0);
  CHECK(candidates[0].id == "sample_14/6/n2");
  CHECK(candidates[0].explanations.size() == 5);
  CHECK(candidates[1].note.id == "n3");
  CHECK(candidates[1].z == doctest::Approx(0.4));
}

TEST_CASE("identify_error on a consistent failure uses one call") {
  ErrorCandidate candidate;
  candidate.id = "s/1/n2";
  candidate.note = {"n2", "Agent should cancel reservation K1NW8N"};
  candidate.explanations = {"The agent rebooked without cancelling first.",
                            "second opinion", "third opinion"};
  candidate.z = 0.0;

  int calls = 0;
  CallbackProvider provider([&](const ChatRequest& request) {
    ++calls;
    CHECK(request.request_tag == "identify");
    // first explanation only
    CHECK(request.messages.back().content.find("rebooked without cancelling") !=
          std::string::npos);
    json reply{{"error_type",
                "Failure to cancel existing reservation before rebooking"},
               {"explanation", "Cancellation was skipped."}};
    return ChatResult{.content = reply.dump()};
  });
  const LowLevelError error = identify_error(provider, candidate, {});
  CHECK(calls == 1);
  CHECK(error.error_type ==
        "Failure to cancel existing reservation before rebooking");
  CHECK_FALSE(error.unidentified);
}

TEST_CASE("identify_error on disagreement identifies all and votes once") {
  ErrorCandidate candidate;
  candidate.id = "s/1/n1";
  candidate.note = {"n1", "Agent should call book_reservation"};
  candidate.explanations = {"e1", "e2", "e3"};
  candidate.z = 1.0 / 3.0;

  int identify_calls = 0;
  int selective_calls = 0;
  CallbackProvider provider([&](const ChatRequest& request) {
    if (request.request_tag == "identify") {
      ++identify_calls;
      json reply{{"error_type", "Hallucinated book_reservation call"},
                 {"explanation", "claimed but not logged"}};
      return ChatResult{.content = reply.dump()};
    }
    ++selective_calls;
    CHECK(request.request_tag == "selective");
    CHECK(request.messages.back().content.find(
              "Hallucinated book_reservation call") != std::string::npos);
    json reply{{"most_probable_error_type", "Hallucinated book_reservation call"}};
    return ChatResult{.content = reply.dump()};
  });
  const LowLevelError error = identify_error(provider, candidate, {});
  CHECK(identify_calls == 3);
  CHECK(selective_calls == 1);
  // tool names carry through verbatim
  CHECK(error.error_type.find("book_reservation") != std::string::npos);
}

TEST_CASE("malformed identification output flags the candidate after retries") {
  ErrorCandidate candidate;
  candidate.id = "s/1/n2";
  candidate.note = {"n2", "Agent should cancel reservation K1NW8N"};
  candidate.explanations = {"e1"};
  candidate.z = 0.0;

  auto provider = ScriptedProvider::from_texts(
      {"not json", "also not json", "{broken"});
  DiagnoseConfig config;
  config.json_retries = 2;
  const LowLevelError error = identify_error(*provider, candidate, config);
  CHECK(error.unidentified);
  CHECK(provider->remaining() == 0);
}

TEST_CASE("fenced JSON replies still parse") {
  ErrorCandidate candidate;
  candidate.id = "s/1/n2";
  candidate.note = {"n2", "Agent should cancel reservation K1NW8N"};
  candidate.explanations = {"e1"};
  candidate.z = 0.0;
  auto provider = ScriptedProvider::from_texts(
      {"```json\n{\"error_type\": \"Missing cancel_reservation call\", "
       "\"explanation\": \"x\"}\n```"});
  const LowLevelError error = identify_error(*provider, candidate, {});
  CHECK(error.error_type == "Missing cancel_reservation call");
}

TEST_CASE("validate_clusters enforces the partition and tool separation") {
  const std::vector<LowLevelError> errors = {
      make_error("e1", "Missing book_reservation call"),
      make_error("e2", "Wrong arguments to book_reservation"),
      make_error("e3", "Missing cancel_reservation call"),
  };
  const auto lexicon = derive_tool_lexicon(errors);
  CHECK(std::find(lexicon.begin(), lexicon.end(), "book_reservation") !=
        lexicon.end());
  CHECK(std::find(lexicon.begin(), lexicon.end(), "cancel_reservation") !=
        lexicon.end());

  SUBCASE("a clean partition passes") {
    const std::vector<ErrorCluster> clusters = {
        {"book_reservation issues",
         {"Missing book_reservation call", "Wrong arguments to book_reservation"},
         {"e1", "e2"}},
        {"cancel_reservation issues", {"Missing cancel_reservation call"}, {"e3"}},
    };
    CHECK(validate_clusters(clusters, errors, lexicon).empty());
  }
  SUBCASE("duplicated ids are violations") {
    const std::vector<ErrorCluster> clusters = {
        {"a", {"Missing book_reservation call"}, {"e1", "e1"}},
        {"b", {"x", "y"}, {"e2", "e3"}},
    };
    CHECK_FALSE(validate_clusters(clusters, errors, lexicon).empty());
  }
  SUBCASE("missing ids are violations") {
    const std::vector<ErrorCluster> clusters = {
        {"a", {"Missing book_reservation call"}, {"e1"}},
    };
    const auto violations = validate_clusters(clusters, errors, lexicon);
    CHECK(violations.size() == 2);  // e2 and e3 missing
  }
  SUBCASE("merging different tools is a violation") {
    const std::vector<ErrorCluster> clusters = {
        {"everything",
         {"Missing book_reservation call", "Wrong arguments to book_reservation",
          "Missing cancel_reservation call"},
         {"e1", "e2", "e3"}},
    };
    const auto violations = validate_clusters(clusters, errors, lexicon);
    REQUIRE(violations.size() == 1);
    CHECK(violations.front().find("different tools") != std::string::npos);
  }
}

TEST_CASE("cluster_errors parses, repairs once, then gives up") {
  const std::vector<LowLevelError> errors = {
      make_error("e1", "Missing book_reservation call"),
      make_error("e2", "Missing cancel_reservation call"),
  };

  SUBCASE("valid output on the first try") {
    CallbackProvider provider([&](const ChatRequest& request) {
      CHECK(request.request_tag == "cluster");
      json reply{{"clusters",
                  json::array(
                      {json{{"cluster_label", "book_reservation not invoked"},
                            {"error_types", json::array({"Missing book_reservation call"})},
                            {"error_ids", json::array({"e1"})}},
                       json{{"cluster_label", "cancel_reservation not invoked"},
                            {"error_types", json::array({"Missing cancel_reservation call"})},
                            {"error_ids", json::array({"e2"})}}})}};
      return ChatResult{.content = reply.dump()};
    });
    const auto clusters = cluster_errors(provider, errors, toy_notes(), {});
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].label == "book_reservation not invoked");
  }

  SUBCASE("invalid first output triggers a repair prompt that can succeed") {
    int calls = 0;
    CallbackProvider provider([&](const ChatRequest& request) {
      ++calls;
      if (calls == 1) {
        // drops e2: not a partition
        json reply{{"clusters",
                    json::array({json{{"cluster_label", "book_reservation"},
                                      {"error_types",
                                       json::array({"Missing book_reservation call"})},
                                      {"error_ids", json::array({"e1"})}}})}};
        return ChatResult{.content = reply.dump()};
      }
      CHECK(request.messages.back().content.find("previous output was invalid") !=
            std::string::npos);
      json reply{{"clusters",
                  json::array(
                      {json{{"cluster_label", "book_reservation"},
                            {"error_types", json::array({"Missing book_reservation call"})},
                            {"error_ids", json::array({"e1"})}},
                       json{{"cluster_label", "cancel_reservation"},
                            {"error_types", json::array({"Missing cancel_reservation call"})},
                            {"error_ids", json::array({"e2"})}}})}};
      return ChatResult{.content = reply.dump()};
    });
    const auto clusters = cluster_errors(provider, errors, toy_notes(), {});
    CHECK(calls == 2);
    CHECK(clusters.size() == 2);
  }

  SUBCASE("two invalid outputs are a hard error") {
    CallbackProvider provider([&](const ChatRequest&) {
      json reply{{"clusters", json::array({json{{"cluster_label", "all"},
                                                {"error_types",
                                                 json::array({"Missing book_reservation call",
                                                              "Missing cancel_reservation call"})},
                                                {"error_ids", json::array({"e1", "e2"})}}})}};
      return ChatResult{.content = reply.dump()};
    });
    CHECK_THROWS_AS(cluster_errors(provider, errors, toy_notes(), {}),
                    DiagnoseError);
  }

  SUBCASE("a single error clusters into a singleton") {
    const std::vector<LowLevelError> one = {
        make_error("e1", "Missing book_reservation call")};
    CallbackProvider provider([&](const ChatRequest&) {
      json reply{{"clusters",
                  json::array({json{{"cluster_label", "book_reservation missing"},
                                    {"error_types",
                                     json::array({"Missing book_reservation call"})},
                                    {"error_ids", json::array({"e1"})}}})}};
      return ChatResult{.content = reply.dump()};
    });
    const auto clusters = cluster_errors(provider, one, toy_notes(), {});
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].error_ids == std::vector<std::string>{"e1"});
  }

  SUBCASE("empty input is rejected") {
    CallbackProvider provider([](const ChatRequest&) { return ChatResult{}; });
    CHECK_THROWS_AS(cluster_errors(provider, {}, toy_notes(), {}),
                    DiagnoseError);
  }
}

TEST_CASE("scatter_data emits one moments point per trial") {
  std::vector<TrialJudgeArtifact> artifacts;
  // 20 trials: 10 with z = (1,1,1,0,0) -> E=0.6 Var=0, 7 at E=0.4 Var=0,
  // 3 mixed with visible variance
  for (int trial = 1; trial <= 20; ++trial) {
    TrialJudgeArtifact artifact;
    artifact.sample_id = "sample_14";
    artifact.trial_index = trial;
    std::vector<double> z;
    if (trial <= 10) {
      z = {1, 1, 1, 0, 0};
    } else if (trial <= 17) {
      z = {1, 1, 0, 0, 0};
    } else {
      z = {1.0, 0.6, 0.2, 0.0, 0.0};
    }
    for (std::size_t j = 0; j < z.size(); ++j) {
      auto assessment = assessment_with_z("n" + std::to_string(j), z[j], 5);
      assessment.z = z[j];
      artifact.assessments.push_back(std::move(assessment));
    }
    artifacts.push_back(std::move(artifact));
  }

  const auto points = scatter_data(artifacts);
  REQUIRE(points.size() == 20);
  for (int i = 0; i < 10; ++i) {
    CHECK(points[i].expectation == doctest::Approx(0.6));
    CHECK(points[i].variance == 0.0);
    // identical cluster of (E, Var) points
    CHECK(points[i].expectation == points[0].expectation);
    CHECK(points[i].variance == points[0].variance);
  }
  for (int i = 10; i < 17; ++i) {
    CHECK(points[i].expectation == doctest::Approx(0.4));
    CHECK(points[i].variance == 0.0);
  }
  for (int i = 17; i < 20; ++i) {
    CHECK(points[i].variance > 0.0);
    CHECK(points[i].expectation == doctest::Approx(1.8 / 5.0));
  }
}

TEST_CASE("scatter point for a perfect singleton trial") {
  TrialJudgeArtifact artifact;
  artifact.trial_index = 1;
  auto assessment = assessment_with_z("n1", 1.0, 5);
  artifact.assessments.push_back(assessment);
  const auto points = scatter_data({artifact});
  REQUIRE(points.size() == 1);
  CHECK(points[0] == ScatterPoint{1, 1.0, 0.0});
}

TEST_CASE("error_insertion appends a delimited idempotent section") {
  const std::string instruction = "You are an airline support agent.";
  const std::vector<ErrorCluster> clusters = {
      {"Failure to cancel existing reservation before rebooking", {}, {}},
      {"Hallucinated payment amount", {}, {}},
      {"Missing book_reservation call", {}, {}},
      {"Skipped cabin-class verification", {}, {}},
  };

  const std::string augmented = error_insertion(instruction, clusters);
  CHECK(augmented.rfind(instruction, 0) == 0);
  for (const auto& cluster : clusters) {
    CHECK(augmented.find("- " + cluster.label) != std::string::npos);
  }

  SUBCASE("empty clusters leave the instruction unchanged") {
    CHECK(error_insertion(instruction, {}) == instruction);
  }
  SUBCASE("re-applying replaces the section") {
    CHECK(error_insertion(augmented, clusters) == augmented);
    const std::vector<ErrorCluster> fewer = {clusters[0]};
    const std::string replaced = error_insertion(augmented, fewer);
    CHECK(replaced == error_insertion(instruction, fewer));
  }
}

TEST_CASE("diagnosis reports round-trip") {
  DiagnosisReport report;
  ErrorCandidate candidate;
  candidate.id = "s/1/n1";
  candidate.sample_id = "s";
  candidate.trial_index = 1;
  candidate.note = {"n1", "Agent should call book_reservation"};
  candidate.explanations = {"e1", "e2"};
  candidate.z = 0.0;
  report.candidates.push_back(candidate);
  report.low_level_errors.push_back(make_error("s/1/n1", "Missing book_reservation call"));
  report.clusters.push_back(
      {"book_reservation missing", {"Missing book_reservation call"}, {"s/1/n1"}});

  const DiagnosisReport restored = deserialize_diagnosis(serialize(report));
  CHECK(restored.candidates == report.candidates);
  CHECK(restored.low_level_errors == report.low_level_errors);
  CHECK(restored.clusters == report.clusters);
}

}  // TEST_SUITE
