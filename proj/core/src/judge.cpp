#include "ted/judge.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "ted/prompts.hpp"

namespace ted {

using json = nlohmann::json;

ParsedGrade parse_grade(const std::string& reply) {
  constexpr std::string_view kMarker = "GRADE:";
  std::optional<char> letter;
  std::size_t pos = 0;
  while ((pos = reply.find(kMarker, pos)) != std::string::npos) {
    std::size_t i = pos + kMarker.size();
    while (i < reply.size() && (reply[i] == ' ' || reply[i] == '\t')) {
      ++i;
    }
    if (i < reply.size() &&
        std::isalpha(static_cast<unsigned char>(reply[i]))) {
      letter = reply[i];
    }
    pos += kMarker.size();
  }
  if (!letter) return ParsedGrade::unparseable;
  if (*letter == 'C') return ParsedGrade::complete;
  if (*letter == 'I') return ParsedGrade::incomplete;
  return ParsedGrade::unparseable;
}

namespace {

ChatRequest judge_request(const TaskSample& sample, const GradingNote& note,
                          const Trajectory& trajectory,
                          const JudgeConfig& config) {
  const TranscriptViews views = render_views(trajectory);
  const std::string body = fill_template(
      prompts::judge(), {{"user_task_summary", sample.instruction},
                         {"grading_note", note.text},
                         {"trajectory", views.intermediate},
                         {"agent_responses", views.agent_responses},
                         {"dynamicDialogue", views.dialogue}});
  ChatRequest request;
  request.model = config.model;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = "judge";
  request.messages.push_back({Role::user, body, {}});
  return request;
}

}  // namespace

SubgoalVerdict judge_once(Provider& gateway, const TaskSample& sample,
                          const GradingNote& note, const Trajectory& trajectory,
                          const JudgeConfig& config, int run_index) {
  const ChatRequest request = judge_request(sample, note, trajectory, config);

  SubgoalVerdict verdict;
  verdict.run_index = run_index;
  for (int attempt = 0; attempt <= config.parse_retries; ++attempt) {
    const ChatResult result = gateway.complete(request);
    verdict.explanation = result.content;
    switch (parse_grade(result.content)) {
      case ParsedGrade::complete:
        verdict.grade = Grade::complete;
        return verdict;
      case ParsedGrade::incomplete:
        verdict.grade = Grade::incomplete;
        return verdict;
      case ParsedGrade::unparseable:
        break;  // retry
    }
  }
  // An unparseable verdict scores incomplete, flagged.
  verdict.grade = Grade::incomplete;
  verdict.unparseable = true;
  return verdict;
}

SubgoalAssessment assess_subgoal(Provider& gateway, const TaskSample& sample,
                                 const GradingNote& note,
                                 const Trajectory& trajectory,
                                 const JudgeConfig& config) {
  if (config.q < 1 || config.q % 2 == 0) {
    throw JudgeError("Q must be odd and >= 1, got " + std::to_string(config.q));
  }
  SubgoalAssessment assessment;
  assessment.grading_note_id = note.id;
  int complete_count = 0;
  int unparseable_count = 0;
  for (int q = 1; q <= config.q; ++q) {
    SubgoalVerdict verdict =
        judge_once(gateway, sample, note, trajectory, config, q);
    if (verdict.grade == Grade::complete) ++complete_count;
    if (verdict.unparseable) ++unparseable_count;
    assessment.verdicts.push_back(std::move(verdict));
  }
  assessment.z = static_cast<double>(complete_count) / config.q;
  assessment.majority =
      assessment.z > 0.5 ? Grade::complete : Grade::incomplete;
  assessment.invalid = unparseable_count == config.q;
  return assessment;
}

double progress(Provider& gateway, const TaskSample& sample,
                const Trajectory& trajectory, const JudgeConfig& config) {
  if (sample.grading_notes.empty()) {
    throw JudgeError("sample has no grading notes");
  }
  int complete = 0;
  for (const auto& note : sample.grading_notes) {
    const SubgoalAssessment assessment =
        assess_subgoal(gateway, sample, note, trajectory, config);
    if (assessment.invalid) {
      throw JudgeError("all judge runs unparseable for note " + note.id);
    }
    if (assessment.majority == Grade::complete) ++complete;
  }
  return static_cast<double>(complete) /
         static_cast<double>(sample.grading_notes.size());
}

CurveResult progress_curve(Provider& gateway, const TaskSample& sample,
                           const Trajectory& trajectory, CurveMode mode,
                           const JudgeConfig& config) {
  if (trajectory.turns.empty()) {
    throw JudgeError("progress_curve requires at least one turn");
  }
  const int turns = trajectory.turn_count();
  const int t_max = std::max(sample.max_turns, turns);

  CurveResult result;
  result.curve.sample_id = sample.id;
  result.curve.trial_index = trajectory.trial_index;

  for (const auto& note : sample.grading_notes) {
    std::optional<int> achieved;
    SubgoalAssessment final_assessment;

    auto complete_at = [&](int t) {
      const SubgoalAssessment assessment = assess_subgoal(
          gateway, sample, note, prefix(trajectory, t), config);
      if (t == turns) final_assessment = assessment;
      return assessment.majority == Grade::complete;
    };

    if (mode == CurveMode::exhaustive) {
      for (int t = 1; t <= turns; ++t) {
        if (complete_at(t) && !achieved) {
          achieved = t;
        }
      }
    } else {
      if (complete_at(turns)) {
        // Completed subgoals cannot be undone, so the achieved turn is the
        // lowest t whose prefix the majority judges complete.
        int lo = 1, hi = turns;
        while (lo < hi) {
          const int mid = lo + (hi - lo) / 2;
          if (complete_at(mid)) {
            hi = mid;
          } else {
            lo = mid + 1;
          }
        }
        achieved = lo;
      }
    }

    result.curve.achieved_turn[note.id] = achieved;
    result.final_assessments.push_back(std::move(final_assessment));
  }

  const auto note_count = static_cast<double>(sample.grading_notes.size());
  result.curve.values.assign(static_cast<std::size_t>(t_max), 0.0);
  for (int t = 1; t <= t_max; ++t) {
    int achieved_count = 0;
    for (const auto& [note_id, achieved] : result.curve.achieved_turn) {
      if (achieved && *achieved <= t) ++achieved_count;
    }
    result.curve.values[static_cast<std::size_t>(t - 1)] =
        static_cast<double>(achieved_count) / note_count;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string to_string(Grade grade) {
  return grade == Grade::complete ? "complete" : "incomplete";
}

Grade grade_from_string(const std::string& name) {
  if (name == "complete") return Grade::complete;
  if (name == "incomplete") return Grade::incomplete;
  throw JudgeError("unknown grade: " + name);
}

json assessment_to_json(const SubgoalAssessment& assessment) {
  json verdicts = json::array();
  for (const auto& verdict : assessment.verdicts) {
    verdicts.push_back(json{{"grade", to_string(verdict.grade)},
                            {"explanation", verdict.explanation},
                            {"run_index", verdict.run_index},
                            {"unparseable", verdict.unparseable}});
  }
  return json{{"grading_note_id", assessment.grading_note_id},
              {"verdicts", std::move(verdicts)},
              {"z", assessment.z},
              {"majority", to_string(assessment.majority)},
              {"invalid", assessment.invalid}};
}

SubgoalAssessment assessment_from_json(const json& j) {
  SubgoalAssessment assessment;
  assessment.grading_note_id = j.at("grading_note_id").get<std::string>();
  for (const auto& vj : j.at("verdicts")) {
    SubgoalVerdict verdict;
    verdict.grade = grade_from_string(vj.at("grade").get<std::string>());
    verdict.explanation = vj.at("explanation").get<std::string>();
    verdict.run_index = vj.at("run_index").get<int>();
    verdict.unparseable = vj.value("unparseable", false);
    assessment.verdicts.push_back(std::move(verdict));
  }
  assessment.z = j.at("z").get<double>();
  assessment.majority = grade_from_string(j.at("majority").get<std::string>());
  assessment.invalid = j.value("invalid", false);
  return assessment;
}

}  // namespace

std::string serialize(const TrialJudgeArtifact& artifact) {
  json assessments = json::array();
  for (const auto& assessment : artifact.assessments) {
    assessments.push_back(assessment_to_json(assessment));
  }
  json achieved = json::object();
  for (const auto& [note_id, turn] : artifact.curve.achieved_turn) {
    achieved[note_id] = turn ? json(*turn) : json(nullptr);
  }
  return json{{"sample_id", artifact.sample_id},
              {"persona", to_string(artifact.persona)},
              {"trial_index", artifact.trial_index},
              {"assessments", std::move(assessments)},
              {"curve",
               json{{"values", artifact.curve.values},
                    {"achieved_turn", std::move(achieved)}}},
              {"final_progress", artifact.final_progress}}
      .dump(2);
}

TrialJudgeArtifact deserialize_judge_artifact(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw JudgeError(std::string("judge artifact parse error: ") + e.what());
  }
  TrialJudgeArtifact artifact;
  artifact.sample_id = j.at("sample_id").get<std::string>();
  artifact.persona = persona_from_string(j.at("persona").get<std::string>());
  artifact.trial_index = j.at("trial_index").get<int>();
  for (const auto& aj : j.at("assessments")) {
    artifact.assessments.push_back(assessment_from_json(aj));
  }
  artifact.curve.sample_id = artifact.sample_id;
  artifact.curve.trial_index = artifact.trial_index;
  artifact.curve.values = j.at("curve").at("values").get<std::vector<double>>();
  for (const auto& [note_id, turn] :
       j.at("curve").at("achieved_turn").items()) {
    artifact.curve.achieved_turn[note_id] =
        turn.is_null() ? std::optional<int>{} : std::optional<int>{turn.get<int>()};
  }
  artifact.final_progress = j.at("final_progress").get<double>();
  return artifact;
}

}  // namespace ted
