#include "ted/trajectory.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "ted/common.hpp"

namespace ted {

using json = nlohmann::json;

std::string to_string(PersonaKind kind) {
  return kind == PersonaKind::expert ? "expert" : "non_expert";
}

PersonaKind persona_from_string(const std::string& name) {
  if (name == "expert") return PersonaKind::expert;
  if (name == "non_expert" || name == "non-expert") return PersonaKind::non_expert;
  throw ConfigError("unknown persona: " + name);
}

std::string to_string(Termination termination) {
  switch (termination) {
    case Termination::user_terminated: return "user_terminated";
    case Termination::max_turns_reached: return "max_turns_reached";
    case Termination::agent_error: return "agent_error";
    case Termination::truncated: return "truncated";
  }
  return "unknown";
}

Termination termination_from_string(const std::string& name) {
  if (name == "user_terminated") return Termination::user_terminated;
  if (name == "max_turns_reached") return Termination::max_turns_reached;
  if (name == "agent_error") return Termination::agent_error;
  if (name == "truncated") return Termination::truncated;
  throw DatasetError("unknown termination: " + name);
}

Trajectory prefix(const Trajectory& trajectory, int t) {
  if (t < 0) t = 0;
  Trajectory out = trajectory;
  if (t >= trajectory.turn_count()) {
    return out;
  }
  out.turns.resize(static_cast<std::size_t>(t));
  out.termination = Termination::truncated;
  out.closing_reflection.reset();
  return out;
}

namespace {

void append_turn_views(const Turn& turn, std::string& intermediate,
                       std::string& responses, std::string& dialogue) {
  const std::string header = "Turn " + std::to_string(turn.index) + ":\n";

  intermediate += header;
  bool any_tool = false;
  for (const auto& event : turn.agent_events) {
    if (const auto* call = std::get_if<ToolInvocation>(&event)) {
      any_tool = true;
      intermediate += "  tool_call: " + call->name + "(" + call->arguments + ")\n";
      intermediate += "  result: " + call->result + "\n";
    }
  }
  if (!any_tool) {
    intermediate += "  (no tool calls)\n";
  }

  responses += header;
  bool any_message = false;
  for (const auto& event : turn.agent_events) {
    if (const auto* message = std::get_if<AgentMessage>(&event)) {
      any_message = true;
      responses += "  " + message->text + "\n";
    }
  }
  if (!any_message) {
    responses += "  (no agent response)\n";
  }

  dialogue += "User: " + turn.user_utterance + "\n";
  for (const auto& event : turn.agent_events) {
    if (const auto* message = std::get_if<AgentMessage>(&event)) {
      dialogue += "Agent: " + message->text + "\n";
    }
  }
}

}  // namespace

TranscriptViews render_views(const Trajectory& trajectory) {
  TranscriptViews views;
  views.dialogue = "[Dynamic Dialogue]:\n";
  for (const auto& turn : trajectory.turns) {
    append_turn_views(turn, views.intermediate, views.agent_responses,
                      views.dialogue);
  }
  return views;
}

ValidationResult validate_sample(const TaskSample& sample) {
  ValidationResult result;
  if (sample.id.empty()) {
    result.violations.push_back("empty sample id");
  }
  if (sample.grading_notes.empty()) {
    result.violations.push_back("empty grading_notes");
  }
  std::set<std::string> note_ids;
  for (const auto& note : sample.grading_notes) {
    if (note.text.empty()) {
      result.violations.push_back("empty text for grading note '" + note.id + "'");
    }
    if (!note_ids.insert(note.id).second) {
      result.violations.push_back("duplicate id '" + note.id + "'");
    }
  }
  if (sample.max_turns < 1) {
    result.violations.push_back("max_turns must be >= 1");
  }
  if (sample.n_trials < 1) {
    result.violations.push_back("n_trials must be >= 1");
  }
  return result;
}

namespace {

json event_to_json(const AgentEvent& event) {
  if (const auto* call = std::get_if<ToolInvocation>(&event)) {
    return json{{"type", "tool_invocation"},
                {"name", call->name},
                {"arguments", call->arguments},
                {"result", call->result}};
  }
  const auto& message = std::get<AgentMessage>(event);
  return json{{"type", "agent_message"}, {"text", message.text}};
}

AgentEvent event_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "tool_invocation") {
    return ToolInvocation{j.at("name").get<std::string>(),
                          j.at("arguments").get<std::string>(),
                          j.at("result").get<std::string>()};
  }
  if (type == "agent_message") {
    return AgentMessage{j.at("text").get<std::string>()};
  }
  throw DatasetError("unknown agent event type: " + type);
}

}  // namespace

std::string serialize(const Trajectory& trajectory) {
  json turns = json::array();
  for (const auto& turn : trajectory.turns) {
    json events = json::array();
    for (const auto& event : turn.agent_events) {
      events.push_back(event_to_json(event));
    }
    turns.push_back(json{{"index", turn.index},
                         {"user_utterance", turn.user_utterance},
                         {"user_reflection", turn.user_reflection},
                         {"agent_events", std::move(events)}});
  }
  json j{{"sample_id", trajectory.sample_id},
         {"persona", to_string(trajectory.persona)},
         {"trial_index", trajectory.trial_index},
         {"termination", to_string(trajectory.termination)},
         {"started_at_ms", trajectory.started_at_ms},
         {"finished_at_ms", trajectory.finished_at_ms},
         {"turns", std::move(turns)}};
  if (trajectory.closing_reflection) {
    j["closing_reflection"] = *trajectory.closing_reflection;
  }
  if (trajectory.error_note) {
    j["error_note"] = *trajectory.error_note;
  }
  return j.dump(2);
}

Trajectory deserialize_trajectory(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DatasetError(std::string("trajectory parse error: ") + e.what());
  }
  Trajectory trajectory;
  trajectory.sample_id = j.at("sample_id").get<std::string>();
  trajectory.persona = persona_from_string(j.at("persona").get<std::string>());
  trajectory.trial_index = j.at("trial_index").get<int>();
  trajectory.termination =
      termination_from_string(j.at("termination").get<std::string>());
  trajectory.started_at_ms = j.value("started_at_ms", std::int64_t{0});
  trajectory.finished_at_ms = j.value("finished_at_ms", std::int64_t{0});
  if (j.contains("closing_reflection")) {
    trajectory.closing_reflection = j["closing_reflection"].get<std::string>();
  }
  if (j.contains("error_note")) {
    trajectory.error_note = j["error_note"].get<std::string>();
  }
  int expected_index = 1;
  for (const auto& tj : j.at("turns")) {
    Turn turn;
    turn.index = tj.at("index").get<int>();
    if (turn.index != expected_index++) {
      throw DatasetError("turn indices not contiguous from 1");
    }
    turn.user_utterance = tj.at("user_utterance").get<std::string>();
    turn.user_reflection = tj.value("user_reflection", std::string{});
    for (const auto& ej : tj.at("agent_events")) {
      turn.agent_events.push_back(event_from_json(ej));
    }
    trajectory.turns.push_back(std::move(turn));
  }
  return trajectory;
}

namespace detail {

json sample_to_json(const TaskSample& sample) {
  json notes = json::array();
  for (const auto& note : sample.grading_notes) {
    notes.push_back(json{{"id", note.id}, {"text", note.text}});
  }
  return json{{"id", sample.id},
              {"instruction", sample.instruction},
              {"grading_notes", std::move(notes)},
              {"max_turns", sample.max_turns},
              {"n_trials", sample.n_trials},
              {"dataset_tag", sample.dataset_tag}};
}

TaskSample sample_from_json(const json& j) {
  TaskSample sample;
  sample.id = j.at("id").get<std::string>();
  sample.instruction = j.at("instruction").get<std::string>();
  for (const auto& nj : j.at("grading_notes")) {
    sample.grading_notes.push_back(GradingNote{nj.at("id").get<std::string>(),
                                               nj.at("text").get<std::string>()});
  }
  sample.max_turns = j.at("max_turns").get<int>();
  sample.n_trials = j.at("n_trials").get<int>();
  sample.dataset_tag = j.value("dataset_tag", std::string{});
  return sample;
}

}  // namespace detail

std::string serialize(const TaskSample& sample) {
  return detail::sample_to_json(sample).dump(2);
}

TaskSample deserialize_sample(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DatasetError(std::string("sample parse error: ") + e.what());
  }
  return detail::sample_from_json(j);
}

}  // namespace ted
