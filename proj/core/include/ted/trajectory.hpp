#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ted {

/// One natural-language assertion graded complete/incomplete by the judge.
struct GradingNote {
  std::string id;
  std::string text;

  friend bool operator==(const GradingNote&, const GradingNote&) = default;
};

/// A task instruction plus its grading notes and run limits.
struct TaskSample {
  std::string id;
  std::string instruction;
  std::vector<GradingNote> grading_notes;
  int max_turns = 1;
  int n_trials = 1;
  std::string dataset_tag;

  friend bool operator==(const TaskSample&, const TaskSample&) = default;
};

enum class PersonaKind { expert, non_expert };

std::string to_string(PersonaKind kind);
PersonaKind persona_from_string(const std::string& name);

/// A reusable user persona, decoupled from any task instruction. The system
/// text must contain {user_task_summary} and {agent_desc} exactly once each.
struct PersonaTemplate {
  PersonaKind kind = PersonaKind::expert;
  std::string system_text;

  friend bool operator==(const PersonaTemplate&, const PersonaTemplate&) =
      default;
};

struct ToolInvocation {
  std::string name;
  std::string arguments;  // raw JSON text
  std::string result;     // opaque text, stored verbatim

  friend bool operator==(const ToolInvocation&, const ToolInvocation&) =
      default;
};

struct AgentMessage {
  std::string text;

  friend bool operator==(const AgentMessage&, const AgentMessage&) = default;
};

using AgentEvent = std::variant<ToolInvocation, AgentMessage>;

/// One user utterance followed by the agent's complete response episode.
/// The reflection is internal to the user proxy and never reaches the agent
/// or the judge.
struct Turn {
  int index = 1;  // 1-based
  std::string user_utterance;
  std::string user_reflection;
  std::vector<AgentEvent> agent_events;

  friend bool operator==(const Turn&, const Turn&) = default;
};

enum class Termination {
  user_terminated,
  max_turns_reached,
  agent_error,
  truncated,  // produced only by prefix()
};

std::string to_string(Termination termination);
Termination termination_from_string(const std::string& name);

/// The full ordered record of one trial. Immutable after construction.
struct Trajectory {
  std::string sample_id;
  PersonaKind persona = PersonaKind::expert;
  int trial_index = 1;
  std::vector<Turn> turns;
  Termination termination = Termination::user_terminated;
  std::int64_t started_at_ms = 0;
  std::int64_t finished_at_ms = 0;
  /// Reflection produced on the user turn that terminated the conversation,
  /// kept for audit. Not part of any turn.
  std::optional<std::string> closing_reflection;
  /// Populated when the trial ended with termination == agent_error.
  std::optional<std::string> error_note;

  int turn_count() const { return static_cast<int>(turns.size()); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TrialSet {
  std::string sample_id;
  PersonaKind persona = PersonaKind::expert;
  std::vector<Trajectory> trajectories;

  friend bool operator==(const TrialSet&, const TrialSet&) = default;
};

/// The three judge-facing renderings of a trajectory. Reflections never
/// appear in any view.
struct TranscriptViews {
  std::string intermediate;      // tool invocations, arguments and results
  std::string agent_responses;   // user-facing agent messages only
  std::string dialogue;          // interleaved user/agent messages
};

/// Turns 1..min(t, |turns|) of the trajectory. Termination is recorded as
/// truncated unless t covers the whole trajectory; t saturates, never errors.
Trajectory prefix(const Trajectory& trajectory, int t);

TranscriptViews render_views(const Trajectory& trajectory);

struct ValidationResult {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

ValidationResult validate_sample(const TaskSample& sample);

std::string serialize(const Trajectory& trajectory);
Trajectory deserialize_trajectory(const std::string& json_text);

std::string serialize(const TaskSample& sample);
TaskSample deserialize_sample(const std::string& json_text);

}  // namespace ted
