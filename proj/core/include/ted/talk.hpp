#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ted/gateway.hpp"
#include "ted/trajectory.hpp"

namespace ted {

/// Everything the two-step user proxy needs for one conversation.
struct UserProxyConfig {
  PersonaTemplate persona;
  std::string instruction;   // the user task summary
  std::string agent_desc;
  std::string termination_token = "###STOP###";
  std::string user_model = "gpt-4.1";
  double temperature = 0.7;
  int max_output_tokens = 1024;
};

/// Persona system text with {user_task_summary} and {agent_desc} filled.
/// Varying only the persona over a fixed instruction yields the expert and
/// non-expert variants of the same prompt.
std::string build_user_prompt(const PersonaTemplate& persona,
                              const std::string& instruction,
                              const std::string& agent_desc);

/// Dialogue text fed into the proxy's {chat_history} slot. Empty histories
/// render as an explicit marker so the first reflection still has context.
std::string render_chat_history(std::span<const Turn> turns);

/// Step 1 of the proxy: one model call with the reflection template.
std::string user_reflect(Provider& gateway, const UserProxyConfig& config,
                         const std::string& chat_history);

struct UserTurnOutcome {
  bool terminate = false;
  std::string utterance;  // empty when terminate
};

/// Step 2 of the proxy: one model call with the response template. The reply
/// terminates the conversation iff it contains the termination token
/// anywhere (substring rule).
UserTurnOutcome user_respond(Provider& gateway, const UserProxyConfig& config,
                             const std::string& chat_history,
                             const std::string& reflection);

/// The only way the harness talks to the agent under test. `history` holds
/// user utterances and the agent's own prior events; reflections never
/// appear in it.
class AgentConnector {
 public:
  virtual ~AgentConnector() = default;

  /// One complete response episode: tool invocations up to a user-facing
  /// message.
  virtual std::vector<AgentEvent> step(
      const std::vector<ChatMessage>& history) = 0;
};

/// Agent-visible message list for the turns so far plus the next utterance.
std::vector<ChatMessage> agent_visible_history(
    std::span<const Turn> turns, const std::string& next_user_utterance);

struct TalkOptions {
  std::string agent_desc;
  std::string termination_token = "###STOP###";
  std::string user_model = "gpt-4.1";
  double user_temperature = 0.7;
  int max_output_tokens = 1024;
  std::optional<int> max_turns_override;
  /// Unix-millisecond clock; injectable so deterministic runs stay
  /// byte-reproducible.
  std::function<std::int64_t()> clock;
};

/// Runs one conversation: the user proxy speaks first; each iteration
/// reflects, responds (stopping on the termination token), then steps the
/// agent. Agent failures terminate the trial as agent_error with the turns
/// so far preserved.
Trajectory run_trial(Provider& user_gateway, const TaskSample& sample,
                     const PersonaTemplate& persona, AgentConnector& agent,
                     int trial_index, const TalkOptions& options = {});

using AgentFactory = std::function<std::unique_ptr<AgentConnector>()>;

/// n independent trials with fresh conversation and agent state each.
/// Individual trial failures are recorded in the trajectory, never thrown.
TrialSet run_trials(Provider& user_gateway, const TaskSample& sample,
                    const PersonaTemplate& persona, const AgentFactory& agent_factory,
                    int n, const TalkOptions& options = {}, int workers = 1);

// ---------------------------------------------------------------------------
// Built-in tool-calling agent, so the harness is testable end to end without
// an external system under test.

class ToolRegistry {
 public:
  using Handler = std::function<std::string(const std::string& args_json)>;

  void add(std::string name, std::string description,
           std::string params_schema_json, Handler handler);

  bool has(const std::string& name) const;

  /// Throws Error for unknown tools; handler exceptions propagate.
  std::string invoke(const std::string& name, const std::string& args_json) const;

  /// Chat-completions `tools` array.
  std::string tools_json() const;

  std::vector<std::string> names() const;

 private:
  struct Entry {
    std::string description;
    std::string schema;
    Handler handler;
  };
  std::vector<std::string> order_;
  std::map<std::string, Entry> tools_;
};

struct ReferenceAgentOptions {
  std::string model = "gpt-4.1";
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int tool_budget = 10;  // tool calls per turn before a message is forced
  std::string system_prompt = "You are a helpful assistant.";
};

/// Agent loop: model call with tools, execute returned calls against the
/// registry, feed results back, until the model emits a user-facing message
/// or the per-turn budget is hit. Unknown tools are recorded as error-text
/// results and the loop continues.
class ReferenceAgent : public AgentConnector {
 public:
  ReferenceAgent(Provider& gateway, ToolRegistry registry,
                 ReferenceAgentOptions options = {});

  std::vector<AgentEvent> step(const std::vector<ChatMessage>& history) override;

 private:
  Provider& gateway_;
  ToolRegistry registry_;
  ReferenceAgentOptions options_;
};

/// Plays back fixed per-turn event lists; exhausting the script throws.
class ScriptedAgent : public AgentConnector {
 public:
  explicit ScriptedAgent(std::vector<std::vector<AgentEvent>> per_turn_events);

  std::vector<AgentEvent> step(const std::vector<ChatMessage>& history) override;

 private:
  std::vector<std::vector<AgentEvent>> script_;
  std::size_t cursor_ = 0;
};

/// In-memory phone-like device backing the demo tool registry.
struct DeviceState {
  bool low_battery_mode = true;
  bool wifi = false;
  bool location_service = false;
  bool cellular = false;
  std::string city = "Cupertino";
  std::int64_t timestamp = 1717171717;
};

/// Small tool set (wifi, battery mode, location, currency, clock) used by
/// fixtures and toy runs.
ToolRegistry demo_tool_registry(std::shared_ptr<DeviceState> state);

}  // namespace ted
