#include "ted/talk.hpp"

#include <chrono>
#include <future>
#include <semaphore>

#include <nlohmann/json.hpp>

#include "ted/prompts.hpp"

namespace ted {

using json = nlohmann::json;

std::string build_user_prompt(const PersonaTemplate& persona,
                              const std::string& instruction,
                              const std::string& agent_desc) {
  return fill_template(persona.system_text,
                       {{"user_task_summary", instruction},
                        {"agent_desc", agent_desc}});
}

std::string render_chat_history(std::span<const Turn> turns) {
  if (turns.empty()) {
    return "(conversation start - no messages yet)";
  }
  std::string history;
  for (const auto& turn : turns) {
    history += "User: " + turn.user_utterance + "\n";
    for (const auto& event : turn.agent_events) {
      if (const auto* message = std::get_if<AgentMessage>(&event)) {
        history += "Agent: " + message->text + "\n";
      }
    }
  }
  return history;
}

namespace {

ChatRequest proxy_request(const UserProxyConfig& config, std::string body,
                          std::string tag) {
  ChatRequest request;
  request.model = config.user_model;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = std::move(tag);
  request.messages.push_back(
      {Role::system,
       build_user_prompt(config.persona, config.instruction, config.agent_desc),
       {}});
  request.messages.push_back({Role::user, std::move(body), {}});
  return request;
}

}  // namespace

std::string user_reflect(Provider& gateway, const UserProxyConfig& config,
                         const std::string& chat_history) {
  const std::string body =
      fill_template(prompts::reflection_step(),
                    {{"chat_history", chat_history},
                     {"termination_msg", config.termination_token}});
  return gateway.complete(proxy_request(config, body, "user_reflect")).content;
}

UserTurnOutcome user_respond(Provider& gateway, const UserProxyConfig& config,
                             const std::string& chat_history,
                             const std::string& reflection) {
  const std::string body =
      fill_template(prompts::response_step(),
                    {{"chat_history", chat_history},
                     {"reflection_history", reflection},
                     {"termination_msg", config.termination_token}});
  const std::string reply =
      gateway.complete(proxy_request(config, body, "user_respond")).content;
  if (reply.find(config.termination_token) != std::string::npos) {
    return UserTurnOutcome{true, {}};
  }
  return UserTurnOutcome{false, reply};
}

std::vector<ChatMessage> agent_visible_history(
    std::span<const Turn> turns, const std::string& next_user_utterance) {
  std::vector<ChatMessage> history;
  for (const auto& turn : turns) {
    history.push_back({Role::user, turn.user_utterance, {}});
    int call_index = 0;
    for (const auto& event : turn.agent_events) {
      if (const auto* call = std::get_if<ToolInvocation>(&event)) {
        const std::string call_id = "call_" + std::to_string(turn.index) + "_" +
                                    std::to_string(call_index++);
        const json payload{
            {"tool_calls",
             json::array({json{{"id", call_id},
                               {"type", "function"},
                               {"function", json{{"name", call->name},
                                                 {"arguments", call->arguments}}}}})}};
        history.push_back({Role::assistant, "", payload.dump()});
        const json tool_extra{{"tool_call_id", call_id}, {"name", call->name}};
        history.push_back({Role::tool, call->result, tool_extra.dump()});
      } else {
        history.push_back(
            {Role::assistant, std::get<AgentMessage>(event).text, {}});
      }
    }
  }
  history.push_back({Role::user, next_user_utterance, {}});
  return history;
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

Trajectory run_trial(Provider& user_gateway, const TaskSample& sample,
                     const PersonaTemplate& persona, AgentConnector& agent,
                     int trial_index, const TalkOptions& options) {
  const auto clock = options.clock ? options.clock : now_ms;
  const int max_turns = options.max_turns_override.value_or(sample.max_turns);

  UserProxyConfig proxy;
  proxy.persona = persona;
  proxy.instruction = sample.instruction;
  proxy.agent_desc = options.agent_desc;
  proxy.termination_token = options.termination_token;
  proxy.user_model = options.user_model;
  proxy.temperature = options.user_temperature;
  proxy.max_output_tokens = options.max_output_tokens;

  Trajectory trajectory;
  trajectory.sample_id = sample.id;
  trajectory.persona = persona.kind;
  trajectory.trial_index = trial_index;
  trajectory.started_at_ms = clock();

  while (trajectory.turn_count() < max_turns) {
    std::string reflection;
    try {
      const std::string history = render_chat_history(trajectory.turns);
      reflection = user_reflect(user_gateway, proxy, history);
      const UserTurnOutcome outcome =
          user_respond(user_gateway, proxy, history, reflection);
      if (outcome.terminate) {
        trajectory.termination = Termination::user_terminated;
        trajectory.closing_reflection = reflection;
        trajectory.finished_at_ms = clock();
        return trajectory;
      }

      Turn turn;
      turn.index = trajectory.turn_count() + 1;
      turn.user_utterance = outcome.utterance;
      turn.user_reflection = reflection;
      try {
        turn.agent_events =
            agent.step(agent_visible_history(trajectory.turns, outcome.utterance));
      } catch (const std::exception& e) {
        trajectory.turns.push_back(std::move(turn));
        trajectory.termination = Termination::agent_error;
        trajectory.error_note = e.what();
        trajectory.finished_at_ms = clock();
        return trajectory;
      }
      trajectory.turns.push_back(std::move(turn));
    } catch (const std::exception& e) {
      // User-proxy failure: keep what we have, flag the trial.
      trajectory.termination = Termination::agent_error;
      trajectory.error_note = std::string("user proxy failure: ") + e.what();
      trajectory.finished_at_ms = clock();
      return trajectory;
    }
  }

  trajectory.termination = Termination::max_turns_reached;
  trajectory.finished_at_ms = clock();
  return trajectory;
}

TrialSet run_trials(Provider& user_gateway, const TaskSample& sample,
                    const PersonaTemplate& persona,
                    const AgentFactory& agent_factory, int n,
                    const TalkOptions& options, int workers) {
  if (n < 1) {
    throw ConfigError("n_trials must be >= 1");
  }
  TrialSet set;
  set.sample_id = sample.id;
  set.persona = persona.kind;
  set.trajectories.resize(static_cast<std::size_t>(n));

  auto run_one = [&](int trial) {
    auto agent = agent_factory();
    set.trajectories[static_cast<std::size_t>(trial - 1)] =
        run_trial(user_gateway, sample, persona, *agent, trial, options);
  };

  if (workers <= 1) {
    for (int trial = 1; trial <= n; ++trial) {
      run_one(trial);
    }
    return set;
  }

  std::counting_semaphore<> slots(workers);
  std::vector<std::future<void>> futures;
  futures.reserve(static_cast<std::size_t>(n));
  for (int trial = 1; trial <= n; ++trial) {
    slots.acquire();
    futures.push_back(std::async(std::launch::async, [&, trial] {
      run_one(trial);
      slots.release();
    }));
  }
  for (auto& future : futures) {
    future.get();
  }
  return set;
}

// ---------------------------------------------------------------------------
// ToolRegistry

void ToolRegistry::add(std::string name, std::string description,
                       std::string params_schema_json, Handler handler) {
  if (tools_.find(name) == tools_.end()) {
    order_.push_back(name);
  }
  tools_[std::move(name)] =
      Entry{std::move(description), std::move(params_schema_json),
            std::move(handler)};
}

bool ToolRegistry::has(const std::string& name) const {
  return tools_.find(name) != tools_.end();
}

std::string ToolRegistry::invoke(const std::string& name,
                                 const std::string& args_json) const {
  auto it = tools_.find(name);
  if (it == tools_.end()) {
    throw Error("unknown tool: " + name);
  }
  return it->second.handler(args_json);
}

std::string ToolRegistry::tools_json() const {
  json tools = json::array();
  for (const auto& name : order_) {
    const auto& entry = tools_.at(name);
    tools.push_back(
        json{{"type", "function"},
             {"function", json{{"name", name},
                               {"description", entry.description},
                               {"parameters", json::parse(entry.schema)}}}});
  }
  return tools.dump();
}

std::vector<std::string> ToolRegistry::names() const { return order_; }

// ---------------------------------------------------------------------------
// ReferenceAgent

ReferenceAgent::ReferenceAgent(Provider& gateway, ToolRegistry registry,
                               ReferenceAgentOptions options)
    : gateway_(gateway),
      registry_(std::move(registry)),
      options_(std::move(options)) {}

std::vector<AgentEvent> ReferenceAgent::step(
    const std::vector<ChatMessage>& history) {
  std::vector<AgentEvent> events;
  std::vector<ChatMessage> messages;
  messages.push_back({Role::system, options_.system_prompt, {}});
  messages.insert(messages.end(), history.begin(), history.end());

  const std::string tools = registry_.tools_json();
  int tool_calls_made = 0;

  while (true) {
    ChatRequest request;
    request.model = options_.model;
    request.temperature = options_.temperature;
    request.max_output_tokens = options_.max_output_tokens;
    request.messages = messages;
    request.tools_json = tools;
    request.request_tag = "agent";

    const ChatResult result = gateway_.complete(request);

    if (result.tool_calls.empty()) {
      events.push_back(AgentMessage{result.content});
      return events;
    }

    int call_index = 0;
    json calls_payload = json::array();
    std::vector<std::pair<std::string, ToolInvocation>> executed;
    for (const auto& call : result.tool_calls) {
      std::string output;
      if (!registry_.has(call.name)) {
        output = "error: unknown tool '" + call.name + "'";
      } else {
        try {
          output = registry_.invoke(call.name, call.arguments);
        } catch (const std::exception& e) {
          output = std::string("error: ") + e.what();
        }
      }
      const std::string call_id =
          "ref_" + std::to_string(tool_calls_made + call_index);
      calls_payload.push_back(
          json{{"id", call_id},
               {"type", "function"},
               {"function",
                json{{"name", call.name}, {"arguments", call.arguments}}}});
      executed.emplace_back(call_id,
                            ToolInvocation{call.name, call.arguments, output});
      ++call_index;
    }

    messages.push_back(
        {Role::assistant, result.content, json{{"tool_calls", calls_payload}}.dump()});
    for (const auto& [call_id, invocation] : executed) {
      const json extra{{"tool_call_id", call_id}, {"name", invocation.name}};
      messages.push_back({Role::tool, invocation.result, extra.dump()});
      events.push_back(invocation);
      ++tool_calls_made;
    }

    if (tool_calls_made >= options_.tool_budget) {
      events.push_back(
          AgentMessage{"I could not finish the requested tool sequence within "
                       "the allotted budget."});
      return events;
    }
  }
}

// ---------------------------------------------------------------------------
// ScriptedAgent

ScriptedAgent::ScriptedAgent(std::vector<std::vector<AgentEvent>> per_turn_events)
    : script_(std::move(per_turn_events)) {}

std::vector<AgentEvent> ScriptedAgent::step(const std::vector<ChatMessage>&) {
  if (cursor_ >= script_.size()) {
    throw Error("scripted agent exhausted after " +
                std::to_string(script_.size()) + " turns");
  }
  return script_[cursor_++];
}

// ---------------------------------------------------------------------------
// Demo tools

ToolRegistry demo_tool_registry(std::shared_ptr<DeviceState> state) {
  ToolRegistry registry;
  const std::string bool_schema =
      R"({"type":"object","properties":{"on":{"type":"boolean"}},"required":["on"]})";
  const std::string empty_schema = R"({"type":"object","properties":{}})";

  registry.add("set_low_battery_mode", "Enable or disable low battery mode.",
               bool_schema, [state](const std::string& args) {
                 state->low_battery_mode = json::parse(args).at("on").get<bool>();
                 if (state->low_battery_mode) {
                   state->wifi = false;
                   state->location_service = false;
                   state->cellular = false;
                 }
                 return json{{"low_battery_mode", state->low_battery_mode}}.dump();
               });
  registry.add("set_wifi_status", "Turn wifi on or off.", bool_schema,
               [state](const std::string& args) {
                 const bool on = json::parse(args).at("on").get<bool>();
                 if (on && state->low_battery_mode) {
                   return std::string(
                       R"({"error":"cannot enable wifi while low battery mode is on"})");
                 }
                 state->wifi = on;
                 return json{{"wifi", state->wifi}}.dump();
               });
  registry.add("set_location_service", "Turn location services on or off.",
               bool_schema, [state](const std::string& args) {
                 const bool on = json::parse(args).at("on").get<bool>();
                 if (on && state->low_battery_mode) {
                   return std::string(
                       R"({"error":"cannot enable location while low battery mode is on"})");
                 }
                 state->location_service = on;
                 return json{{"location_service", state->location_service}}.dump();
               });
  registry.add("set_cellular_service", "Turn cellular service on or off.",
               bool_schema, [state](const std::string& args) {
                 const bool on = json::parse(args).at("on").get<bool>();
                 if (on && state->low_battery_mode) {
                   return std::string(
                       R"({"error":"cannot enable cellular while low battery mode is on"})");
                 }
                 state->cellular = on;
                 return json{{"cellular", state->cellular}}.dump();
               });
  registry.add("get_current_location", "Current city from location services.",
               empty_schema, [state](const std::string&) {
                 if (!state->location_service || !state->wifi) {
                   return std::string(
                       R"({"error":"location unavailable; enable wifi and location services"})");
                 }
                 return json{{"city", state->city}}.dump();
               });
  registry.add("get_current_timestamp", "Current unix timestamp.", empty_schema,
               [state](const std::string&) {
                 return json{{"timestamp", state->timestamp}}.dump();
               });
  registry.add(
      "convert_currency", "Convert an amount between currencies.",
      R"({"type":"object","properties":{"amount":{"type":"number"},"from_currency_code":{"type":"string"},"to_currency_code":{"type":"string"}},"required":["amount","from_currency_code","to_currency_code"]})",
      [](const std::string& args) {
        const json a = json::parse(args);
        // Flat demo rate table, USD-pivoted.
        const std::map<std::string, double> usd_rate = {
            {"USD", 1.0}, {"CNY", 7.1}, {"EUR", 0.92}, {"JPY", 157.0}};
        const auto from = a.at("from_currency_code").get<std::string>();
        const auto to = a.at("to_currency_code").get<std::string>();
        if (!usd_rate.count(from) || !usd_rate.count(to)) {
          return std::string(R"({"error":"unsupported currency"})");
        }
        const double amount = a.at("amount").get<double>();
        const double converted = amount / usd_rate.at(from) * usd_rate.at(to);
        return json{{"amount", converted}, {"currency", to}}.dump();
      });
  return registry;
}

}  // namespace ted
