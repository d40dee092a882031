#include "ted/gateway.hpp"

#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace ted {

using json = nlohmann::json;

std::string to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "unknown";
}

Role role_from_string(const std::string& name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  if (name == "tool") return Role::tool;
  throw GatewayError("unknown role: " + name);
}

namespace {

std::string canonical_json(const std::string& text) {
  if (text.empty()) return {};
  // nlohmann keeps object keys sorted, so dump() is order-canonical.
  return json::parse(text).dump();
}

void validate_request(const ChatRequest& request) {
  if (request.messages.empty()) {
    throw GatewayError("chat request has no messages");
  }
  const Role first = request.messages.front().role;
  if (first != Role::system && first != Role::user) {
    throw GatewayError("first message must have role system or user");
  }
  if (request.temperature < 0.0) {
    throw GatewayError("temperature must be >= 0");
  }
  if (request.max_output_tokens < 1) {
    throw GatewayError("max_output_tokens must be >= 1");
  }
}

json result_to_json(const ChatResult& result) {
  json calls = json::array();
  for (const auto& call : result.tool_calls) {
    calls.push_back(json{{"name", call.name}, {"arguments", call.arguments}});
  }
  return json{{"content", result.content},
              {"tool_calls", std::move(calls)},
              {"usage",
               json{{"prompt_tokens", result.usage.prompt_tokens},
                    {"completion_tokens", result.usage.completion_tokens}}},
              {"provider_latency_ms", result.provider_latency_ms}};
}

ChatResult result_from_json(const json& j) {
  ChatResult result;
  result.content = j.value("content", std::string{});
  if (j.contains("tool_calls")) {
    for (const auto& cj : j["tool_calls"]) {
      result.tool_calls.push_back(ToolCallSpec{
          cj.at("name").get<std::string>(), cj.at("arguments").get<std::string>()});
    }
  }
  if (j.contains("usage")) {
    result.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
    result.usage.completion_tokens =
        j["usage"].value("completion_tokens", std::int64_t{0});
  }
  result.provider_latency_ms = j.value("provider_latency_ms", std::int64_t{0});
  return result;
}

}  // namespace

std::string fingerprint(const ChatRequest& request) {
  std::string canon;
  canon.reserve(256);
  canon += request.model;
  canon += '\x1f';
  char temp[32];
  std::snprintf(temp, sizeof(temp), "%.6g", request.temperature);
  canon += temp;
  for (const auto& message : request.messages) {
    canon += '\x1f';
    canon += to_string(message.role);
    canon += '\x1e';
    canon += message.content;
  }
  canon += '\x1f';
  try {
    canon += canonical_json(request.tools_json);
  } catch (const json::exception&) {
    canon += request.tools_json;  // non-JSON tools text hashes as-is
  }
  return fnv1a_hex(canon);
}

ChatResult Provider::complete(const ChatRequest& request) {
  validate_request(request);
  calls_.fetch_add(1);
  return do_complete(request);
}

// ---------------------------------------------------------------------------
// ScriptedProvider

ScriptedProvider::ScriptedProvider(std::vector<ChatResult> script)
    : script_(std::move(script)) {}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_texts(
    std::vector<std::string> replies) {
  std::vector<ChatResult> script;
  script.reserve(replies.size());
  for (auto& reply : replies) {
    ChatResult result;
    result.content = std::move(reply);
    script.push_back(std::move(result));
  }
  return std::make_unique<ScriptedProvider>(std::move(script));
}

std::size_t ScriptedProvider::remaining() const {
  std::lock_guard lock(mutex_);
  return script_.size() - cursor_;
}

ChatResult ScriptedProvider::do_complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  if (cursor_ >= script_.size()) {
    throw ScriptExhaustedError("scripted provider exhausted after " +
                               std::to_string(script_.size()) +
                               " replies (tag: " + request.request_tag + ")");
  }
  return script_[cursor_++];
}

// ---------------------------------------------------------------------------
// ReplayProvider

ReplayProvider::ReplayProvider(const std::filesystem::path& cassette_path) {
  std::ifstream in(cassette_path);
  if (!in) {
    throw GatewayError("cannot open cassette: " + cassette_path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw GatewayError("cassette parse error in " + cassette_path.string() +
                       ": " + e.what());
  }
  for (const auto& entry : j) {
    const auto fp = entry.at("fingerprint").get<std::string>();
    auto& bucket = entries_[fp];
    for (const auto& rj : entry.at("results")) {
      bucket.push_back(result_from_json(rj));
    }
  }
}

ChatResult ReplayProvider::do_complete(const ChatRequest& request) {
  const std::string fp = fingerprint(request);
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fp);
  if (it == entries_.end()) {
    throw CassetteMissError("cassette miss for fingerprint " + fp +
                                " (tag: " + request.request_tag + ")",
                            fp);
  }
  auto& cursor = cursors_[fp];
  if (cursor >= it->second.size()) {
    throw CassetteMissError("cassette FIFO exhausted for fingerprint " + fp, fp);
  }
  return it->second[cursor++];
}

// ---------------------------------------------------------------------------
// RecordingProvider

RecordingProvider::RecordingProvider(Provider& inner,
                                     std::filesystem::path cassette_path)
    : inner_(&inner), cassette_path_(std::move(cassette_path)) {}

RecordingProvider::RecordingProvider(std::unique_ptr<Provider> inner,
                                     std::filesystem::path cassette_path)
    : owned_(std::move(inner)),
      inner_(owned_.get()),
      cassette_path_(std::move(cassette_path)) {}

RecordingProvider::~RecordingProvider() {
  try {
    save();
  } catch (...) {
  }
}

ChatResult RecordingProvider::do_complete(const ChatRequest& request) {
  const std::string fp = fingerprint(request);
  ChatResult result = inner_->complete(request);
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(fp);
  if (inserted) {
    order_.push_back(fp);
  }
  it->second.push_back(result);
  return result;
}

void RecordingProvider::save() const {
  std::lock_guard lock(mutex_);
  json j = json::array();
  for (const auto& fp : order_) {
    json results = json::array();
    for (const auto& result : entries_.at(fp)) {
      results.push_back(result_to_json(result));
    }
    j.push_back(json{{"fingerprint", fp}, {"results", std::move(results)}});
  }
  std::ofstream out(cassette_path_);
  if (!out) {
    throw GatewayError("cannot write cassette: " + cassette_path_.string());
  }
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// HttpProvider

namespace {
std::atomic<std::int64_t> g_network_requests{0};
}

struct HttpProvider::Impl {
  explicit Impl(const HttpProviderConfig& config) : client(config.base_url) {
    client.set_connection_timeout(std::chrono::duration<double>(config.timeout_seconds));
    client.set_read_timeout(std::chrono::duration<double>(config.timeout_seconds));
  }

  httplib::Client client;
  std::mt19937_64 rng{std::random_device{}()};
  std::mutex rng_mutex;

  double jitter() {
    std::lock_guard lock(rng_mutex);
    return std::uniform_real_distribution<double>(0.0, 0.5)(rng);
  }

  // Returns (status, body); status 0 signals a transport-level failure.
  std::pair<int, std::string> post_json(const std::string& path,
                                        const std::string& api_key,
                                        const std::string& body) {
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key}};
    auto response = client.Post(path, headers, body, "application/json");
    if (!response) {
      return {0, httplib::to_string(response.error())};
    }
    return {response->status, response->body};
  }
};

HttpProvider::HttpProvider(HttpProviderConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_)) {
  if (config_.api_key.empty()) {
    throw ConfigError("live provider requires an API key");
  }
}

HttpProvider::~HttpProvider() = default;

std::int64_t HttpProvider::network_requests() {
  return g_network_requests.load();
}

ChatResult HttpProvider::do_complete(const ChatRequest& request) {
  json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_output_tokens;
  json messages = json::array();
  for (const auto& message : request.messages) {
    json mj{{"role", to_string(message.role)}, {"content", message.content}};
    if (!message.tool_payload.empty()) {
      json extra = json::parse(message.tool_payload);
      for (auto& [key, value] : extra.items()) {
        mj[key] = value;
      }
    }
    messages.push_back(std::move(mj));
  }
  body["messages"] = std::move(messages);
  if (!request.tools_json.empty()) {
    body["tools"] = json::parse(request.tools_json);
  }

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const double delay =
          config_.backoff_base_seconds * static_cast<double>(1 << attempt) +
          impl_->jitter();
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    g_network_requests.fetch_add(1);
    const auto start = std::chrono::steady_clock::now();
    auto [status, reply] = impl_->post_json(config_.completions_path,
                                            config_.api_key, body.dump());
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    if (status == 0) {
      last_error = "transport failure: " + reply;
      continue;
    }
    if (status == 429 || status >= 500) {
      last_error = "HTTP " + std::to_string(status);
      continue;
    }
    if (status != 200) {
      throw GatewayError("HTTP " + std::to_string(status) + ": " + reply);
    }
    try {
      json rj = json::parse(reply);
      const auto& message = rj.at("choices").at(0).at("message");
      ChatResult result;
      if (message.contains("content") && !message["content"].is_null()) {
        result.content = message["content"].get<std::string>();
      }
      if (message.contains("tool_calls")) {
        for (const auto& cj : message["tool_calls"]) {
          result.tool_calls.push_back(
              ToolCallSpec{cj.at("function").at("name").get<std::string>(),
                           cj.at("function").at("arguments").get<std::string>()});
        }
      }
      if (rj.contains("usage")) {
        result.usage.prompt_tokens =
            rj["usage"].value("prompt_tokens", std::int64_t{0});
        result.usage.completion_tokens =
            rj["usage"].value("completion_tokens", std::int64_t{0});
      }
      result.provider_latency_ms = latency;
      if (result.content.empty() && result.tool_calls.empty()) {
        throw MalformedPayloadError("provider returned neither content nor tool calls");
      }
      return result;
    } catch (const json::exception& e) {
      throw MalformedPayloadError(std::string("malformed provider payload: ") +
                                  e.what());
    }
  }
  throw ExhaustedRetriesError("gave up after " +
                              std::to_string(config_.max_attempts) +
                              " attempts; last error: " + last_error);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Provider> make_provider(const std::string& spec,
                                        const HttpProviderConfig& http_config) {
  if (spec == "live") {
    return std::make_unique<HttpProvider>(http_config);
  }
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("unknown provider spec: " + spec);
  }
  const std::string kind = spec.substr(0, colon);
  const std::filesystem::path path = spec.substr(colon + 1);
  if (kind == "replay") {
    return std::make_unique<ReplayProvider>(path);
  }
  if (kind == "record") {
    return std::make_unique<RecordingProvider>(
        std::make_unique<HttpProvider>(http_config), path);
  }
  if (kind == "scripted") {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("cannot open script: " + path.string());
    }
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("script parse error in " + path.string() + ": " +
                        e.what());
    }
    std::vector<ChatResult> script;
    for (const auto& entry : j) {
      if (entry.is_string()) {
        ChatResult result;
        result.content = entry.get<std::string>();
        script.push_back(std::move(result));
      } else {
        script.push_back(result_from_json(entry));
      }
    }
    return std::make_unique<ScriptedProvider>(std::move(script));
  }
  throw ConfigError("unknown provider spec: " + spec);
}

}  // namespace ted
