#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ted/common.hpp"

namespace ted {

enum class Role { system, user, assistant, tool };

std::string to_string(Role role);
Role role_from_string(const std::string& name);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  /// Raw JSON carrying provider-specific extras (tool_calls echo,
  /// tool_call_id, ...). Empty when absent.
  std::string tool_payload;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  std::string tools_json;  // JSON array of tool schemas; empty = no tools
  double temperature = 0.0;
  int max_output_tokens = 1024;
  /// Free label ("judge", "user_reflect", ...). Excluded from fingerprints.
  std::string request_tag;
};

struct ToolCallSpec {
  std::string name;
  std::string arguments;  // raw JSON text

  friend bool operator==(const ToolCallSpec&, const ToolCallSpec&) = default;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct ChatResult {
  std::string content;
  std::vector<ToolCallSpec> tool_calls;
  TokenUsage usage;
  std::int64_t provider_latency_ms = 0;

  friend bool operator==(const ChatResult&, const ChatResult&) = default;
};

/// Deterministic digest over (model, roles, contents, tools, temperature).
/// Insensitive to request_tag and to JSON field ordering inside tools.
std::string fingerprint(const ChatRequest& request);

class GatewayError : public Error {
 public:
  using Error::Error;
};

class ExhaustedRetriesError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class MalformedPayloadError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class ScriptExhaustedError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class CassetteMissError : public GatewayError {
 public:
  CassetteMissError(const std::string& message, std::string fingerprint)
      : GatewayError(message), fingerprint_(std::move(fingerprint)) {}

  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::string fingerprint_;
};

/// Uniform access to a chat-capable model. Implementations are safe for
/// concurrent callers.
class Provider {
 public:
  virtual ~Provider() = default;

  ChatResult complete(const ChatRequest& request);

  virtual std::string name() const = 0;

  std::int64_t calls() const { return calls_.load(); }

 protected:
  virtual ChatResult do_complete(const ChatRequest& request) = 0;

 private:
  std::atomic<std::int64_t> calls_{0};
};

/// Replays a fixed list of results in order, regardless of the request.
class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(std::vector<ChatResult> script);

  static std::unique_ptr<ScriptedProvider> from_texts(
      std::vector<std::string> replies);

  /// Entries not yet consumed; nonzero at end of a run is a test smell.
  std::size_t remaining() const;

  std::string name() const override { return "scripted"; }

 protected:
  ChatResult do_complete(const ChatRequest& request) override;

 private:
  mutable std::mutex mutex_;
  std::vector<ChatResult> script_;
  std::size_t cursor_ = 0;
};

/// Computes the reply as a pure function of the request. Useful wherever a
/// deterministic model stand-in must answer out-of-order probes (e.g. the
/// bisect/exhaustive curve comparison).
class CallbackProvider : public Provider {
 public:
  using Callback = std::function<ChatResult(const ChatRequest&)>;

  explicit CallbackProvider(Callback callback)
      : callback_(std::move(callback)) {}

  std::string name() const override { return "callback"; }

 protected:
  ChatResult do_complete(const ChatRequest& request) override {
    return callback_(request);
  }

 private:
  Callback callback_;
};

/// Cassette file: JSON list of {fingerprint, results: [ChatResult, ...]}.
/// Repeated identical requests consume the per-fingerprint FIFO in order.
class ReplayProvider : public Provider {
 public:
  explicit ReplayProvider(const std::filesystem::path& cassette_path);

  std::string name() const override { return "replay"; }

 protected:
  ChatResult do_complete(const ChatRequest& request) override;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<ChatResult>> entries_;
  std::map<std::string, std::size_t> cursors_;
};

/// Forwards to an inner provider and appends every result to a cassette.
class RecordingProvider : public Provider {
 public:
  RecordingProvider(Provider& inner, std::filesystem::path cassette_path);
  RecordingProvider(std::unique_ptr<Provider> inner,
                    std::filesystem::path cassette_path);
  ~RecordingProvider() override;

  void save() const;

  std::string name() const override { return "record"; }

 protected:
  ChatResult do_complete(const ChatRequest& request) override;

 private:
  std::unique_ptr<Provider> owned_;
  Provider* inner_;
  std::filesystem::path cassette_path_;
  mutable std::mutex mutex_;
  std::vector<std::string> order_;  // first-seen fingerprint order
  std::map<std::string, std::vector<ChatResult>> entries_;
};

struct HttpProviderConfig {
  std::string base_url = "https://api.openai.com";
  std::string api_key;
  std::string completions_path = "/v1/chat/completions";
  int max_attempts = 5;
  double backoff_base_seconds = 1.0;
  double timeout_seconds = 120.0;
};

/// Live chat-completions endpoint with exponential-backoff retries on
/// transport errors, 5xx and 429.
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  ~HttpProvider() override;

  std::string name() const override { return "live"; }

  /// Process-wide count of HTTP requests attempted. Replay-mode runs must
  /// leave this unchanged.
  static std::int64_t network_requests();

 protected:
  ChatResult do_complete(const ChatRequest& request) override;

 private:
  struct Impl;
  HttpProviderConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// Builds a provider from a CLI-style spec:
/// live | scripted:<path> | replay:<path> | record:<path>.
/// record wraps a live provider configured from `http_config`.
std::unique_ptr<Provider> make_provider(const std::string& spec,
                                        const HttpProviderConfig& http_config);

}  // namespace ted
