#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "russ/agent.hpp"
#include "russ/errors.hpp"
#include "russ/tool_registry.hpp"

namespace russ {

inline constexpr const char* kTokenEnv = "RUSS_LLM_TOKEN";
inline constexpr const char* kUrlEnv = "RUSS_LLM_URL";
inline constexpr const char* kDefaultUrl = "http://127.0.0.1:8080";

struct RemoteEndpointConfig {
  std::string base_url = kDefaultUrl;
  std::string token;  // bearer token; sourced from the environment only
  double timeout_s = 30.0;
  int max_retries = 2;
  double backoff_base_s = 1.0;  // waits base, 2*base, 4*base, ... between attempts
  int max_tokens = 512;

  /// Defaults with the URL and token taken from RUSS_LLM_URL / RUSS_LLM_TOKEN.
  static RemoteEndpointConfig from_environment() {
    RemoteEndpointConfig c;
    if (const char* url = std::getenv(kUrlEnv); url && *url) c.base_url = url;
    if (const char* token = std::getenv(kTokenEnv); token) c.token = token;
    return c;
  }

  /// Worst-case wall time of one generate call.
  double worst_case_seconds() const {
    double backoff = 0.0;
    for (int i = 0; i < max_retries; ++i) backoff += backoff_base_s * static_cast<double>(1 << i);
    return timeout_s * (max_retries + 1) + backoff;
  }
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

/// Re-closes a tool block cut off by the `</tool>` stop sequence.
inline std::string restore_stop_sequence(std::string text) {
  const auto open = text.rfind("<tool>");
  if (open != std::string::npos && text.find("</tool>", open) == std::string::npos) text += "</tool>";
  return text;
}

}  // namespace detail

/// Client for the prompt-in/text-out generation endpoint. Each call owns its
/// connection, so calls may run concurrently.
class RemoteClient {
 public:
  explicit RemoteClient(RemoteEndpointConfig cfg) : cfg_(std::move(cfg)) {
    if (!(cfg_.timeout_s > 0.0)) throw InvalidArgument("timeout must be positive");
    if (cfg_.max_retries < 0) throw InvalidArgument("max_retries must be non-negative");
    url_ = detail::split_url(cfg_.base_url);
  }

  const RemoteEndpointConfig& config() const { return cfg_; }

  static Json request_body(const std::string& prompt, int max_tokens) {
    return Json{{"prompt", prompt}, {"max_tokens", max_tokens}, {"stop", Json::array({"</tool>"})}};
  }

  std::string generate(const std::string& prompt) const {
    enum class Failure { none, unreachable, timeout, server_error };
    Failure last = Failure::none;
    int last_status = 0;
    const std::string body = request_body(prompt, cfg_.max_tokens).dump();
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);

    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        const double wait = cfg_.backoff_base_s * static_cast<double>(1 << (attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
      httplib::Client client(url_.origin);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      if (!cfg_.token.empty()) client.set_bearer_token_auth(cfg_.token);
      const auto started = std::chrono::steady_clock::now();
      auto res = client.Post(url_.prefix + "/v1/generate", body, "application/json");
      if (!res) {
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                               (res.error() == httplib::Error::Read && elapsed >= timeout * 0.9);
        last = timed_out ? Failure::timeout : Failure::unreachable;
        continue;
      }
      if (res->status >= 500) {
        last = Failure::server_error;
        last_status = res->status;
        continue;
      }
      if (res->status < 200 || res->status >= 300) throw BadStatus(res->status);
      Json payload;
      try {
        payload = Json::parse(res->body);
      } catch (const Json::parse_error&) {
        throw BadPayload("response is not JSON");
      }
      if (!payload.is_object() || !payload.contains("text") || !payload.at("text").is_string())
        throw BadPayload("response lacks a string \"text\" field");
      return detail::restore_stop_sequence(payload.at("text").get<std::string>());
    }
    switch (last) {
      case Failure::timeout: throw Timeout("no response within " + Json(cfg_.timeout_s).dump() + " s");
      case Failure::server_error: throw BadStatus(last_status);
      default: throw EndpointUnreachable(cfg_.base_url);
    }
  }

 private:
  RemoteEndpointConfig cfg_;
  detail::SplitUrl url_;
};

class RemotePolicy : public Policy {
 public:
  explicit RemotePolicy(RemoteEndpointConfig cfg) : client_(std::move(cfg)) {}

  std::string generate(const std::string& context) override { return client_.generate(context); }
  std::string name() const override { return "remote"; }

 private:
  RemoteClient client_;
};

// ---------------------------------------------------------------------------
// Conformance stub

struct ScriptedResponse {
  int status = 200;
  std::string body;  // sent verbatim
  int delay_ms = 0;

  static ScriptedResponse text(std::string text, int status = 200) {
    return {status, Json{{"text", std::move(text)}}.dump(), 0};
  }
};

/// Parses {"responses": [{"status": 200, "body": {...} | "raw", "delay_ms": 0}]}.
inline std::vector<ScriptedResponse> parse_stub_script(std::string_view document) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw FormatError(e.what());
  }
  if (!j.is_object() || !j.contains("responses") || !j.at("responses").is_array())
    throw SchemaError("stub script needs a \"responses\" array");
  std::vector<ScriptedResponse> out;
  for (const auto& r : j.at("responses")) {
    ScriptedResponse s;
    s.status = r.value("status", 200);
    s.delay_ms = r.value("delay_ms", 0);
    if (r.contains("body")) s.body = r.at("body").is_string() ? r.at("body").get<std::string>() : r.at("body").dump();
    out.push_back(std::move(s));
  }
  return out;
}

struct RecordedRequest {
  std::string body;
  std::string authorization;
};

/// Serves the generation protocol from a script, one entry per request in
/// arrival order; requests past the end get HTTP 500.
class StubServer {
 public:
  StubServer(std::vector<ScriptedResponse> script, int port = 0, std::string host = "127.0.0.1")
      : script_(std::move(script)), host_(std::move(host)) {
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    // no SO_REUSEPORT, so a second server on a busy port fails to bind
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    if (port == 0) {
      port_ = server_.bind_to_any_port(host_);
      if (port_ < 0) throw PortInUse("could not bind any port on " + host_);
    } else {
      if (!server_.bind_to_port(host_, port)) throw PortInUse(host_ + ":" + std::to_string(port));
      port_ = port;
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  ~StubServer() { close(); }

  void close() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

  std::vector<RecordedRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

  std::size_t served() const {
    std::lock_guard lock(mutex_);
    return next_;
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    ScriptedResponse reply{500, R"({"error":"script exhausted"})", 0};
    {
      std::lock_guard lock(mutex_);
      requests_.push_back({req.body, req.get_header_value("Authorization")});
      if (next_ < script_.size()) reply = script_[next_];
      ++next_;
    }
    if (reply.delay_ms > 0) {
      std::unique_lock lock(mutex_);
      wake_.wait_for(lock, std::chrono::milliseconds(reply.delay_ms), [this] { return stopping_; });
    }
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  }

  std::vector<ScriptedResponse> script_;
  std::string host_;
  int port_ = 0;
  httplib::Server server_;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  bool stopping_ = false;
  std::vector<RecordedRequest> requests_;
  std::size_t next_ = 0;
};

}  // namespace russ
