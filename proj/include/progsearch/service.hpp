#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/config.hpp"
#include "progsearch/error.hpp"
#include "progsearch/pipeline.hpp"
#include "progsearch/vsm.hpp"

namespace progsearch {

inline constexpr int kApiSchemaVersion = 1;
inline constexpr std::string_view kApiPrefix = "/v1";

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

using QueryParams = std::multimap<std::string, std::string>;

enum class SuggestionSource { kHead, kSynthetic };

struct SuggestionEntry {
  std::string query;
  SuggestionSource source = SuggestionSource::kSynthetic;
  std::size_t result_count = 0;
  std::uint64_t observed = 0;  // head queries only
};

/// Immutable component set behind the endpoints; swapped whole on reindex.
struct ServiceState {
  Pipeline pipeline;
  EngineParts parts;
  std::vector<SuggestionEntry> synthetic;  // sorted by result count desc, query asc
  std::vector<SuggestionEntry> head;       // sorted by observed desc, query asc
};

/// Tag model behind an HTTP endpoint: POST <url>?kind=<KIND> with the
/// TagRequest JSON, expecting a TagResponse JSON. Any transport failure or
/// non-200 answer counts as unreachable.
class HttpTagModel : public TagModel {
 public:
  explicit HttpTagModel(std::string url, int timeout_seconds = 5);
  std::optional<TagResponse> tag(const TagRequest& request, const TagKind& kind) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  int timeout_seconds_;
};

/// `base` plus an HttpTagModel for every endpoint URL in the config.
ModelRegistry with_http_models(const PipelineConfig& config, ModelRegistry base = {});

/// Endpoint logic without sockets. Every handler returns a status and a JSON
/// body; errors are problem-detail objects {status, code, message}.
class Service {
 public:
  Service() = default;

  /// POST /v1/index. Body: {"config": {...} | "config_path": "...",
  /// "catalog": "<delimited text>" | "catalog_path": "...",
  /// "train": bool, "model_path": "..."}.
  HttpResponse index(std::string_view body);
  /// GET /v1/search?q=&k=&engine=two-tier|vsm-only
  HttpResponse search(const QueryParams& params) const;
  /// GET /v1/parse?q=
  HttpResponse parse(const QueryParams& params) const;
  /// GET /v1/suggest?prefix=&k=
  HttpResponse suggest(const QueryParams& params) const;
  /// POST /v1/log. Body: {"queries": {"<query>": count, ...}}.
  HttpResponse upload_log(std::string_view body);
  /// GET /v1/status
  HttpResponse status() const;

  /// Routes (method, path) to a handler; unknown paths give 404.
  HttpResponse handle(std::string_view method, std::string_view path, const QueryParams& params,
                      std::string_view body);

  /// Installs an already built pipeline (CLI and tests).
  void install(Pipeline pipeline);
  std::shared_ptr<const ServiceState> snapshot() const;

  /// Called on the indexing thread after the build slot is taken.
  std::function<void()> on_build_start;
  /// Extra tag models available to Model strategies.
  ModelRegistry models;

 private:
  std::shared_ptr<const ServiceState> make_state(Pipeline pipeline,
                                                 std::vector<SuggestionEntry> head) const;

  mutable std::mutex mutex_;
  std::shared_ptr<const ServiceState> state_;
  std::atomic<bool> building_{false};
};

HttpResponse problem(int status, std::string_view code, std::string_view message);
int http_status(ErrorCode code);

/// Response bodies, also used by the CLI.
std::string search_response_json(std::string_view query, const RouteOutcome& outcome,
                                 const KnowledgeBase& kb);
std::string parse_response_json(std::string_view query, const ParseOutcome& outcome,
                                const KnowledgeBase& kb);

/// Binds a Service to an HTTP listener (blocking).
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace progsearch
