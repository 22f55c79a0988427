#include "progsearch/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInput:
    case ErrorCode::kConfig:
    case ErrorCode::kNotFound:
    case ErrorCode::kMismatch: return 400;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kUnavailable: return 503;
    case ErrorCode::kInternal: return 500;
  }
  return 500;
}

HttpResponse problem(int status, std::string_view code, std::string_view message) {
  json j{{"status", status}, {"code", code}, {"message", message}};
  return {status, j.dump(), "application/problem+json"};
}

namespace {

HttpResponse ok(const json& j) { return {200, j.dump(), "application/json"}; }

std::optional<std::string> param(const QueryParams& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

std::size_t count_param(const QueryParams& params, const std::string& key, std::size_t fallback) {
  auto v = param(params, key);
  if (!v) return fallback;
  std::size_t n = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), n);
  if (ec != std::errc{} || ptr != v->data() + v->size() || n == 0) {
    throw Error(ErrorCode::kInput, "parameter " + key + " must be a positive integer");
  }
  return n;
}

std::string required_query(const QueryParams& params) {
  auto q = param(params, "q");
  if (!q || tokenize(*q).empty()) throw Error(ErrorCode::kInput, "parameter q must be a non-empty query");
  return *q;
}

json atom_json(const Atom& atom) {
  if (const auto* p = std::get_if<Predicate>(&atom)) return {{"kind", p->kind.name()}, {"value", p->value}};
  const auto& c = std::get<Comparison>(atom);
  return {{"attr", c.attribute.name()}, {"op", std::string(to_symbol(c.op))}, {"bound", c.bound}};
}

json atoms_json(const LogicalForm& form) {
  json atoms = json::array();
  for (const auto& a : form.atoms()) atoms.push_back(atom_json(a));
  return atoms;
}

json decision_json(const RouteDecision& d) {
  json j{{"path", std::string(to_string(d.path))}};
  if (d.reason == RouteReason::kNone) {
    j["reason"] = nullptr;
  } else {
    json reason{{"type", std::string(to_string(d.reason))}};
    if (d.reason == RouteReason::kLowConfidence) {
      reason["threshold"] = d.threshold;
      reason["value"] = d.value;
    }
    j["reason"] = std::move(reason);
  }
  if (!d.detail.empty()) j["detail"] = d.detail;
  return j;
}

json trace_json(const FallbackTrace& trace) {
  json steps = json::array();
  for (const auto& step : trace.steps) {
    json s;
    if (const auto* r = std::get_if<RelaxValue>(&step.action)) {
      s = {{"action", "RelaxValue"}, {"kind", r->kind.name()}, {"from", r->from}, {"to", r->to},
           {"distance", r->distance}};
    } else {
      s = {{"action", "DropAtom"}, {"kind", std::get<DropAtom>(step.action).kind.name()}};
    }
    s["rationale"] = step.rationale;
    steps.push_back(std::move(s));
  }
  return {{"steps", steps}, {"message", trace.message}};
}

std::string_view source_name(SuggestionSource s) {
  return s == SuggestionSource::kHead ? "HEAD" : "SYNTHETIC";
}

std::size_t result_count(const std::string& query, EngineParts parts) {
  parts.router.k = std::max<std::size_t>(parts.kb->size(), 1);
  return route(query, parts).results.size();
}

template <typename F>
HttpResponse guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return problem(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return problem(500, "internal_error", e.what());
  }
}

}  // namespace

std::string search_response_json(std::string_view query, const RouteOutcome& out,
                                 const KnowledgeBase& kb) {
  json results = json::array();
  for (const auto& r : out.results) {
    json item{{"sku", r.sku}, {"tier", r.relevance_tier}, {"position", r.final_position},
              {"score", r.score}};
    item["title"] = nullptr;
    item["price"] = nullptr;
    if (auto id = kb.find(r.sku)) {
      const auto& p = kb.product(*id);
      if (auto t = p.raw.find("Title"); t != p.raw.end()) item["title"] = t->second;
      if (p.price) item["price"] = *p.price;
    }
    results.push_back(std::move(item));
  }
  json j{{"schema_version", kApiSchemaVersion},
         {"query", std::string(query)},
         {"results", std::move(results)},
         {"decision", decision_json(out.decision)},
         {"trace", out.trace ? trace_json(*out.trace) : json(nullptr)},
         {"explanation", out.explanation}};
  if (out.parse) {
    json parse{{"atoms", atoms_json(out.parse->form)}, {"confidence", out.parse->confidence}};
    parse["sql_text"] = out.plan ? json(out.plan->sql_text) : json(nullptr);
    j["parse"] = std::move(parse);
  } else {
    j["parse"] = nullptr;
  }
  const auto& t = out.timing;
  j["timing"] = {{"parse_us", t.parse_us}, {"compile_us", t.compile_us}, {"execute_us", t.execute_us},
                 {"rank_us", t.rank_us},   {"vsm_us", t.vsm_us},         {"total_us", t.total_us}};
  return j.dump();
}

std::string parse_response_json(std::string_view query, const ParseOutcome& outcome,
                                const KnowledgeBase& kb) {
  json j{{"schema_version", kApiSchemaVersion}, {"query", std::string(query)}};
  if (const auto* f = std::get_if<ParseFailure>(&outcome)) {
    j["failure"] = true;
    j["reason"] = f->reason;
    j["tokens"] = f->tokens;
    j["labels"] = f->labels;
    return j.dump();
  }
  const auto& r = std::get<ParseResult>(outcome);
  j["failure"] = false;
  j["atoms"] = atoms_json(r.form);
  j["form"] = r.form.to_string();
  j["tokens"] = r.tokens;
  j["labels"] = r.labels;
  json alignment = json::array();
  for (const auto& [t, a] : r.alignment) alignment.push_back({t, a});
  j["alignment"] = std::move(alignment);
  j["confidence"] = r.confidence;
  j["margin"] = r.margin;
  j["sql_text"] = compile(r.form, kb).sql_text;
  j["warnings"] = r.warnings;
  return j.dump();
}

ModelRegistry with_http_models(const PipelineConfig& config, ModelRegistry base) {
  for (const auto& [id, url] : config.model_endpoints) base.add(id, std::make_shared<HttpTagModel>(url));
  return base;
}

// --- state -------------------------------------------------------------------------

std::shared_ptr<const ServiceState> Service::make_state(Pipeline pipeline,
                                                        std::vector<SuggestionEntry> head) const {
  auto state = std::make_shared<ServiceState>();
  state->parts = pipeline.parts();
  std::map<std::string, std::size_t> synthetic;
  auto add = [&](const SynthTriple& t) {
    if (!t.golden.empty()) synthetic.emplace(t.query, t.golden.size());
  };
  for (const auto& t : pipeline.triples) add(t);
  if (pipeline.generator && pipeline.config.suggest.synthetic > 0) {
    for (const auto& t : generate_triples(*pipeline.generator, pipeline.config.suggest.synthetic,
                                          pipeline.config.generation.seed + 1)) {
      add(t);
    }
  }
  for (const auto& [q, n] : synthetic) state->synthetic.push_back({q, SuggestionSource::kSynthetic, n, 0});
  std::sort(state->synthetic.begin(), state->synthetic.end(), [](const auto& a, const auto& b) {
    return a.result_count != b.result_count ? a.result_count > b.result_count : a.query < b.query;
  });
  for (auto& entry : head) entry.result_count = result_count(entry.query, state->parts);
  state->head = std::move(head);
  state->pipeline = std::move(pipeline);
  return state;
}

void Service::install(Pipeline pipeline) {
  auto state = make_state(std::move(pipeline), {});
  std::lock_guard lock(mutex_);
  state_ = std::move(state);
}

std::shared_ptr<const ServiceState> Service::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

// --- endpoints ---------------------------------------------------------------------

HttpResponse Service::index(std::string_view body) {
  bool expected = false;
  if (!building_.compare_exchange_strong(expected, true)) {
    return problem(409, "conflict", "an index build is already in progress");
  }
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{building_};

  return guarded([&] {
    if (on_build_start) on_build_start();
    json req;
    try {
      req = json::parse(body.empty() ? std::string_view("{}") : body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInput, std::string("request body is not JSON: ") + e.what());
    }
    if (!req.is_object()) throw Error(ErrorCode::kInput, "request body must be a JSON object");

    PipelineConfig config;
    if (req.contains("config")) {
      config = parse_config(req["config"].dump(), std::filesystem::current_path());
    } else if (req.contains("config_path")) {
      config = load_config(req["config_path"].get<std::string>());
    } else {
      throw Error(ErrorCode::kInput, "request needs config or config_path");
    }
    if (req.contains("train")) config.train_parser = req["train"].get<bool>();

    Catalog catalog;
    if (req.contains("catalog")) {
      catalog = parse_catalog(req["catalog"].get<std::string>());
    } else if (req.contains("catalog_path")) {
      catalog = load_catalog(req["catalog_path"].get<std::string>());
    } else if (config.catalog) {
      catalog = load_catalog(*config.catalog);
    } else {
      throw Error(ErrorCode::kInput, "request needs catalog, catalog_path, or a config with a catalog");
    }

    const auto registry = with_http_models(config, models);
    const bool load_model = req.contains("model_path");
    if (load_model) config.train_parser = false;
    auto pipeline = build_pipeline(config, catalog, registry);
    if (load_model) {
      pipeline.model = std::make_shared<ParserModel>(
          ParserModel::load(req["model_path"].get<std::string>(), pipeline.kb->fingerprint()));
    }

    json summary{{"schema_version", kApiSchemaVersion},
                 {"products", pipeline.kb->size()},
                 {"untyped", pipeline.extraction.untyped},
                 {"priceless", pipeline.extraction.priceless},
                 {"model_skipped", pipeline.extraction.model_skipped},
                 {"schema_fingerprint", pipeline.kb->fingerprint()},
                 {"documents", pipeline.index->document_count()},
                 {"triples", pipeline.triples.size()},
                 {"warnings", pipeline.warnings}};
    json vocab = json::object();
    for (const auto& kind : pipeline.kb->schema().kinds()) {
      if (!kind.numeric()) vocab[kind.name()] = pipeline.kb->vocabulary(kind).size();
    }
    summary["vocabulary"] = std::move(vocab);
    summary["parser"] = pipeline.model ? json{{"dataset_hash", pipeline.model->dataset_hash()},
                                              {"calibration_exact_match",
                                               pipeline.train_report.calibration_exact_match}}
                                       : json(nullptr);

    std::vector<SuggestionEntry> head;
    if (auto old = snapshot()) head = old->head;  // the uploaded log survives a reindex
    auto state = make_state(std::move(pipeline), std::move(head));
    {
      std::lock_guard lock(mutex_);
      state_ = std::move(state);
    }
    return ok(summary);
  });
}

HttpResponse Service::search(const QueryParams& params) const {
  return guarded([&] {
    const auto q = required_query(params);
    auto state = snapshot();
    if (!state) throw Error(ErrorCode::kUnavailable, "not indexed");
    EngineParts parts = state->parts;
    parts.router.k = count_param(params, "k", parts.router.k);
    const auto engine = param(params, "engine").value_or("two-tier");
    RouteOutcome out;
    if (engine == "two-tier") {
      out = route(q, parts);
    } else if (engine == "vsm-only") {
      out = route_vsm_only(q, parts);
    } else {
      throw Error(ErrorCode::kInput, "engine must be two-tier or vsm-only");
    }
    return HttpResponse{200, search_response_json(q, out, *parts.kb), "application/json"};
  });
}

HttpResponse Service::parse(const QueryParams& params) const {
  return guarded([&] {
    const auto q = required_query(params);
    auto state = snapshot();
    if (!state || !state->parts.model) throw Error(ErrorCode::kUnavailable, "no parser model loaded");
    return HttpResponse{200, parse_response_json(q, state->parts.model->parse(q), *state->parts.kb),
                        "application/json"};
  });
}

HttpResponse Service::suggest(const QueryParams& params) const {
  return guarded([&] {
    auto state = snapshot();
    if (!state || !state->pipeline.generator) throw Error(ErrorCode::kUnavailable, "generator not built");
    const auto prefix = canonical_value(param(params, "prefix").value_or(""));
    const auto k = count_param(params, "k", 10);
    auto matches = [&](const std::string& q) { return q.compare(0, prefix.size(), prefix) == 0; };

    std::vector<const SuggestionEntry*> head, synthetic;
    std::set<std::string_view> seen;
    for (const auto& e : state->head) {
      if (matches(e.query) && seen.insert(e.query).second) head.push_back(&e);
    }
    for (const auto& e : state->synthetic) {
      if (matches(e.query) && seen.insert(e.query).second) synthetic.push_back(&e);
    }
    const std::size_t head_slots =
        head.empty() ? 0
                     : std::min(head.size(), static_cast<std::size_t>(std::ceil(
                                                 static_cast<double>(k) *
                                                 state->pipeline.config.suggest.head_share)));
    std::vector<const SuggestionEntry*> chosen(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(head_slots));
    for (const auto* e : synthetic) {
      if (chosen.size() >= k) break;
      chosen.push_back(e);
    }
    for (std::size_t i = head_slots; i < head.size() && chosen.size() < k; ++i) chosen.push_back(head[i]);

    json entries = json::array();
    for (const auto* e : chosen) {
      json item{{"query", e->query}, {"source", std::string(source_name(e->source))}, {"result_count", e->result_count}};
      if (e->source == SuggestionSource::kHead) item["observed"] = e->observed;
      entries.push_back(std::move(item));
    }
    return ok({{"schema_version", kApiSchemaVersion}, {"prefix", prefix}, {"suggestions", entries}});
  });
}

HttpResponse Service::upload_log(std::string_view body) {
  return guarded([&] {
    auto state = snapshot();
    if (!state) throw Error(ErrorCode::kUnavailable, "not indexed");
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInput, std::string("request body is not JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("queries") || !req["queries"].is_object()) {
      throw Error(ErrorCode::kInput, "request needs a queries object mapping query to count");
    }
    std::map<std::string, std::uint64_t> counts;
    for (const auto& [q, c] : req["queries"].items()) {
      if (!c.is_number_unsigned()) throw Error(ErrorCode::kInput, "count for '" + q + "' must be a non-negative integer");
      const auto query = canonical_value(q);
      if (!query.empty()) counts[query] += c.get<std::uint64_t>();
    }
    std::vector<SuggestionEntry> head;
    for (const auto& [q, c] : counts) {
      head.push_back({q, SuggestionSource::kHead, result_count(q, state->parts), c});
    }
    std::sort(head.begin(), head.end(), [](const auto& a, const auto& b) {
      return a.observed != b.observed ? a.observed > b.observed : a.query < b.query;
    });
    auto next = std::make_shared<ServiceState>(*state);
    next->head = std::move(head);
    const auto n = next->head.size();
    {
      std::lock_guard lock(mutex_);
      state_ = std::move(next);
    }
    return ok({{"schema_version", kApiSchemaVersion}, {"head_queries", n}});
  });
}

HttpResponse Service::status() const {
  auto state = snapshot();
  json j{{"schema_version", kApiSchemaVersion}, {"indexed", state != nullptr}, {"building", building_.load()}};
  if (state) {
    j["products"] = state->parts.kb->size();
    j["schema_fingerprint"] = state->parts.kb->fingerprint();
    j["parser"] = state->parts.model != nullptr;
  }
  return ok(j);
}

HttpResponse Service::handle(std::string_view method, std::string_view path, const QueryParams& params,
                             std::string_view body) {
  if (path.substr(0, kApiPrefix.size()) != kApiPrefix) {
    return problem(404, "not_found", "unknown path " + std::string(path));
  }
  const auto route_path = path.substr(kApiPrefix.size());
  auto wrong_method = [&] {
    return problem(405, "method_not_allowed", std::string(method) + " not allowed on " + std::string(path));
  };
  if (route_path == "/index") return method == "POST" ? index(body) : wrong_method();
  if (route_path == "/log") return method == "POST" ? upload_log(body) : wrong_method();
  if (route_path == "/search") return method == "GET" ? search(params) : wrong_method();
  if (route_path == "/parse") return method == "GET" ? parse(params) : wrong_method();
  if (route_path == "/suggest") return method == "GET" ? suggest(params) : wrong_method();
  if (route_path == "/status") return method == "GET" ? status() : wrong_method();
  return problem(404, "not_found", "unknown path " + std::string(path));
}

}  // namespace progsearch
