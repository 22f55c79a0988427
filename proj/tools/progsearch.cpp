#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/evalharness.hpp"
#include "progsearch/pipeline.hpp"
#include "progsearch/service.hpp"
#include "progsearch/text.hpp"

namespace fs = std::filesystem;
using namespace progsearch;

namespace {

struct Options {
  std::string config;
  std::string catalog;
  std::string model;
  std::string data_dir = ".";
  std::optional<std::uint64_t> seed;
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string query;
  std::string prefix;
  std::size_t k = 10;
  std::string engine = "two-tier";
  std::size_t products = 1000;
  std::vector<std::string> exclusions;
  std::optional<std::size_t> count;
  std::size_t stream = 100000;
  bool latency = false;
  std::string log;
};

PipelineConfig load(const Options& o) {
  if (o.config.empty()) throw Error(ErrorCode::kInput, "--config is required");
  auto config = load_config(o.config);
  if (!o.catalog.empty()) config.catalog = fs::absolute(o.catalog);
  if (o.seed) {
    config.generation.seed = *o.seed;
    config.training.seed = *o.seed;
  }
  if (o.count) config.generation.count = *o.count;
  return config;
}

Catalog catalog_of(const PipelineConfig& config) {
  if (!config.catalog) throw Error(ErrorCode::kInput, "no catalog: set it in the config or pass --catalog");
  return load_catalog(*config.catalog);
}

/// Index and generation always; the parser from --model when given, else trained.
Pipeline build(const Options& o, bool need_parser) {
  auto config = load(o);
  const bool from_file = !o.model.empty() && fs::exists(o.model);
  config.train_parser = need_parser && !from_file;
  auto pipeline = build_pipeline(config, catalog_of(config), with_http_models(config));
  if (need_parser && from_file) {
    pipeline.model = std::make_shared<ParserModel>(ParserModel::load(o.model, pipeline.kb->fingerprint()));
  }
  return pipeline;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInput, "cannot write " + path.string());
  out << text;
}

int emit(const HttpResponse& r) {
  (r.status == 200 ? std::cout : std::cerr) << r.body << "\n";
  if (r.status == 200) return 0;
  return r.status >= 500 && r.status != 503 ? 2 : 1;
}

QueryParams params(std::initializer_list<std::pair<const std::string, std::string>> list) {
  return QueryParams(list);
}

int cmd_fixture(const Options& o) {
  FixtureSpec spec;
  spec.products = o.products;
  for (const auto& e : o.exclusions) {
    const auto colon = e.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::kInput, "--exclude expects sortal:color, got " + e);
    spec.exclusions.emplace_back(canonical_value(e.substr(0, colon)), canonical_value(e.substr(colon + 1)));
  }
  const fs::path dir = fs::absolute(o.data_dir);
  fs::create_directories(dir);
  const auto catalog = make_fixture_catalog(spec, o.seed.value_or(7));
  write_catalog(dir / "catalog.tsv", catalog);
  auto config = fixture_config(spec);
  config.base_dir = dir;
  config.catalog = dir / "catalog.tsv";
  write_text(dir / "config.json", config_to_json(config) + "\n");
  std::cout << nlohmann::json{{"catalog", (dir / "catalog.tsv").string()},
                              {"config", (dir / "config.json").string()},
                              {"products", catalog.rows.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_index(const Options& o) {
  Service service;
  nlohmann::json body{{"config_path", fs::absolute(o.config).string()}, {"train", false}};
  if (!o.catalog.empty()) body["catalog_path"] = fs::absolute(o.catalog).string();
  return emit(service.index(body.dump()));
}

int cmd_generate(const Options& o) {
  auto config = load(o);
  config.train_parser = false;
  auto p = build_pipeline(config, catalog_of(config), with_http_models(config));
  const fs::path dir = o.data_dir;
  write_triples(dir / "triples.jsonl", p.triples);
  write_triples(dir / "train.jsonl", p.train_set);
  write_triples(dir / "heldout.jsonl", p.heldout);
  std::cout << nlohmann::json{{"triples", p.triples.size()},
                              {"augmented", p.augment.added},
                              {"train", p.train_set.size()},
                              {"heldout", p.heldout.size()},
                              {"dataset_hash", dataset_hash(p.triples)},
                              {"warnings", p.warnings}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  auto config = load(o);
  config.train_parser = true;
  auto p = build_pipeline(config, catalog_of(config), with_http_models(config));
  const fs::path out = o.model.empty() ? fs::path(o.data_dir) / "model.json" : fs::path(o.model);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  p.model->save(out);
  const auto metrics = evaluate(*p.model, p.heldout);
  std::cout << nlohmann::json{{"model", out.string()},
                              {"train_examples", p.train_report.train_examples},
                              {"epoch_mistakes", p.train_report.epoch_mistakes},
                              {"heldout_examples", metrics.examples},
                              {"heldout_exact_match", metrics.exact_match},
                              {"heldout_failure_rate", metrics.failure_rate}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_search(const Options& o) {
  Service service;
  service.install(build(o, o.engine != "vsm-only"));
  return emit(service.search(params({{"q", o.query}, {"k", std::to_string(o.k)}, {"engine", o.engine}})));
}

int cmd_parse(const Options& o) {
  Service service;
  service.install(build(o, true));
  return emit(service.parse(params({{"q", o.query}})));
}

int cmd_suggest(const Options& o) {
  Service service;
  service.install(build(o, !o.log.empty()));
  if (!o.log.empty()) {
    std::ifstream in(o.log);
    if (!in) throw Error(ErrorCode::kNotFound, "file not found: " + o.log);
    std::ostringstream body;
    body << in.rdbuf();
    if (const auto r = service.upload_log(body.str()); r.status != 200) return emit(r);
  }
  return emit(service.suggest(params({{"prefix", o.prefix}, {"k", std::to_string(o.k)}})));
}

int cmd_eval(const Options& o) {
  const auto pipeline = build(o, true);
  EvaluationOptions options;
  options.stream_size = o.stream;
  if (o.seed) options.seed = *o.seed;
  const auto result = run_evaluation(pipeline, options);
  const fs::path dir = o.data_dir;
  const auto base = report_basename(result.meta);
  write_text(dir / (base + ".json"), report_to_json(result.report, result.meta, o.latency) + "\n");
  write_text(dir / (base + ".txt"), report_to_text(result.report, result.meta));
  std::cout << report_to_text(result.report, result.meta);
  std::cout << "wrote " << (dir / (base + ".json")).string() << "\n";
  return 0;
}

HttpServer* g_server = nullptr;

int cmd_serve(const Options& o) {
  Service service;
  if (!o.config.empty()) {
    nlohmann::json body{{"config_path", fs::absolute(o.config).string()}};
    if (!o.catalog.empty()) body["catalog_path"] = fs::absolute(o.catalog).string();
    if (!o.model.empty()) body["model_path"] = fs::absolute(o.model).string();
    if (const auto r = service.index(body.dump()); r.status != 200) return emit(r);
  }
  HttpServer server(service);
  const int port = server.bind(o.host, o.port);
  std::cerr << "listening on http://" << o.host << ":" << port << "/v1\n";
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-tier product search: grammar-trained semantic parsing with BM25 fallback"};
  app.require_subcommand(1);
  Options o;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--catalog", o.catalog, "Catalog file, overriding the config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed for generation, training and evaluation");
    sub->add_option("--data-dir", o.data_dir, "Directory for written artifacts");
  };

  auto* fixture = app.add_subcommand("fixture", "Write a synthetic catalog and matching config");
  fixture->add_option("--data-dir", o.data_dir, "Output directory");
  fixture->add_option("--seed", o.seed, "Catalog seed");
  fixture->add_option("--products", o.products, "Number of products");
  fixture->add_option("--exclude", o.exclusions, "sortal:color pair that never occurs");

  auto* index = app.add_subcommand("index", "Extract tags and build the text index; print the summary");
  with_config(index);

  auto* generate = app.add_subcommand("generate", "Write synthetic (query, form, golden) triples");
  with_config(generate);
  generate->add_option("--count", o.count, "Number of triples before augmentation");

  auto* train = app.add_subcommand("train", "Train the parser and save the model");
  with_config(train);
  train->add_option("--count", o.count, "Number of triples before augmentation");
  train->add_option("--model", o.model, "Model output path (default <data-dir>/model.json)");

  auto* search = app.add_subcommand("search", "Answer one query");
  with_config(search);
  search->add_option("query", o.query, "Query text")->required();
  search->add_option("-k,--k", o.k, "Result count");
  search->add_option("--engine", o.engine, "two-tier or vsm-only")->check(CLI::IsMember({"two-tier", "vsm-only"}));
  search->add_option("--model", o.model, "Trained model (trains in memory when absent)");

  auto* parse = app.add_subcommand("parse", "Show the logical form of a query");
  with_config(parse);
  parse->add_option("query", o.query, "Query text")->required();
  parse->add_option("--model", o.model, "Trained model (trains in memory when absent)");

  auto* suggest = app.add_subcommand("suggest", "Type-ahead suggestions for a prefix");
  with_config(suggest);
  suggest->add_option("prefix", o.prefix, "Prefix")->required();
  suggest->add_option("-k,--k", o.k, "Suggestion count");
  suggest->add_option("--log", o.log, "Query log JSON {\"queries\": {query: count}}")->check(CLI::ExistingFile);
  suggest->add_option("--model", o.model, "Trained model, used with --log");

  auto* eval = app.add_subcommand("eval", "Run the engine comparison and write the report");
  with_config(eval);
  eval->add_option("--model", o.model, "Trained model (trains in memory when absent)");
  eval->add_option("--stream", o.stream, "Query stream length");
  eval->add_flag("--latency", o.latency, "Include latency in the JSON report");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API under /v1");
  with_config(serve);
  serve->add_option("--model", o.model, "Trained model loaded at startup");
  serve->add_option("--port", o.port, "Port (0 picks a free one)");
  serve->add_option("--host", o.host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fixture) return cmd_fixture(o);
    if (*index) return cmd_index(o);
    if (*generate) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*search) return cmd_search(o);
    if (*parse) return cmd_parse(o);
    if (*suggest) return cmd_suggest(o);
    if (*eval) return cmd_eval(o);
    if (*serve) return cmd_serve(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::kInternal || e.code() == ErrorCode::kUnavailable ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
