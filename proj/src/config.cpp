#include "progsearch/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

TagSchema PipelineConfig::schema() const {
  TagSchema schema = kinds.empty() ? TagSchema::standard() : TagSchema(kinds);
  for (const auto& [kind, values] : vocab_seeds) schema.set_seeds(kind, values);
  for (const auto& s : similarity) schema.add_similarity(s.kind, s.a, s.b, s.distance);
  return schema;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "file not found: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<TagKind> kinds_from(const json& j) {
  std::vector<TagKind> out;
  for (const auto& k : j) out.emplace_back(k.get<std::string>());
  return out;
}

ExtractionStrategy strategy_from(const json& j) {
  ExtractionStrategy s;
  s.tag = TagKind(j.at("tag").get<std::string>());
  const auto type = to_lower(j.at("type").get<std::string>());
  if (type == "config") {
    s.variant = ConfigStrategy{j.at("column").get<std::string>()};
  } else if (type == "heuristic") {
    HeuristicStrategy h;
    h.rule = j.at("rule").get<std::string>();
    if (j.contains("params")) h.params = j.at("params").get<std::map<std::string, std::string>>();
    s.variant = std::move(h);
  } else if (type == "model") {
    s.variant = ModelStrategy{j.at("endpoint").get<std::string>()};
  } else {
    throw Error(ErrorCode::kConfig, "unknown strategy type '" + type + "'");
  }
  return s;
}

json strategy_to_json(const ExtractionStrategy& s) {
  json j{{"tag", s.tag.name()}};
  if (const auto* c = std::get_if<ConfigStrategy>(&s.variant)) {
    j["type"] = "config";
    j["column"] = c->column;
  } else if (const auto* h = std::get_if<HeuristicStrategy>(&s.variant)) {
    j["type"] = "heuristic";
    j["rule"] = h->rule;
    j["params"] = h->params;
  } else {
    j["type"] = "model";
    j["endpoint"] = std::get<ModelStrategy>(s.variant).endpoint;
  }
  return j;
}

void check_strategy_coverage(PipelineConfig& config) {
  const auto schema_kinds = config.kinds.empty() ? TagSchema::standard().kinds() : config.kinds;
  for (const auto& s : config.strategies) {
    if (std::find(schema_kinds.begin(), schema_kinds.end(), s.tag) == schema_kinds.end()) {
      throw Error(ErrorCode::kConfig, "strategy for kind " + s.tag.name() + " which is not in the schema");
    }
  }
  for (const auto& kind : schema_kinds) {
    const bool covered = std::any_of(config.strategies.begin(), config.strategies.end(),
                                     [&](const ExtractionStrategy& s) { return s.tag == kind; });
    if (covered) continue;
    if (kind.numeric()) {
      config.strategies.push_back({kind, ConfigStrategy{"Price"}});
    } else {
      throw Error(ErrorCode::kConfig, "kind " + kind.name() + " has no extraction strategy");
    }
  }
}

}  // namespace

PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  std::string key = "<document>";
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::kConfig, "config document must be a JSON object");

    key = "catalog";
    if (j.contains(key) && !j[key].is_null()) c.catalog = resolve(base_dir, j[key].get<std::string>());
    key = "kinds";
    if (j.contains(key)) c.kinds = kinds_from(j[key]);
    key = "vocab_seeds";
    if (j.contains(key)) {
      for (const auto& [kind, values] : j[key].items()) {
        c.vocab_seeds[TagKind(kind)] = values.get<std::vector<std::string>>();
      }
    }
    key = "similarity";
    if (j.contains(key)) {
      for (const auto& s : j[key]) {
        c.similarity.push_back({TagKind(s.at("kind").get<std::string>()), s.at("a").get<std::string>(),
                                s.at("b").get<std::string>(), s.at("distance").get<double>()});
      }
    }
    key = "strategies";
    if (j.contains(key)) {
      for (const auto& s : j[key]) c.strategies.push_back(strategy_from(s));
    }
    key = "models";
    if (j.contains(key)) c.model_endpoints = j[key].get<std::map<std::string, std::string>>();

    key = "grammar";
    if (j.contains(key)) {
      const auto& g = j[key];
      std::string lines;
      if (g.contains("file")) lines = read_file(resolve(base_dir, g["file"].get<std::string>()));
      if (g.contains("productions")) {
        for (const auto& line : g["productions"]) lines += "\n" + line.get<std::string>();
      }
      c.productions = parse_productions(lines);
    }
    key = "synonyms";
    if (j.contains(key)) c.synonyms = j[key].get<std::map<std::string, std::vector<std::string>>>();

    key = "generation";
    if (j.contains(key)) {
      const auto& g = j[key];
      c.generation.count = g.value("count", c.generation.count);
      c.generation.seed = g.value("seed", c.generation.seed);
      c.generation.heldout_fraction = g.value("heldout_fraction", c.generation.heldout_fraction);
      const auto mode = g.value("mode", std::string("non_empty_only"));
      if (mode == "non_empty_only") {
        c.generation.policy.mode = GenerationPolicy::Mode::kNonEmptyOnly;
      } else if (mode == "over_generate") {
        c.generation.policy.mode = GenerationPolicy::Mode::kOverGenerate;
      } else {
        throw Error(ErrorCode::kConfig, "generation.mode must be non_empty_only or over_generate");
      }
      c.generation.policy.weight_by_golden = g.value("weight_by_golden", false);
    }
    key = "training";
    if (j.contains(key)) {
      const auto& t = j[key];
      c.train_parser = t.value("enabled", true);
      c.training.seed = t.value("seed", c.training.seed);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.calibration_fraction = t.value("calibration_fraction", c.training.calibration_fraction);
      c.training.use_gazetteer = t.value("use_gazetteer", c.training.use_gazetteer);
      c.training.use_context = t.value("use_context", c.training.use_context);
      c.training.use_shape = t.value("use_shape", c.training.use_shape);
    }
    key = "fallback";
    if (j.contains(key)) {
      const auto& f = j[key];
      if (f.contains("priority")) c.fallback.priority = kinds_from(f["priority"]);
      if (f.contains("no_relax")) {
        for (const auto& k : kinds_from(f["no_relax"])) c.fallback.no_relax.insert(k);
      }
      if (f.contains("no_drop")) {
        for (const auto& k : kinds_from(f["no_drop"])) c.fallback.no_drop.insert(k);
      }
      c.fallback.max_steps = f.value("max_steps", c.fallback.max_steps);
    }
    key = "router";
    if (j.contains(key)) {
      const auto& r = j[key];
      c.router.threshold = r.value("threshold", c.router.threshold);
      c.router.k = r.value("k", c.router.k);
      if (r.contains("fields")) c.router.fields = r["fields"].get<std::vector<std::string>>();
    }
    key = "rank";
    if (j.contains(key)) {
      const auto& r = j[key];
      c.signal_column = r.value("signal_column", c.signal_column);
      if (r.contains("weights")) c.weights.weights = r["weights"].get<std::map<std::string, double>>();
    }
    key = "suggest";
    if (j.contains(key)) {
      c.suggest.synthetic = j[key].value("synthetic", c.suggest.synthetic);
      c.suggest.head_share = j[key].value("head_share", c.suggest.head_share);
    }
    key = "templates";
    if (j.contains(key)) {
      const auto& t = j[key];
      c.templates.exact = t.value("exact", c.templates.exact);
      c.templates.relax = t.value("relax", c.templates.relax);
      c.templates.drop = t.value("drop", c.templates.drop);
      c.templates.vsm = t.value("vsm", c.templates.vsm);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, "config key '" + key + "': " + e.what());
  }
  check_strategy_coverage(c);
  if (c.router.k == 0) throw Error(ErrorCode::kConfig, "router.k must be at least 1");
  if (c.generation.heldout_fraction < 0 || c.generation.heldout_fraction >= 1) {
    throw Error(ErrorCode::kConfig, "generation.heldout_fraction must be in [0, 1)");
  }
  (void)c.schema();  // validates seeds and similarity against the kinds
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  if (c.catalog) {
    auto path = *c.catalog;
    if (!c.base_dir.empty()) {
      auto rel = path.lexically_relative(c.base_dir);
      if (!rel.empty() && *rel.begin() != "..") path = rel;
    }
    j["catalog"] = path.generic_string();
  }
  json kinds = json::array();
  for (const auto& k : c.kinds) kinds.push_back(k.name());
  j["kinds"] = kinds;
  json seeds = json::object();
  for (const auto& [k, v] : c.vocab_seeds) seeds[k.name()] = v;
  j["vocab_seeds"] = seeds;
  json sim = json::array();
  for (const auto& s : c.similarity) {
    sim.push_back({{"kind", s.kind.name()}, {"a", s.a}, {"b", s.b}, {"distance", s.distance}});
  }
  j["similarity"] = sim;
  json strategies = json::array();
  for (const auto& s : c.strategies) strategies.push_back(strategy_to_json(s));
  j["strategies"] = strategies;
  j["models"] = c.model_endpoints;
  json productions = json::array();
  for (const auto& p : c.productions) productions.push_back(to_line(p));
  j["grammar"] = {{"productions", productions}};
  j["synonyms"] = c.synonyms;
  j["generation"] = {
      {"count", c.generation.count},
      {"seed", c.generation.seed},
      {"heldout_fraction", c.generation.heldout_fraction},
      {"mode", c.generation.policy.mode == GenerationPolicy::Mode::kNonEmptyOnly ? "non_empty_only"
                                                                                 : "over_generate"},
      {"weight_by_golden", c.generation.policy.weight_by_golden}};
  j["training"] = {{"enabled", c.train_parser},
                   {"seed", c.training.seed},
                   {"epochs", c.training.epochs},
                   {"calibration_fraction", c.training.calibration_fraction},
                   {"use_gazetteer", c.training.use_gazetteer},
                   {"use_context", c.training.use_context},
                   {"use_shape", c.training.use_shape}};
  json priority = json::array(), no_relax = json::array(), no_drop = json::array();
  for (const auto& k : c.fallback.priority) priority.push_back(k.name());
  for (const auto& k : c.fallback.no_relax) no_relax.push_back(k.name());
  for (const auto& k : c.fallback.no_drop) no_drop.push_back(k.name());
  j["fallback"] = {{"priority", priority}, {"no_relax", no_relax}, {"no_drop", no_drop},
                   {"max_steps", c.fallback.max_steps}};
  j["router"] = {{"threshold", c.router.threshold}, {"k", c.router.k}, {"fields", c.router.fields}};
  j["rank"] = {{"signal_column", c.signal_column}, {"weights", c.weights.weights}};
  j["suggest"] = {{"synthetic", c.suggest.synthetic}, {"head_share", c.suggest.head_share}};
  j["templates"] = {{"exact", c.templates.exact}, {"relax", c.templates.relax},
                    {"drop", c.templates.drop}, {"vsm", c.templates.vsm}};
  return j.dump(2);
}

std::string config_hash(const PipelineConfig& config) {
  auto located_anywhere = config;
  located_anywhere.catalog.reset();
  located_anywhere.base_dir.clear();
  return hex64(fnv1a(config_to_json(located_anywhere))).substr(0, 8);
}

}  // namespace progsearch
