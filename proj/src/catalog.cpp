#include "progsearch/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

TagKind::TagKind(std::string_view name) : name_(to_upper(trim(name))) {}

// --- schema -------------------------------------------------------------------

TagSchema::TagSchema(std::vector<TagKind> kinds) {
  for (const auto& kind : kinds) add_kind(kind);
}

TagSchema TagSchema::standard() {
  return TagSchema({kSortal, kBrand, kColor, kMaterial, kGender, kPrice});
}

bool TagSchema::has(const TagKind& kind) const {
  return std::find(kinds_.begin(), kinds_.end(), kind) != kinds_.end();
}

void TagSchema::add_kind(const TagKind& kind) {
  if (kind.name().empty()) throw Error(ErrorCode::kConfig, "empty tag kind name");
  if (has(kind)) throw Error(ErrorCode::kConfig, "duplicate tag kind " + kind.name());
  kinds_.push_back(kind);
}

const std::vector<std::string>& TagSchema::seeds(const TagKind& kind) const {
  static const std::vector<std::string> kEmpty;
  auto it = seeds_.find(kind);
  return it == seeds_.end() ? kEmpty : it->second;
}

void TagSchema::set_seeds(const TagKind& kind, std::vector<std::string> values) {
  if (!has(kind)) throw Error(ErrorCode::kConfig, "seeds for unknown kind " + kind.name());
  for (auto& v : values) v = canonical_value(v);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  seeds_[kind] = std::move(values);
}

void TagSchema::add_similarity(const TagKind& kind, std::string_view a, std::string_view b,
                               double distance) {
  if (!has(kind)) throw Error(ErrorCode::kConfig, "similarity for unknown kind " + kind.name());
  if (kind.numeric()) {
    throw Error(ErrorCode::kConfig, "similarity is only defined for categorical kinds");
  }
  const auto ca = canonical_value(a);
  const auto cb = canonical_value(b);
  if (ca == cb) {
    if (distance != 0.0) {
      throw Error(ErrorCode::kConfig, "similarity diagonal must be zero for '" + ca + "'");
    }
    return;
  }
  if (!(distance >= 0.0 && distance <= 1.0)) {
    throw Error(ErrorCode::kConfig, "similarity distance must lie in [0, 1]");
  }
  auto& table = similarity_[kind];
  auto existing = table.find({ca, cb});
  if (existing != table.end() && existing->second != distance) {
    throw Error(ErrorCode::kConfig, "conflicting similarity entries for '" + ca + "' / '" + cb + "'");
  }
  table[{ca, cb}] = distance;
  table[{cb, ca}] = distance;
}

std::optional<double> TagSchema::distance(const TagKind& kind, std::string_view a,
                                          std::string_view b) const {
  if (a == b) return 0.0;
  auto it = similarity_.find(kind);
  if (it == similarity_.end()) return std::nullopt;
  auto entry = it->second.find({std::string(a), std::string(b)});
  if (entry == it->second.end()) return std::nullopt;
  return entry->second;
}

std::vector<SimilarityNeighbor> TagSchema::neighbors(const TagKind& kind,
                                                     std::string_view value) const {
  std::vector<SimilarityNeighbor> out;
  auto it = similarity_.find(kind);
  if (it == similarity_.end()) return out;
  for (const auto& [pair, d] : it->second) {
    if (pair.first == value) out.push_back({pair.second, d});
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.distance != y.distance ? x.distance < y.distance : x.value < y.value;
  });
  return out;
}

bool TagSchema::has_similarity(const TagKind& kind) const {
  auto it = similarity_.find(kind);
  return it != similarity_.end() && !it->second.empty();
}

std::vector<std::string> TagSchema::prune_similarity(
    const std::map<TagKind, std::set<std::string>>& vocab) {
  std::vector<std::string> removed;
  for (auto& [kind, table] : similarity_) {
    auto v = vocab.find(kind);
    for (auto it = table.begin(); it != table.end();) {
      const bool known = v != vocab.end() && v->second.count(it->first.first) &&
                         v->second.count(it->first.second);
      if (known) {
        ++it;
        continue;
      }
      if (it->first.first < it->first.second) {
        removed.push_back("similarity " + kind.name() + " '" + it->first.first + "' ~ '" +
                          it->first.second + "' dropped: value not in any product");
      }
      it = table.erase(it);
    }
  }
  return removed;
}

// --- catalog parsing ----------------------------------------------------------

bool Catalog::has_column(std::string_view name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

namespace {

struct RawRecord {
  std::size_t line;
  std::vector<std::string> fields;
};

std::vector<RawRecord> split_records(std::string_view text, char delimiter) {
  std::vector<RawRecord> records;
  std::size_t i = 0;
  std::size_t line = 1;
  while (i < text.size()) {
    RawRecord record{line, {}};
    std::string field;
    bool record_done = false;
    bool any_content = false;
    while (!record_done) {
      if (i < text.size() && text[i] == '"') {
        any_content = true;
        ++i;
        while (true) {
          if (i >= text.size()) {
            throw Error(ErrorCode::kInput,
                        "malformed row at line " + std::to_string(record.line) +
                            ": unterminated quoted field");
          }
          if (text[i] == '"') {
            if (i + 1 < text.size() && text[i + 1] == '"') {
              field.push_back('"');
              i += 2;
              continue;
            }
            ++i;
            break;
          }
          if (text[i] == '\n') ++line;
          field.push_back(text[i++]);
        }
      }
      while (i < text.size() && text[i] != delimiter && text[i] != '\n') {
        if (text[i] != '\r') field.push_back(text[i]);
        ++i;
      }
      if (!field.empty()) any_content = true;
      record.fields.push_back(std::move(field));
      field.clear();
      if (i >= text.size()) {
        record_done = true;
      } else if (text[i] == delimiter) {
        ++i;
        any_content = true;
      } else {  // newline
        ++i;
        ++line;
        record_done = true;
      }
    }
    if (any_content) records.push_back(std::move(record));
  }
  return records;
}

}  // namespace

Catalog parse_catalog(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  const auto header_end = text.find('\n');
  const auto header = text.substr(0, header_end);
  const char delimiter = header.find('\t') != std::string_view::npos ? '\t' : ',';

  auto records = split_records(text, delimiter);
  Catalog catalog;
  if (records.empty()) {
    throw Error(ErrorCode::kInput, "catalog has no header row");
  }
  for (const auto& name : records.front().fields) {
    auto column = trim(name);
    if (to_lower(column) == "sku") column = "sku";
    if (catalog.has_column(column)) {
      throw Error(ErrorCode::kInput, "duplicate column '" + column + "' in header");
    }
    catalog.columns.push_back(std::move(column));
  }
  if (!catalog.has_column("sku")) {
    throw Error(ErrorCode::kInput, "catalog header lacks the required 'sku' column");
  }

  std::set<std::string> seen;
  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& record = records[r];
    if (record.fields.size() != catalog.columns.size()) {
      throw Error(ErrorCode::kInput,
                  "malformed row at line " + std::to_string(record.line) + ": expected " +
                      std::to_string(catalog.columns.size()) + " fields, found " +
                      std::to_string(record.fields.size()));
    }
    CatalogRow row;
    row.line = record.line;
    for (std::size_t c = 0; c < catalog.columns.size(); ++c) {
      row.fields[catalog.columns[c]] = trim(record.fields[c]);
    }
    const auto& sku = row.fields["sku"];
    if (sku.empty()) {
      throw Error(ErrorCode::kInput,
                  "malformed row at line " + std::to_string(record.line) + ": empty sku");
    }
    if (!seen.insert(sku).second) {
      throw Error(ErrorCode::kInput,
                  "duplicate sku '" + sku + "' at line " + std::to_string(record.line));
    }
    catalog.rows.push_back(std::move(row));
  }
  return catalog;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "catalog file not found: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_catalog(buffer.str());
}

// --- wire contract --------------------------------------------------------------

std::string encode_tag_request(const TagRequest& request) {
  json j = {{"sku", request.sku}, {"raw", request.raw}};
  return j.dump();
}

TagRequest decode_tag_request(std::string_view body) {
  try {
    auto j = json::parse(body);
    TagRequest r;
    r.sku = j.at("sku").get<std::string>();
    r.raw = j.value("raw", std::map<std::string, std::string>{});
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("malformed tag request: ") + e.what());
  }
}

std::string encode_tag_response(const TagResponse& response) {
  json j = {{"kind", response.kind},
            {"values", response.values},
            {"confidence", response.confidence}};
  return j.dump();
}

TagResponse decode_tag_response(std::string_view body) {
  try {
    auto j = json::parse(body);
    TagResponse r;
    r.kind = j.at("kind").get<std::string>();
    r.values = j.at("values").get<std::vector<std::string>>();
    r.confidence = j.value("confidence", 1.0);
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("malformed tag response: ") + e.what());
  }
}

// --- models -------------------------------------------------------------------

LookupTagModel::LookupTagModel(std::map<std::string, std::vector<std::string>> table)
    : table_(std::move(table)) {}

std::shared_ptr<LookupTagModel> LookupTagModel::from_column(std::string column) {
  auto model = std::make_shared<LookupTagModel>(std::map<std::string, std::vector<std::string>>{});
  model->column_ = std::move(column);
  return model;
}

std::optional<TagResponse> LookupTagModel::tag(const TagRequest& request, const TagKind& kind) {
  TagResponse response{kind.name(), {}, 1.0};
  if (!column_.empty()) {
    auto it = request.raw.find(column_);
    if (it == request.raw.end()) return std::nullopt;
    if (!trim(it->second).empty()) response.values.push_back(it->second);
    return response;
  }
  auto it = table_.find(request.sku);
  if (it == table_.end()) return std::nullopt;
  response.values = it->second;
  return response;
}

void ModelRegistry::add(std::string endpoint, std::shared_ptr<TagModel> model) {
  models_[std::move(endpoint)] = std::move(model);
}

std::shared_ptr<TagModel> ModelRegistry::find(const std::string& endpoint) const {
  auto it = models_.find(endpoint);
  if (it != models_.end()) return it->second;
  constexpr std::string_view kColumnPrefix = "column:";
  if (endpoint.rfind(kColumnPrefix, 0) == 0) {
    return LookupTagModel::from_column(endpoint.substr(kColumnPrefix.size()));
  }
  return nullptr;
}

// --- products & knowledge base ---------------------------------------------------

bool Product::typed() const {
  auto it = tags.find(kSortal);
  return it != tags.end() && !it->second.empty();
}

bool Product::has_tag(const TagKind& kind, std::string_view value) const {
  auto it = tags.find(kind);
  return it != tags.end() && it->second.count(std::string(value)) > 0;
}

std::map<TagKind, std::map<std::string, std::vector<ProductId>, std::less<>>>
KnowledgeBase::build_inverted(const std::vector<Product>& products) {
  std::map<TagKind, std::map<std::string, std::vector<ProductId>, std::less<>>> inverted;
  for (ProductId id = 0; id < products.size(); ++id) {
    for (const auto& [kind, values] : products[id].tags) {
      for (const auto& value : values) inverted[kind][value].push_back(id);
    }
  }
  return inverted;
}

KnowledgeBase::KnowledgeBase(std::vector<Product> products, TagSchema schema)
    : products_(std::move(products)), schema_(std::move(schema)) {
  for (const auto& kind : schema_.kinds()) vocab_[kind];
  for (ProductId id = 0; id < products_.size(); ++id) {
    const auto& p = products_[id];
    if (p.sku.empty()) throw Error(ErrorCode::kInput, "product with empty sku");
    if (!by_sku_.emplace(p.sku, id).second) {
      throw Error(ErrorCode::kInput, "duplicate sku '" + p.sku + "'");
    }
    if (p.price && *p.price < 0) {
      throw Error(ErrorCode::kInput, "negative price for sku '" + p.sku + "'");
    }
    for (const auto& [kind, values] : p.tags) {
      if (!schema_.has(kind)) {
        throw Error(ErrorCode::kConfig, "product tagged with unknown kind " + kind.name());
      }
      vocab_[kind].insert(values.begin(), values.end());
    }
  }
  inverted_ = build_inverted(products_);

  std::string material;
  auto kinds = schema_.kinds();
  std::sort(kinds.begin(), kinds.end());
  for (const auto& kind : kinds) {
    material += kind.name();
    material += '\x1e';
    for (const auto& value : vocab_.at(kind)) {
      material += value;
      material += '\x1f';
    }
  }
  fingerprint_ = hex64(fnv1a(material));
}

const std::set<std::string>& KnowledgeBase::vocabulary(const TagKind& kind) const {
  auto it = vocab_.find(kind);
  if (it == vocab_.end()) throw Error(ErrorCode::kNotFound, "unknown tag kind " + kind.name());
  return it->second;
}

std::span<const ProductId> KnowledgeBase::postings(const TagKind& kind,
                                                   std::string_view value) const {
  auto k = inverted_.find(kind);
  if (k == inverted_.end()) return {};
  auto v = k->second.find(value);
  if (v == k->second.end()) return {};
  return v->second;
}

std::optional<ProductId> KnowledgeBase::find(std::string_view sku) const {
  auto it = by_sku_.find(sku);
  if (it == by_sku_.end()) return std::nullopt;
  return it->second;
}

const std::set<std::string>& vocabulary(const KnowledgeBase& kb, const TagKind& kind) {
  return kb.vocabulary(kind);
}

// --- heuristics ------------------------------------------------------------------

namespace {

bool plural_fold_equal(std::string_view token, std::string_view entry) {
  if (token == entry) return true;
  auto plus = [](std::string_view a, std::string_view b, std::string_view suffix) {
    return a.size() == b.size() + suffix.size() && a.substr(0, b.size()) == b &&
           a.substr(b.size()) == suffix;
  };
  return plus(entry, token, "s") || plus(token, entry, "s") || plus(entry, token, "es") ||
         plus(token, entry, "es");
}

struct LexiconEntry {
  std::string value;
  std::vector<std::string> tokens;
};

std::vector<LexiconEntry> prepare_lexicon(std::span<const std::string> lexicon) {
  std::vector<LexiconEntry> entries;
  for (const auto& v : lexicon) {
    LexiconEntry e{canonical_value(v), tokenize(v)};
    if (!e.tokens.empty()) entries.push_back(std::move(e));
  }
  // Longest phrases first so "dark red" beats "red" at the same position.
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.tokens.size() > b.tokens.size();
  });
  return entries;
}

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos,
                const LexiconEntry& entry) {
  const auto n = entry.tokens.size();
  if (pos + n > tokens.size()) return false;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (tokens[pos + k] != entry.tokens[k]) return false;
  }
  return plural_fold_equal(tokens[pos + n - 1], entry.tokens.back());
}

bool overlaps_category(std::string_view category, const LexiconEntry& entry) {
  const auto lowered = to_lower(category);
  const auto surface = join_tokens(entry.tokens);
  if (lowered.find(surface) != std::string::npos) return true;
  const auto cat_tokens = tokenize(category);
  for (std::size_t i = 0; i < cat_tokens.size(); ++i) {
    if (matches_at(cat_tokens, i, entry)) return true;
  }
  return false;
}

}  // namespace

std::optional<std::string> heuristic_first_overlap(std::string_view description,
                                                   std::string_view category,
                                                   std::span<const std::string> lexicon) {
  const auto entries = prepare_lexicon(lexicon);
  const auto tokens = tokenize(description);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& entry : entries) {
      if (matches_at(tokens, i, entry) && overlaps_category(category, entry)) {
        return entry.value;
      }
    }
  }
  return std::nullopt;
}

std::optional<std::string> heuristic_vocab_match(std::string_view text,
                                                 std::span<const std::string> lexicon) {
  const auto entries = prepare_lexicon(lexicon);
  const auto tokens = tokenize(text);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& entry : entries) {
      if (matches_at(tokens, i, entry)) return entry.value;
    }
  }
  return std::nullopt;
}

// --- extraction ---------------------------------------------------------------------

namespace {

std::string param_or(const HeuristicStrategy& h, const std::string& key,
                     const std::string& fallback) {
  auto it = h.params.find(key);
  return it == h.params.end() ? fallback : it->second;
}

std::vector<std::string> split_multi(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto end = value.find('|', start);
    if (end == std::string_view::npos) end = value.size();
    auto piece = canonical_value(value.substr(start, end - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    start = end + 1;
  }
  return out;
}

std::optional<double> parse_price(std::string_view text) {
  auto t = trim(text);
  // Tolerate a leading currency symbol or code ("$12.50", "USD 12").
  std::size_t first_digit = t.find_first_of("0123456789");
  if (first_digit == std::string::npos) return std::nullopt;
  if (first_digit > 0 && t.find_first_of("-") < first_digit) return std::nullopt;
  const std::string digits = t.substr(first_digit);
  char* end = nullptr;
  const double v = std::strtod(digits.c_str(), &end);
  if (end == digits.c_str()) return std::nullopt;
  if (trim(std::string_view(end)).size() > 3) return std::nullopt;
  if (!(v >= 0.0) || !std::isfinite(v)) return std::nullopt;
  return v;
}

void validate_strategies(const Catalog& catalog, const TagSchema& schema,
                         std::span<const ExtractionStrategy> strategies) {
  const bool check_columns = !catalog.columns.empty();
  auto require_column = [&](const std::string& column, const TagKind& kind) {
    if (check_columns && !catalog.has_column(column)) {
      throw Error(ErrorCode::kConfig, "strategy for " + kind.name() +
                                          " references missing column '" + column + "'");
    }
  };
  for (const auto& s : strategies) {
    if (!schema.has(s.tag)) {
      throw Error(ErrorCode::kConfig, "strategy references unknown kind " + s.tag.name());
    }
    if (const auto* c = std::get_if<ConfigStrategy>(&s.variant)) {
      require_column(c->column, s.tag);
    } else if (const auto* h = std::get_if<HeuristicStrategy>(&s.variant)) {
      if (s.tag.numeric()) {
        throw Error(ErrorCode::kConfig, "heuristic strategies cannot produce numeric kinds");
      }
      if (h->rule == "first_noun_overlap") {
        require_column(param_or(*h, "description", "Description"), s.tag);
        require_column(param_or(*h, "category", "Category"), s.tag);
      } else if (h->rule == "vocab_match") {
        require_column(param_or(*h, "column", "Description"), s.tag);
      } else {
        throw Error(ErrorCode::kConfig, "unknown heuristic rule '" + h->rule + "'");
      }
      if (schema.seeds(s.tag).empty()) {
        throw Error(ErrorCode::kConfig,
                    "heuristic for " + s.tag.name() + " needs a non-empty seed lexicon");
      }
    } else if (s.tag.numeric()) {
      throw Error(ErrorCode::kConfig, "model strategies cannot produce numeric kinds");
    }
  }
}

}  // namespace

KnowledgeBase extract_tags(const Catalog& catalog, const TagSchema& schema,
                           std::span<const ExtractionStrategy> strategies,
                           const ModelRegistry& models, ExtractionReport* report) {
  validate_strategies(catalog, schema, strategies);
  ExtractionReport local;
  ExtractionReport& rep = report ? *report : local;
  rep = ExtractionReport{};

  std::map<std::string, std::shared_ptr<TagModel>> resolved;
  for (const auto& s : strategies) {
    if (const auto* m = std::get_if<ModelStrategy>(&s.variant)) {
      if (!resolved.count(m->endpoint)) {
        resolved[m->endpoint] = models.find(m->endpoint);
        if (!resolved[m->endpoint]) {
          rep.warnings.push_back("model endpoint '" + m->endpoint + "' is unreachable");
        }
      }
    }
  }

  std::vector<Product> products;
  products.reserve(catalog.rows.size());
  for (const auto& row : catalog.rows) {
    Product p;
    p.sku = row.fields.at("sku");
    p.raw = row.fields;
    for (const auto& s : strategies) {
      if (s.tag.numeric()) {
        if (p.price) continue;
        const auto& column = std::get<ConfigStrategy>(s.variant).column;
        auto it = row.fields.find(column);
        if (it != row.fields.end()) p.price = parse_price(it->second);
        continue;
      }
      auto& slot = p.tags[s.tag];
      if (!slot.empty()) continue;  // first writer wins
      std::visit(
          [&](const auto& strategy) {
            using T = std::decay_t<decltype(strategy)>;
            if constexpr (std::is_same_v<T, ConfigStrategy>) {
              auto it = row.fields.find(strategy.column);
              if (it == row.fields.end()) return;
              for (auto& v : split_multi(it->second)) slot.insert(std::move(v));
            } else if constexpr (std::is_same_v<T, HeuristicStrategy>) {
              std::optional<std::string> value;
              const auto& lexicon = schema.seeds(s.tag);
              auto field = [&](const std::string& key, const std::string& fallback) {
                auto it = row.fields.find(param_or(strategy, key, fallback));
                return it == row.fields.end() ? std::string{} : it->second;
              };
              if (strategy.rule == "first_noun_overlap") {
                value = heuristic_first_overlap(field("description", "Description"),
                                                field("category", "Category"), lexicon);
              } else {
                value = heuristic_vocab_match(field("column", "Description"), lexicon);
              }
              if (value) slot.insert(*value);
            } else {
              auto& model = resolved[strategy.endpoint];
              std::optional<TagResponse> response;
              if (model) {
                try {
                  response = model->tag(TagRequest{p.sku, p.raw}, s.tag);
                } catch (const std::exception&) {
                  response.reset();
                }
              }
              if (!response || TagKind(response->kind) != s.tag) {
                ++rep.model_skipped;
                return;
              }
              for (const auto& v : response->values) {
                auto c = canonical_value(v);
                if (!c.empty()) slot.insert(std::move(c));
              }
            }
          },
          s.variant);
    }
    std::erase_if(p.tags, [](const auto& kv) { return kv.second.empty(); });
    products.push_back(std::move(p));
  }

  // Naive plural folding: "shoe" and "shoes" collapse onto the singular when
  // both occur for the same kind.
  std::map<TagKind, std::set<std::string>> values;
  for (const auto& p : products) {
    for (const auto& [kind, vs] : p.tags) values[kind].insert(vs.begin(), vs.end());
  }
  for (auto& p : products) {
    for (auto& [kind, vs] : p.tags) {
      std::set<std::string> folded;
      for (const auto& v : vs) {
        if (v.size() > 1 && v.back() == 's' && values[kind].count(v.substr(0, v.size() - 1))) {
          folded.insert(v.substr(0, v.size() - 1));
        } else {
          folded.insert(v);
        }
      }
      vs = std::move(folded);
    }
  }

  TagSchema pruned = schema;
  std::map<TagKind, std::set<std::string>> vocab;
  for (const auto& p : products) {
    for (const auto& [kind, vs] : p.tags) vocab[kind].insert(vs.begin(), vs.end());
  }
  for (auto& w : pruned.prune_similarity(vocab)) rep.warnings.push_back(std::move(w));

  rep.products = products.size();
  for (const auto& p : products) {
    if (!p.typed()) ++rep.untyped;
    if (!p.price) ++rep.priceless;
  }
  if (rep.model_skipped > 0) {
    rep.warnings.push_back("model tagging skipped for " + std::to_string(rep.model_skipped) +
                           " product(s)");
  }
  return KnowledgeBase(std::move(products), std::move(pruned));
}

}  // namespace progsearch
