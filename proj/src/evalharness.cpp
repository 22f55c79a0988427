#include "progsearch/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/synthesis.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

// --- fixtures -----------------------------------------------------------------------

namespace {

struct SortalInfo {
  const char* value;
  const char* department;
};

const std::vector<SortalInfo>& sortal_pool() {
  static const std::vector<SortalInfo> pool{
      {"shoes", "Footwear"},        {"consoles", "Electronics"}, {"pens", "Stationery"},
      {"dresses", "Apparel"},       {"jackets", "Apparel"},      {"bags", "Accessories"},
      {"watches", "Accessories"},   {"shirts", "Apparel"},       {"boots", "Footwear"},
      {"hats", "Apparel"},          {"scarves", "Apparel"},      {"backpacks", "Accessories"},
      {"sunglasses", "Accessories"}, {"wallets", "Accessories"}, {"belts", "Accessories"},
  };
  return pool;
}

const std::vector<std::string>& brand_pool() {
  static const std::vector<std::string> pool{
      "nintendo", "prada",  "nike",   "adidas", "gucci",      "sony",    "samsung",
      "zara",     "puma",   "casio",  "bic",    "parker",     "fossil",  "timex",
      "levis",    "north face", "ray ban", "hermes", "uniqlo", "moleskine",
  };
  return pool;
}

const std::vector<std::string>& color_pool() {
  static const std::vector<std::string> pool{"black", "white", "red",      "blue",
                                             "green", "purple", "dark red", "navy",
                                             "grey",  "brown",  "pink",     "yellow"};
  return pool;
}

const std::vector<std::string>& material_pool() {
  static const std::vector<std::string> pool{"leather", "cotton", "wool",  "plastic",
                                             "metal",   "canvas", "denim", "silk"};
  return pool;
}

const std::vector<std::string>& gender_pool() {
  static const std::vector<std::string> pool{"men", "women", "unisex", "kids"};
  return pool;
}

struct ColorDistance {
  const char* a;
  const char* b;
  double distance;
};

const std::vector<ColorDistance>& color_similarity() {
  static const std::vector<ColorDistance> table{
      {"purple", "dark red", 0.2}, {"purple", "pink", 0.3},  {"purple", "navy", 0.4},
      {"red", "dark red", 0.1},    {"red", "pink", 0.3},     {"navy", "blue", 0.1},
      {"grey", "black", 0.2},      {"grey", "white", 0.3},   {"brown", "dark red", 0.3},
      {"yellow", "white", 0.5},    {"green", "navy", 0.5},   {"blue", "purple", 0.4},
  };
  return table;
}

std::string title_case(std::string_view text) {
  std::string out(text);
  bool start = true;
  for (auto& c : out) {
    if (start && std::isalpha(static_cast<unsigned char>(c))) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    start = c == ' ';
  }
  return out;
}

// Each value at least once, the rest uniform, then shuffled.
std::vector<std::size_t> covering_assignment(std::size_t values, std::size_t slots, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(slots);
  for (std::size_t i = 0; i < slots; ++i) out.push_back(i < values ? i : rng.uniform(values));
  rng.shuffle(out);
  return out;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void check_pool(std::string_view what, std::size_t wanted, std::size_t available) {
  if (wanted > available) {
    throw Error(ErrorCode::kInput, "fixture spec asks for " + std::to_string(wanted) + " " +
                                       std::string(what) + " but the pool has " +
                                       std::to_string(available));
  }
  if (wanted == 0) throw Error(ErrorCode::kInput, std::string("fixture spec needs at least one of ") + std::string(what));
}

}  // namespace

Catalog make_fixture_catalog(const FixtureSpec& spec, std::uint64_t seed) {
  check_pool("sortals", spec.sortals, sortal_pool().size());
  check_pool("brands", spec.brands, brand_pool().size());
  check_pool("colors", spec.colors, color_pool().size());
  check_pool("materials", spec.materials, material_pool().size());
  check_pool("genders", spec.genders, gender_pool().size());
  if (!(spec.price_min > 0) || !(spec.price_max >= spec.price_min)) {
    throw Error(ErrorCode::kInput, "fixture price range must satisfy 0 < min <= max");
  }
  const std::size_t widest =
      std::max({spec.sortals, spec.brands, spec.colors, spec.materials, spec.genders});
  if (spec.products > 0 && spec.products < widest) {
    throw Error(ErrorCode::kInput, "fixture with " + std::to_string(spec.products) +
                                       " products cannot carry " + std::to_string(widest) +
                                       " distinct values");
  }

  Catalog catalog;
  catalog.columns = {"sku",   "Title",    "Description", "Category", "Manufacturer",
                     "Color", "Material", "Gender",      "Price",    "Popularity"};
  if (spec.products == 0) return catalog;

  Rng rng(seed);
  const auto n = spec.products;
  auto sortal_of = covering_assignment(spec.sortals, n, rng);
  auto brand_of = covering_assignment(spec.brands, n, rng);
  auto color_of = covering_assignment(spec.colors, n, rng);
  auto material_of = covering_assignment(spec.materials, n, rng);
  auto gender_of = covering_assignment(spec.genders, n, rng);

  std::set<std::pair<std::string, std::string>> excluded;
  for (const auto& [s, c] : spec.exclusions) excluded.insert({canonical_value(s), canonical_value(c)});

  const auto& sortals = sortal_pool();
  const auto& brands = brand_pool();
  const auto& colors = color_pool();
  auto index_of = [](const auto& pool, std::string_view v, std::size_t limit) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < limit; ++i) {
      if (std::string_view(pool[i]) == v) return i;
    }
    return std::nullopt;
  };
  std::vector<std::string> sortal_names;
  for (std::size_t i = 0; i < spec.sortals; ++i) sortal_names.emplace_back(sortals[i].value);
  const auto consoles = index_of(sortal_names, "consoles", spec.sortals);
  const auto pens = index_of(sortal_names, "pens", spec.sortals);
  const auto nintendo = index_of(brands, "nintendo", spec.brands);
  const bool distractors = spec.distractors && consoles && pens && nintendo;

  std::size_t console_seen = 0, pen_seen = 0;
  std::size_t pen_total = 0;
  for (auto s : sortal_of) pen_total += pens && s == *pens ? 1 : 0;
  const std::size_t pen_distractors = std::max<std::size_t>(3, pen_total / 4);

  const double log_min = std::log(spec.price_min), log_max = std::log(spec.price_max);
  int width = 1;
  for (std::size_t v = n; v >= 10; v /= 10) ++width;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& sortal = sortals[sortal_of[i]];
    const std::string sortal_value = sortal.value;
    auto color = color_of[i];
    if (excluded.count({sortal_value, colors[color]})) {
      std::size_t tries = 0;
      const auto start = rng.uniform(spec.colors);
      for (; tries < spec.colors; ++tries) {
        const auto c = (start + tries) % spec.colors;
        if (!excluded.count({sortal_value, colors[c]})) {
          color = c;
          break;
        }
      }
      if (tries == spec.colors) {
        throw Error(ErrorCode::kInput, "fixture exclusions leave no color for " + sortal_value);
      }
    }

    enum class Text { kRegular, kConsole, kPen } text = Text::kRegular;
    auto brand = brand_of[i];
    if (distractors && sortal_of[i] == *consoles && (console_seen++ % 2 == 0)) {
      brand = *nintendo;
      text = Text::kConsole;
    } else if (distractors && sortal_of[i] == *pens && pen_seen++ < pen_distractors) {
      brand = *nintendo;
      text = Text::kPen;
    }

    const std::string brand_name = brands[brand];
    const std::string color_name = colors[color];
    const std::string material = material_pool()[material_of[i]];
    const std::string gender = gender_pool()[gender_of[i]];
    const double price = std::exp(log_min + rng.uniform01() * (log_max - log_min));
    const double u = rng.uniform01();
    const auto popularity = static_cast<long>(std::floor(1000.0 * u * u * u));

    std::string title, description;
    switch (text) {
      case Text::kConsole:
        title = "Nintendo Switch " + color_name + " video game console";
        description = "Nintendo Switch video game console in " + color_name + ", " + material +
                      " housing. Play at home or on the go with detachable controllers, made for " +
                      gender + ".";
        break;
      case Text::kPen:
        title = "Nintendo Switch pens";
        description = "Nintendo Switch pens, " + color_name + " ink.";
        break;
      case Text::kRegular: {
        title = title_case(brand_name) + " " + color_name + " " + material + " " + sortal_value;
        switch (rng.uniform(3)) {
          case 0:
            description = title_case(color_name) + " " + sortal_value + " in " + material + " by " +
                          title_case(brand_name) + ", designed for " + gender + ".";
            break;
          case 1:
            description = "Classic " + sortal_value + " from " + title_case(brand_name) + ". Color: " +
                          color_name + ". Made of " + material + " for " + gender + ".";
            break;
          default:
            description = title_case(material) + " " + sortal_value + " for " + gender +
                          ", finished in " + color_name + ".";
            break;
        }
        break;
      }
    }

    std::ostringstream sku;
    sku << "P" << std::setw(width) << std::setfill('0') << i;
    CatalogRow row;
    row.line = i + 2;
    row.fields = {{"sku", sku.str()},
                  {"Title", title},
                  {"Description", description},
                  {"Category", std::string(sortal.department) + "/" + sortal_value},
                  {"Manufacturer", title_case(brand_name)},
                  {"Color", color_name},
                  {"Material", material},
                  {"Gender", gender},
                  {"Price", fixed2(price)},
                  {"Popularity", std::to_string(popularity)}};
    catalog.rows.push_back(std::move(row));
  }

  // Exclusions and distractors may displace a value; every value must remain.
  for (const auto& column : {"Category", "Manufacturer", "Color", "Material", "Gender"}) {
    std::set<std::string> seen;
    for (const auto& row : catalog.rows) seen.insert(to_lower(row.fields.at(column)));
    const std::size_t expected = std::string_view(column) == "Category"       ? spec.sortals
                                 : std::string_view(column) == "Manufacturer" ? spec.brands
                                 : std::string_view(column) == "Color"        ? spec.colors
                                 : std::string_view(column) == "Material"     ? spec.materials
                                                                              : spec.genders;
    if (seen.size() != expected) {
      throw Error(ErrorCode::kInput, std::string("inconsistent fixture spec: column ") + column +
                                         " ends up with " + std::to_string(seen.size()) + " of " +
                                         std::to_string(expected) + " values");
    }
  }
  return catalog;
}

std::string render_catalog(const Catalog& catalog) {
  std::string out = join_tokens(catalog.columns, "\t") + "\n";
  for (const auto& row : catalog.rows) {
    for (std::size_t c = 0; c < catalog.columns.size(); ++c) {
      if (c) out.push_back('\t');
      auto it = row.fields.find(catalog.columns[c]);
      if (it != row.fields.end()) out += it->second;
    }
    out.push_back('\n');
  }
  return out;
}

void write_catalog(const std::filesystem::path& path, const Catalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  out << render_catalog(catalog);
}

PipelineConfig fixture_config(const FixtureSpec& spec) {
  PipelineConfig c;
  c.kinds = TagSchema::standard().kinds();
  std::vector<std::string> lexicon;
  for (std::size_t i = 0; i < std::min(spec.sortals, sortal_pool().size()); ++i) {
    lexicon.emplace_back(sortal_pool()[i].value);
  }
  c.vocab_seeds[kSortal] = lexicon;
  std::set<std::string> colors(color_pool().begin(),
                               color_pool().begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(spec.colors, color_pool().size())));
  for (const auto& s : color_similarity()) {
    if (colors.count(s.a) && colors.count(s.b)) c.similarity.push_back({kColor, s.a, s.b, s.distance});
  }
  c.strategies = {
      {kSortal, HeuristicStrategy{"first_noun_overlap", {{"description", "Description"}, {"category", "Category"}}}},
      {kBrand, ConfigStrategy{"Manufacturer"}},
      {kColor, ConfigStrategy{"Color"}},
      {kMaterial, ConfigStrategy{"Material"}},
      {kGender, ConfigStrategy{"Gender"}},
      {kPrice, ConfigStrategy{"Price"}},
  };
  c.productions = parse_productions(R"(
[SORTAL]
[COLOR] [SORTAL]
[BRAND] [SORTAL]
[MATERIAL] [SORTAL]
[GENDER] [SORTAL]
[BRAND] [COLOR] [SORTAL]
[COLOR] [MATERIAL] [SORTAL]
[BRAND] [MATERIAL] [SORTAL]
[SORTAL] for [GENDER]
[COLOR] [SORTAL] for [GENDER]
[BRAND] [SORTAL] for [GENDER]
[SORTAL] by [BRAND]
[COLOR] [SORTAL] by [BRAND]
[SORTAL] in [COLOR]
[SORTAL] under|below [PRICE] usd?
[SORTAL] over|above [PRICE] usd?
[COLOR] [SORTAL] under [PRICE] usd?
[BRAND] [SORTAL] under|below [PRICE]
[BRAND] [COLOR] [SORTAL] under [PRICE]
[BRAND] [COLOR] [MATERIAL] [SORTAL]
)");
  std::set<std::string> have(lexicon.begin(), lexicon.end());
  if (have.count("consoles")) c.synonyms["consoles"] = {"switch"};
  if (have.count("shoes")) c.synonyms["shoes"] = {"sneakers"};
  if (have.count("bags")) c.synonyms["bags"] = {"handbags"};
  c.router.fields = {"Title", "Description"};
  c.signal_column = "Popularity";
  return c;
}

// --- query distributions --------------------------------------------------------------

QueryDistribution zipf_distribution(std::vector<std::string> queries, double exponent) {
  QueryDistribution d;
  d.exponent = exponent;
  double total = 0.0;
  std::vector<double> w(queries.size());
  for (std::size_t r = 0; r < queries.size(); ++r) {
    w[r] = std::pow(static_cast<double>(r + 1), -exponent);
    total += w[r];
  }
  for (std::size_t r = 0; r < queries.size(); ++r) d.entries.emplace_back(std::move(queries[r]), w[r] / total);
  return d;
}

std::vector<std::string> sample_query_stream(const QueryDistribution& dist, std::size_t n,
                                             std::uint64_t seed) {
  if (dist.entries.empty()) throw Error(ErrorCode::kInput, "cannot sample from an empty distribution");
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& [q, p] : dist.entries) cdf.push_back(acc += p);
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    auto r = static_cast<std::size_t>(it - cdf.begin());
    out.push_back(dist.entries[std::min(r, cdf.size() - 1)].first);
  }
  return out;
}

QueryDistribution fit_powerlaw(const std::map<std::string, std::uint64_t>& counts) {
  std::vector<std::pair<std::string, std::uint64_t>> ranked;
  for (const auto& [q, c] : counts) {
    if (c > 0) ranked.emplace_back(q, c);
  }
  if (ranked.size() < 10) {
    throw Error(ErrorCode::kInput, "power-law fit needs at least 10 distinct queries, got " +
                                       std::to_string(ranked.size()));
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const double m = static_cast<double>(ranked.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const double x = std::log(static_cast<double>(r + 1));
    const double y = std::log(static_cast<double>(ranked[r].second));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  std::vector<std::string> queries;
  for (auto& [q, _] : ranked) queries.push_back(q);
  return zipf_distribution(std::move(queries), -slope);
}

double head_share(std::span<const std::string> stream, double fraction) {
  if (stream.empty()) return 0.0;
  std::map<std::string_view, std::size_t> counts;
  for (const auto& q : stream) ++counts[q];
  std::vector<std::size_t> sorted;
  for (const auto& [_, c] : counts) sorted.push_back(c);
  std::sort(sorted.rbegin(), sorted.rend());
  const auto head = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size())));
  std::size_t mass = 0;
  for (std::size_t i = 0; i < head && i < sorted.size(); ++i) mass += sorted[i];
  return static_cast<double>(mass) / static_cast<double>(stream.size());
}

QueryLog make_query_log(std::span<const SynthTriple> triples, const QueryLogOptions& options) {
  std::map<std::string, const SynthTriple*, std::less<>> by_query;
  for (const auto& t : triples) by_query.emplace(t.query, &t);

  std::vector<std::string> ranked;
  std::set<std::string> used;
  auto push = [&](const std::string& q) {
    if (ranked.size() < options.distinct && used.insert(q).second) ranked.push_back(q);
  };
  for (const auto& q : options.head_queries) push(canonical_value(q));

  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(options.seed);
  rng.shuffle(order);
  const std::size_t body = options.distinct > ranked.size() + options.free_text.size()
                               ? options.distinct - ranked.size() - options.free_text.size()
                               : 0;
  std::vector<std::string> sampled;
  for (auto i : order) {
    if (sampled.size() >= body) break;
    const auto& q = triples[i].query;
    if (!used.count(q) && !triples[i].golden.empty()) {
      used.insert(q);
      sampled.push_back(q);
    }
  }
  for (auto& q : sampled) used.erase(q);

  // Free-text queries are spread evenly over the lower half of the ranking.
  std::vector<std::string> tail;
  const std::size_t stride = options.free_text.empty() ? 0 : std::max<std::size_t>(1, sampled.size() / 2 / options.free_text.size());
  std::size_t next_free = 0;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    if (stride && i >= sampled.size() / 2 && (i - sampled.size() / 2) % stride == 0 &&
        next_free < options.free_text.size()) {
      tail.push_back(canonical_value(options.free_text[next_free++]));
    }
    tail.push_back(sampled[i]);
  }
  while (next_free < options.free_text.size()) tail.push_back(canonical_value(options.free_text[next_free++]));
  for (const auto& q : tail) push(q);

  QueryLog log;
  const auto dist = zipf_distribution(ranked, options.exponent);
  for (const auto& [q, p] : dist.entries) {
    log.counts[q] = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(p * static_cast<double>(options.total))));
    EvalQuery truth;
    if (auto it = by_query.find(q); it != by_query.end()) {
      truth.form = it->second->form;
      truth.golden = it->second->golden;
    }
    log.truth[q] = std::move(truth);
  }
  return log;
}

// --- engine comparison ----------------------------------------------------------------

namespace {

LatencyStats percentiles(std::vector<std::int64_t> samples) {
  LatencyStats s;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  auto at = [&](double q) {
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    rank = std::clamp<std::size_t>(rank, 1, samples.size());
    return static_cast<double>(samples[rank - 1]);
  };
  s.p50_us = at(0.5);
  s.p90_us = at(0.9);
  s.p99_us = at(0.99);
  return s;
}

struct Accumulator {
  double empty = 0, tier_sum = 0, tier_mass = 0;
  double exact = 0, exact_mass = 0;
  double precision = 0, precision_mass = 0;
  std::vector<std::int64_t> latency;

  void add(const RouteOutcome& out, double w, const EvalQuery* truth, const KnowledgeBase& kb,
           std::size_t eval_k) {
    latency.push_back(out.timing.total_us);
    if (out.results.empty()) {
      empty += w;
    } else {
      tier_sum += w * static_cast<double>(out.results.front().relevance_tier);
      tier_mass += w;
    }
    if (!truth) return;
    if (truth->golden) {
      SkuSet got;
      for (const auto& r : out.results) got.push_back(r.sku);
      std::sort(got.begin(), got.end());
      exact_mass += w;
      if (got == *truth->golden) exact += w;
    }
    if (truth->form && truth->form->sortal() && !out.results.empty()) {
      const auto& sortal = truth->form->sortal()->value;
      const std::size_t n = std::min(eval_k, out.results.size());
      std::size_t ok = 0;
      for (std::size_t i = 0; i < n; ++i) {
        auto id = kb.find(out.results[i].sku);
        if (id && kb.product(*id).has_tag(kSortal, sortal)) ++ok;
      }
      precision += w * static_cast<double>(ok) / static_cast<double>(n);
      precision_mass += w;
    }
  }

  EngineMetrics finish() const {
    EngineMetrics m;
    m.empty_rate = empty;
    m.mean_tier = tier_mass > 0 ? tier_sum / tier_mass : 0.0;
    m.exact_set_accuracy = exact_mass > 0 ? exact / exact_mass : 0.0;
    m.sortal_precision = precision_mass > 0 ? precision / precision_mass : 0.0;
    m.latency = percentiles(latency);
    return m;
  }
};

}  // namespace

ComparisonReport compare_engines(std::span<const std::string> stream, const EvalTruth& truth,
                                 const EngineParts& parts, std::size_t eval_k) {
  check_parts(parts);
  ComparisonReport report;
  report.eval_k = eval_k;
  report.samples = stream.size();
  if (stream.empty()) return report;

  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& q : stream) ++counts[q];
  report.distinct = counts.size();

  EngineParts full = parts;
  full.router.k = std::max<std::size_t>(parts.kb->size(), 1);
  const auto& kb = *parts.kb;
  const double total = static_cast<double>(stream.size());

  Accumulator vsm, router;
  double parsed_precision = 0, parsed_precision_mass = 0;
  std::vector<std::int64_t> vsm_routed_parse;
  std::map<std::string, bool> parsed_query;

  for (const auto& [query, count] : counts) {
    const double w = static_cast<double>(count) / total;
    const EvalQuery* t = nullptr;
    if (auto it = truth.find(query); it != truth.end()) t = &it->second;

    vsm.add(route_vsm_only(query, full), w, t, kb, eval_k);
    const auto out = route(query, full);
    router.add(out, w, t, kb, eval_k);

    std::string key(to_string(out.decision.path));
    if (out.decision.path == RoutePath::kVsmFallback) {
      key += ":" + std::string(to_string(out.decision.reason));
      vsm_routed_parse.push_back(out.timing.parse_us);
    }
    report.routing[key] += w;
    const bool parsed = out.decision.path == RoutePath::kParsed;
    parsed_query[query] = parsed;

    if (parsed) {
      const auto& sortal = out.parse->form.sortal()->value;
      for (const auto& r : out.results) {
        auto id = kb.find(r.sku);
        if (!id || !kb.product(*id).has_tag(kSortal, sortal)) ++report.router.sortal_violations;
      }
      if (t && t->form && t->form->sortal()) {
        const auto& expected = t->form->sortal()->value;
        const std::size_t n = std::min(eval_k, out.results.size());
        std::size_t ok = 0;
        for (std::size_t i = 0; i < n; ++i) {
          auto id = kb.find(out.results[i].sku);
          if (id && kb.product(*id).has_tag(kSortal, expected)) ++ok;
        }
        parsed_precision += w * static_cast<double>(ok) / static_cast<double>(n);
        parsed_precision_mass += w;
      }
    }
  }
  const auto violations = report.router.sortal_violations;
  report.vsm = vsm.finish();
  report.router = router.finish();
  report.router.sortal_violations = violations;
  report.parsed_sortal_precision = parsed_precision_mass > 0 ? parsed_precision / parsed_precision_mass : 0.0;
  report.vsm_routed_parse = percentiles(vsm_routed_parse);

  std::vector<std::pair<std::string, std::size_t>> by_mass(counts.begin(), counts.end());
  std::sort(by_mass.begin(), by_mass.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::set<std::size_t> checkpoints{by_mass.size()};
  for (std::size_t step = 1; step <= by_mass.size(); step *= 10) {
    for (std::size_t f : {1, 2, 5}) {
      if (step * f <= by_mass.size()) checkpoints.insert(step * f);
    }
  }
  double mass = 0, parsed_mass = 0;
  for (std::size_t i = 0; i < by_mass.size(); ++i) {
    mass += static_cast<double>(by_mass[i].second);
    if (parsed_query[by_mass[i].first]) parsed_mass += static_cast<double>(by_mass[i].second);
    if (checkpoints.count(i + 1)) report.head_coverage.push_back({i + 1, mass / total, parsed_mass / total});
  }
  return report;
}

namespace {

json metrics_json(const EngineMetrics& m, bool include_latency) {
  json j{{"sortal_precision", m.sortal_precision},
         {"empty_rate", m.empty_rate},
         {"mean_tier", m.mean_tier},
         {"exact_set_accuracy", m.exact_set_accuracy},
         {"sortal_violations", m.sortal_violations}};
  if (include_latency) {
    j["latency_us"] = {{"p50", m.latency.p50_us}, {"p90", m.latency.p90_us}, {"p99", m.latency.p99_us}};
  }
  return j;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string report_to_json(const ComparisonReport& report, const ReportMeta& meta,
                           bool include_latency) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["seed"] = meta.seed;
  j["config_hash"] = meta.config_hash;
  j["dataset_hash"] = meta.dataset_hash;
  j["schema_fingerprint"] = meta.schema_fingerprint;
  j["stream"] = {{"samples", report.samples},
                 {"distinct", report.distinct},
                 {"fitted_exponent", optional_json(meta.fitted_exponent)},
                 {"head_share_5pct", optional_json(meta.head_share_5pct)}};
  j["parser"] = {{"heldout_exact_match", optional_json(meta.parser_exact_match)},
                 {"heldout_failure_rate", optional_json(meta.parser_failure_rate)},
                 {"shuffled_exact_match", optional_json(meta.shuffled_exact_match)}};
  j["eval_k"] = report.eval_k;
  j["engines"] = {{"vsm", metrics_json(report.vsm, include_latency)},
                  {"two_tier", metrics_json(report.router, include_latency)}};
  j["parsed_sortal_precision"] = report.parsed_sortal_precision;
  j["routing"] = report.routing;
  json curve = json::array();
  for (const auto& p : report.head_coverage) {
    curve.push_back({{"head", p.head}, {"mass", p.mass}, {"parsed_mass", p.parsed_mass}});
  }
  j["head_coverage"] = std::move(curve);
  if (include_latency) {
    j["vsm_routed_parse_us"] = {{"p50", report.vsm_routed_parse.p50_us},
                                {"p90", report.vsm_routed_parse.p90_us},
                                {"p99", report.vsm_routed_parse.p99_us}};
  }
  return j.dump(2) + "\n";
}

std::string report_to_text(const ComparisonReport& report, const ReportMeta& meta) {
  std::ostringstream out;
  out << "seed " << meta.seed << "  config " << meta.config_hash << "  samples " << report.samples
      << "  distinct " << report.distinct << "\n";
  if (meta.parser_exact_match) {
    out << "parser heldout exact-match " << std::fixed << std::setprecision(4) << *meta.parser_exact_match;
    if (meta.parser_failure_rate) out << "  failure rate " << *meta.parser_failure_rate;
    out << "\n";
  }
  out << std::left << std::setw(28) << "metric" << std::right << std::setw(12) << "vsm" << std::setw(12)
      << "two_tier" << "\n";
  auto row = [&](const char* name, double a, double b) {
    out << std::left << std::setw(28) << name << std::right << std::fixed << std::setprecision(4)
        << std::setw(12) << a << std::setw(12) << b << "\n";
  };
  row("sortal precision", report.vsm.sortal_precision, report.router.sortal_precision);
  row("empty-result rate", report.vsm.empty_rate, report.router.empty_rate);
  row("mean relevance tier", report.vsm.mean_tier, report.router.mean_tier);
  row("exact-set accuracy", report.vsm.exact_set_accuracy, report.router.exact_set_accuracy);
  out << std::left << std::setw(28) << "parsed-path violations" << std::right << std::setw(12) << "-"
      << std::setw(12) << report.router.sortal_violations << "\n";
  out << "routing:";
  for (const auto& [k, v] : report.routing) out << "  " << k << " " << std::setprecision(4) << v;
  out << "\nhead coverage (head  mass  parsed):\n";
  for (const auto& p : report.head_coverage) {
    out << "  " << std::setw(6) << p.head << "  " << std::setprecision(4) << p.mass << "  " << p.parsed_mass
        << "\n";
  }
  return out.str();
}

std::string report_basename(const ReportMeta& meta) {
  return "report-seed" + std::to_string(meta.seed) + "-" + meta.config_hash;
}

EvaluationResult run_evaluation(const Pipeline& pipeline, const EvaluationOptions& options) {
  EvaluationResult r;
  r.log = make_query_log(pipeline.triples, options.log);
  r.fitted = fit_powerlaw(r.log.counts);
  r.stream = sample_query_stream(r.fitted, options.stream_size, options.seed);
  r.report = compare_engines(r.stream, r.log.truth, pipeline.parts(), options.eval_k);

  r.meta.seed = options.seed;
  r.meta.config_hash = config_hash(pipeline.config);
  r.meta.dataset_hash = dataset_hash(pipeline.triples);
  r.meta.schema_fingerprint = pipeline.kb ? pipeline.kb->fingerprint() : std::string{};
  r.meta.fitted_exponent = r.fitted.exponent;
  r.meta.head_share_5pct = head_share(r.stream, 0.05);
  if (pipeline.model && !pipeline.heldout.empty()) {
    const auto metrics = evaluate(*pipeline.model, pipeline.heldout);
    r.meta.parser_exact_match = metrics.exact_match;
    r.meta.parser_failure_rate = metrics.failure_rate;
    const auto shuffled = pipeline.model->shuffled_labels(options.seed);
    r.meta.shuffled_exact_match = evaluate(shuffled, pipeline.heldout).exact_match;
  }
  return r;
}

}  // namespace progsearch
