#include <filesystem>
#include <set>

#include "doctest.h"
#include "oracle.hpp"
#include "progsearch/error.hpp"
#include "progsearch/grammar.hpp"
#include "support.hpp"

using namespace progsearch;
using support::product;

namespace {

std::shared_ptr<const KnowledgeBase> kb_of(std::vector<Product> products) {
  return std::make_shared<KnowledgeBase>(support::make_kb(std::move(products)));
}

std::shared_ptr<const KnowledgeBase> purple_shoe_kb() {
  return kb_of({product("S1", {{kSortal, {"shoes"}}, {kColor, {"purple"}}}, 80.0)});
}

std::vector<Production> productions(std::string_view text) { return parse_productions(text); }

}  // namespace

TEST_CASE("production file syntax") {
  const auto ps = productions(
      "# comment\n"
      "\n"
      "[BRAND] [COLOR] [SORTAL]\n"
      "cheap: [SORTAL] under|below [PRICE] usd?\n"
      "ski|running [SORTAL]\n");
  REQUIRE(ps.size() == 3);
  CHECK(ps[0].elements.size() == 3);
  CHECK(ps[1].name == "cheap");
  REQUIRE(ps[1].elements.size() == 3);
  const auto* price = std::get_if<PriceSlotElement>(&ps[1].elements[1]);
  REQUIRE(price);
  CHECK(price->op == CmpOp::kLt);
  CHECK(price->phrasings == std::vector<std::string>{"under", "below"});
  const auto* usd = std::get_if<LiteralElement>(&ps[1].elements[2]);
  REQUIRE(usd);
  CHECK(usd->optional);
  CHECK(std::get<LiteralElement>(ps[2].elements[0]).alternatives == std::vector<std::string>{"ski", "running"});
  for (const auto& p : ps) CHECK(parse_productions(to_line(p)).front().elements.size() == p.elements.size());
}

TEST_CASE("production file errors") {
  auto code = [](std::string_view text) {
    try {
      parse_productions(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInternal;
  };
  CHECK(code("[SORTAL] [SORTAL]") == ErrorCode::kInput);
  CHECK(code("[COLOR] [COLOR] [SORTAL]") == ErrorCode::kInput);
  CHECK(code("[SORTAL] [PRICE]") == ErrorCode::kInput);
  CHECK(code("[SORTAL] under|over [PRICE]") == ErrorCode::kInput);
  CHECK(code("[sortal") == ErrorCode::kInput);
}

TEST_CASE("load_productions reads the bundled Shop A grammar") {
  const auto ps = load_productions(support::source_dir() / "data/shop_a/grammar.txt");
  CHECK(ps.size() >= 10);
}

TEST_CASE("singleton vocabularies give exactly one pair") {
  const auto gen = compile_grammar(productions("[COLOR] [SORTAL]"), purple_shoe_kb());
  CHECK(gen.space_size() == 1);
  const auto t = generate_triples(gen, 10, 7);
  REQUIRE(t.size() == 1);
  CHECK(t[0].query == "purple shoes");
  CHECK(t[0].form == LogicalForm({Predicate{kSortal, "shoes"}, Predicate{kColor, "purple"}}));
  CHECK(t[0].golden == SkuSet{"S1"});
}

TEST_CASE("literal modifiers share the production's form shape") {
  const auto kb = kb_of({product("T", {{kSortal, {"trousers"}}}), product("S", {{kSortal, {"shoes"}}}),
                         product("G", {{kSortal, {"gloves"}}})});
  const auto gen = compile_grammar(productions("mod: ski|running [SORTAL]"), kb);
  const auto t = generate_triples(gen, 100, 7);
  std::set<std::string> queries;
  for (const auto& x : t) {
    queries.insert(x.query);
    CHECK(x.production == "mod");
    CHECK(x.form.size() == 1);
    CHECK(x.form.sortal() != nullptr);
  }
  CHECK(t.size() == 6);
  CHECK(queries.count("ski trousers") == 1);
  CHECK(queries.count("running shoes") == 1);
  CHECK(queries.count("ski gloves") == 1);
}

TEST_CASE("price slot realizes 'shoes under 100'") {
  std::vector<Product> ps;
  for (int i = 0; i < 8; ++i) ps.push_back(product("S" + std::to_string(i), {{kSortal, {"shoes"}}}, 100.0));
  const auto gen = compile_grammar(productions("[SORTAL] under [PRICE]"), kb_of(ps));
  const auto t = generate_triples(gen, 10, 1, {GenerationPolicy::Mode::kOverGenerate});
  REQUIRE(t.size() == 1);
  CHECK(t[0].query == "shoes under 100");
  CHECK(t[0].form == LogicalForm({Predicate{kSortal, "shoes"}, Comparison{kPrice, CmpOp::kLt, 100}}));
  CHECK(t[0].golden.empty());
  CHECK(t[0].alignment == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 1}});
}

TEST_CASE("price_bounds are rounded quantiles") {
  std::vector<Product> ps;
  for (int i = 1; i <= 100; ++i) ps.push_back(product("P" + std::to_string(i), {{kSortal, {"x"}}}, i * 1.37));
  const auto bounds = price_bounds(support::make_kb(ps));
  CHECK(bounds.size() == 4);
  CHECK(std::is_sorted(bounds.begin(), bounds.end()));
  for (double b : bounds) CHECK(round_significant(b, 2) == b);
  CHECK(price_bounds(support::make_kb({})).empty());
}

TEST_CASE("productions with empty slot vocabularies are disabled") {
  const auto gen = compile_grammar(productions("[BRAND] [SORTAL]\n[COLOR] [SORTAL]"), purple_shoe_kb());
  CHECK(gen.productions().size() == 1);
  CHECK(gen.warnings().size() == 1);
  CHECK_THROWS_AS(compile_grammar(productions("[BRAND] [SORTAL]"), purple_shoe_kb()), Error);
}

TEST_CASE("generation policies") {
  const auto kb = kb_of({product("A", {{kSortal, {"shoes"}}, {kColor, {"purple"}}}),
                         product("B", {{kSortal, {"bags"}}, {kColor, {"blue"}}})});
  const auto gen = compile_grammar(productions("[COLOR] [SORTAL]"), kb);
  SUBCASE("n = 0 gives nothing") { CHECK(generate_triples(gen, 0, 7).empty()); }
  SUBCASE("non_empty_only keeps only non-empty golden sets") {
    const auto t = generate_triples(gen, 100, 7);
    CHECK(t.size() == 2);
    for (const auto& x : t) CHECK_FALSE(x.golden.empty());
  }
  SUBCASE("over_generate keeps empty combinations") {
    const auto t = generate_triples(gen, 100, 7, {GenerationPolicy::Mode::kOverGenerate});
    CHECK(t.size() == 4);
    CHECK(std::count_if(t.begin(), t.end(), [](const auto& x) { return x.golden.empty(); }) == 2);
  }
  SUBCASE("fewer than n when the space is exhausted") { CHECK(generate_triples(gen, 3, 7).size() == 2); }
}

TEST_CASE("fixture generation: isomorphism, determinism, alignment") {
  const auto& p = support::fixture_pipeline();
  const auto triples = generate_triples(*p.generator, 2000, 7);
  CHECK(triples.size() == 2000);
  std::set<std::string> queries;
  for (const auto& t : triples) {
    CHECK(oracle::scan(*p.kb, t.form) == t.golden);
    CHECK_FALSE(t.golden.empty());
    CHECK(queries.insert(t.query).second);
    const auto tokens = tokenize(t.query);
    std::set<std::size_t> aligned_atoms;
    std::map<std::size_t, std::size_t> per_token;
    for (const auto& [tok, atom] : t.alignment) {
      CHECK(tok < tokens.size());
      CHECK(atom < t.form.size());
      ++per_token[tok];
      aligned_atoms.insert(atom);
    }
    for (const auto& [tok, n] : per_token) CHECK(n == 1);
    CHECK(aligned_atoms.size() == t.form.size());
  }
  CHECK(generate_triples(*p.generator, 2000, 7) == triples);
  CHECK(generate_triples(*p.generator, 2000, 8) != triples);
}

TEST_CASE("same production and slot values give equal forms") {
  const auto& p = support::fixture_pipeline();
  const auto& gen = *p.generator;
  for (std::size_t i = 0; i < gen.productions().size(); ++i) {
    const auto idx = gen.productions()[i].space / 2;
    const auto a = gen.realize(i, idx);
    const auto b = gen.realize(i, idx);
    CHECK(a == b);
  }
}

TEST_CASE("weight_by_golden favours broad queries") {
  const auto& p = support::fixture_pipeline();
  GenerationPolicy weighted;
  weighted.weight_by_golden = true;
  const auto plain = generate_triples(*p.generator, 1000, 7);
  const auto broad = generate_triples(*p.generator, 1000, 7, weighted);
  auto mean = [](const auto& ts) {
    double s = 0;
    for (const auto& t : ts) s += static_cast<double>(t.golden.size());
    return s / static_cast<double>(ts.size());
  };
  CHECK(mean(broad) > mean(plain));
}

TEST_CASE("augment_synonyms") {
  const auto kb = purple_shoe_kb();
  const auto gen = compile_grammar(productions("[COLOR] [SORTAL]"), kb);
  const auto base = generate_triples(gen, 10, 7);
  SUBCASE("adds a variant with the same form and golden set") {
    AugmentStats stats;
    const auto out = augment_synonyms(base, {{"shoes", {"sneakers"}}}, *kb, &stats);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == base[0]);
    CHECK(out[1].query == "purple sneakers");
    CHECK(out[1].form == base[0].form);
    CHECK(out[1].golden == base[0].golden);
    CHECK(stats.added == 1);
  }
  SUBCASE("empty synonym map is the identity") { CHECK(augment_synonyms(base, {}, *kb) == base); }
  SUBCASE("duplicates are dropped") {
    AugmentStats stats;
    auto doubled = base;
    auto extra = base[0];
    extra.query = "purple sneakers";
    doubled.push_back(extra);
    const auto out = augment_synonyms(doubled, {{"shoes", {"sneakers"}}}, *kb, &stats);
    CHECK(out.size() == 2);
    CHECK(stats.duplicates == 1);
  }
  SUBCASE("replacements colliding with slot vocabulary are skipped") {
    AugmentStats stats;
    const auto out = augment_synonyms(base, {{"shoes", {"purple"}}}, *kb, &stats);
    CHECK(out.size() == 1);
    CHECK(stats.collisions == 1);
  }
}

TEST_CASE("triple JSON lines round-trip") {
  const auto& p = support::fixture_pipeline();
  std::vector<SynthTriple> sample(p.triples.begin(), p.triples.begin() + 50);
  for (const auto& t : sample) CHECK(triple_from_json_line(to_json_line(t)) == t);
  const auto path = std::filesystem::temp_directory_path() / "progsearch_triples.jsonl";
  write_triples(path, sample);
  CHECK(read_triples(path) == sample);
  CHECK(dataset_hash(sample) == dataset_hash(read_triples(path)));
  CHECK(dataset_hash(sample) != dataset_hash(std::span(sample).first(49)));
  CHECK_THROWS_AS(triple_from_json_line("{\"query\": 1}"), Error);
}
