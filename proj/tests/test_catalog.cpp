#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "progsearch/catalog.hpp"
#include "progsearch/error.hpp"
#include "support.hpp"

using namespace progsearch;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kInternal;
}

std::string message_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("expected an Error");
  return {};
}

ExtractionStrategy config(TagKind kind, std::string column) { return {kind, ConfigStrategy{std::move(column)}}; }

ExtractionStrategy first_noun() { return {kSortal, HeuristicStrategy{"first_noun_overlap", {}}}; }

TagSchema shop_schema() {
  TagSchema schema({kSortal, kBrand, kColor, kPrice});
  schema.set_seeds(kSortal, {"shoes", "shirt", "bags"});
  return schema;
}

const char* kShopRows =
    "sku\tTitle\tDescription\tCategory\tManufacturer\tColor\tPrice\n"
    "A1\tPrada purple shoes\tLeather shoes with laces\tFootwear/shoes\tPrada\tPurple\t120\n"
    "A2\tBlue shirt\tCotton shirt for men\tApparel/shirt\tGap\tBlue|White\t30.5\n"
    "A3\tGift card\tGift card\tMisc\t\t\tn/a\n";

}  // namespace

TEST_CASE("parse_catalog reads rows and preserves count") {
  const auto c = parse_catalog("sku,title\nA,one\nB,two\nC,three\n");
  CHECK(c.rows.size() == 3);
  CHECK(c.columns == std::vector<std::string>{"sku", "title"});
  CHECK(c.rows[1].fields.at("title") == "two");
  CHECK(c.rows[2].line == 4);
}

TEST_CASE("parse_catalog detects tab delimiters and quoted fields") {
  const auto tab = parse_catalog("sku\tTitle\nA\tx, y\n");
  CHECK(tab.rows[0].fields.at("Title") == "x, y");
  const auto quoted = parse_catalog("sku,Title\nA,\"say \"\"hi\"\", ok\"\n");
  CHECK(quoted.rows[0].fields.at("Title") == "say \"hi\", ok");
}

TEST_CASE("parse_catalog errors") {
  CHECK(message_of([] { parse_catalog("sku,t\nA1,x\nA1,y\n"); }).find("A1") != std::string::npos);
  CHECK(message_of([] { parse_catalog("sku,t\nA1,x\nA2\n"); }).find("line 3") != std::string::npos);
  CHECK(code_of([] { parse_catalog("title\nx\n"); }) == ErrorCode::kInput);
  CHECK(code_of([] { parse_catalog(""); }) == ErrorCode::kInput);
  CHECK(code_of([] { load_catalog("/nonexistent/catalog.tsv"); }) == ErrorCode::kNotFound);
}

TEST_CASE("load_catalog on the written fixture returns 1,000 rows") {
  const auto dir = std::filesystem::temp_directory_path() / "progsearch_catalog_test";
  std::filesystem::create_directories(dir);
  const auto catalog = make_fixture_catalog(FixtureSpec{}, 7);
  write_catalog(dir / "fixture.tsv", catalog);
  const auto reread = load_catalog(dir / "fixture.tsv");
  CHECK(reread.rows.size() == 1000);
  std::ifstream in(dir / "fixture.tsv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 1001);
  CHECK(reread.rows[17].fields == catalog.rows[17].fields);
}

TEST_CASE("Config strategy tags BRAND from Manufacturer") {
  const auto c = parse_catalog(kShopRows);
  const auto kb = extract_tags(c, shop_schema(), std::vector{config(kBrand, "Manufacturer")});
  CHECK(kb.products()[0].tags.at(kBrand) == std::set<std::string>{"prada"});
  CHECK(kb.vocabulary(kBrand) == std::set<std::string>{"gap", "prada"});
}

TEST_CASE("Config strategy splits multi-valued cells") {
  const auto kb = extract_tags(parse_catalog(kShopRows), shop_schema(), std::vector{config(kColor, "Color")});
  CHECK(kb.products()[1].tags.at(kColor) == std::set<std::string>{"blue", "white"});
}

TEST_CASE("heuristic_first_overlap") {
  const std::vector<std::string> lexicon{"shoes", "shirt"};
  CHECK(heuristic_first_overlap("Blue running shoes for men", "Footwear/shoes", lexicon) == "shoes");
  CHECK_FALSE(heuristic_first_overlap("Gift card", "Misc", lexicon).has_value());
  CHECK(heuristic_first_overlap("Shoes shoes shoes", "shoes", std::vector<std::string>{"shoes"}) == "shoes");
  CHECK(heuristic_first_overlap("Leather shoes with laces", "shoes", lexicon) == "shoes");
  CHECK_FALSE(heuristic_first_overlap("A shirt to go with shoes", "Footwear", lexicon).has_value());
}

TEST_CASE("heuristic_first_overlap folds plurals") {
  const std::vector<std::string> lexicon{"shoes"};
  CHECK(heuristic_first_overlap("One shoe, left foot", "Footwear/shoes", lexicon) == "shoes");
}

TEST_CASE("heuristic_vocab_match picks the leftmost longest phrase") {
  const std::vector<std::string> lexicon{"red", "dark red"};
  CHECK(heuristic_vocab_match("a dark red dress", lexicon) == "dark red");
  CHECK_FALSE(heuristic_vocab_match("green", lexicon).has_value());
}

TEST_CASE("Heuristic SORTAL on Description and Category; untyped rows retained") {
  ExtractionReport report;
  const auto kb = extract_tags(parse_catalog(kShopRows), shop_schema(),
                               std::vector{first_noun(), config(kPrice, "Price")}, {}, &report);
  CHECK(kb.size() == 3);
  CHECK(kb.products()[0].tags.at(kSortal) == std::set<std::string>{"shoes"});
  CHECK(kb.products()[1].tags.at(kSortal) == std::set<std::string>{"shirt"});
  CHECK_FALSE(kb.products()[2].typed());
  CHECK(report.untyped == 1);
  CHECK(report.priceless == 1);
  CHECK(kb.products()[1].price == doctest::Approx(30.5));
}

TEST_CASE("empty catalog gives an empty knowledge base") {
  Catalog empty;
  const auto kb = extract_tags(empty, shop_schema(), std::vector{first_noun()});
  CHECK(kb.size() == 0);
  CHECK(kb.vocabulary(kSortal).empty());
  CHECK(vocabulary(kb, kColor).empty());
}

TEST_CASE("configuration errors are raised before any work") {
  const auto c = parse_catalog(kShopRows);
  const auto msg = message_of([&] { extract_tags(c, shop_schema(), std::vector{config(kBrand, "Maker")}); });
  CHECK(msg.find("Maker") != std::string::npos);
  CHECK(code_of([&] { extract_tags(c, shop_schema(), std::vector{config(kMaterial, "Color")}); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([&] {
          extract_tags(c, shop_schema(), std::vector<ExtractionStrategy>{{kSortal, HeuristicStrategy{"magic", {}}}});
        }) == ErrorCode::kConfig);
  TagSchema no_seeds({kSortal});
  CHECK(code_of([&] { extract_tags(c, no_seeds, std::vector{first_noun()}); }) == ErrorCode::kConfig);
}

TEST_CASE("first writer wins per (product, kind)") {
  const auto c = parse_catalog(
      "sku\tDescription\tCategory\tType\n"
      "A\tshoes\tshoes\tbags\n"
      "B\tnothing\tMisc\tbags\n");
  const std::vector strategies{first_noun(), config(kSortal, "Type")};
  const auto kb = extract_tags(c, shop_schema(), strategies);
  CHECK(kb.products()[0].tags.at(kSortal) == std::set<std::string>{"shoes"});
  CHECK(kb.products()[1].tags.at(kSortal) == std::set<std::string>{"bags"});
}

TEST_CASE("Model strategy: lookup fake, column endpoints and unreachable endpoints") {
  const auto c = parse_catalog(kShopRows);
  ModelRegistry models;
  models.add("colors", std::make_shared<LookupTagModel>(std::map<std::string, std::vector<std::string>>{
                           {"A1", {"Purple"}}, {"A2", {"blue"}}}));
  ExtractionReport report;
  const auto kb = extract_tags(c, shop_schema(), std::vector<ExtractionStrategy>{{kColor, ModelStrategy{"colors"}}},
                               models, &report);
  CHECK(kb.products()[0].tags.at(kColor) == std::set<std::string>{"purple"});
  CHECK(report.model_skipped == 1);

  const auto by_column = extract_tags(c, shop_schema(),
                                      std::vector<ExtractionStrategy>{{kColor, ModelStrategy{"column:Color"}}});
  CHECK(by_column.products()[1].tags.at(kColor) == std::set<std::string>{"blue|white"});

  ExtractionReport down;
  const auto none = extract_tags(c, shop_schema(), std::vector<ExtractionStrategy>{{kColor, ModelStrategy{"offline"}}},
                                 {}, &down);
  CHECK(none.size() == 3);
  CHECK(down.model_skipped == 3);
  CHECK_FALSE(down.warnings.empty());
}

TEST_CASE("tag wire contract round-trips") {
  const TagRequest req{"A1", {{"Color", "Purple"}, {"Title", "x"}}};
  const auto back = decode_tag_request(encode_tag_request(req));
  CHECK(back.sku == "A1");
  CHECK(back.raw == req.raw);
  const TagResponse res{"COLOR", {"purple", "dark red"}, 0.75};
  const auto r = decode_tag_response(encode_tag_response(res));
  CHECK(r.kind == "COLOR");
  CHECK(r.values == res.values);
  CHECK(r.confidence == 0.75);
  CHECK(code_of([] { decode_tag_response("{\"values\": []}"); }) == ErrorCode::kInput);
}

TEST_CASE("similarity is symmetric and zero on the diagonal") {
  TagSchema s(std::vector<TagKind>{kSortal, kColor});
  s.add_similarity(kColor, "purple", "dark red", 0.2);
  s.add_similarity(kColor, "purple", "pink", 0.3);
  CHECK(s.distance(kColor, "purple", "dark red") == 0.2);
  CHECK(s.distance(kColor, "dark red", "purple") == 0.2);
  CHECK(s.distance(kColor, "pink", "pink") == 0.0);
  CHECK_FALSE(s.distance(kColor, "pink", "dark red").has_value());
  const auto n = s.neighbors(kColor, "purple");
  REQUIRE(n.size() == 2);
  CHECK(n[0].value == "dark red");
  CHECK(n[1].value == "pink");
  CHECK(code_of([&] { s.add_similarity(kColor, "a", "b", 1.5); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { s.add_similarity(kColor, "a", "a", 0.5); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { s.add_similarity(kPrice, "a", "b", 0.5); }) == ErrorCode::kConfig);
}

TEST_CASE("similarity entries for values absent from every product are pruned") {
  auto schema = shop_schema();
  schema.add_similarity(kColor, "purple", "teal", 0.4);
  ExtractionReport report;
  const auto kb = extract_tags(parse_catalog(kShopRows), schema, std::vector{config(kColor, "Color")}, {}, &report);
  CHECK_FALSE(kb.schema().distance(kColor, "purple", "teal").has_value());
  CHECK(report.warnings.size() == 1);
}

TEST_CASE("knowledge base invariants on the fixture") {
  const auto& kb = support::fixture_kb();
  SUBCASE("inverted index equals a rebuild from product tags") {
    CHECK(KnowledgeBase::build_inverted(kb.products()) == kb.inverted());
  }
  SUBCASE("every tag value is reachable via vocabulary and postings") {
    for (ProductId id = 0; id < kb.size(); ++id) {
      for (const auto& [kind, values] : kb.product(id).tags) {
        for (const auto& v : values) {
          CHECK(kb.vocabulary(kind).count(v) == 1);
          const auto posting = kb.postings(kind, v);
          CHECK(std::binary_search(posting.begin(), posting.end(), id));
        }
      }
    }
  }
  SUBCASE("vocabulary is the union of tags") {
    for (const auto& kind : kb.schema().kinds()) {
      std::set<std::string> expected;
      for (const auto& p : kb.products()) {
        if (auto it = p.tags.find(kind); it != p.tags.end()) expected.insert(it->second.begin(), it->second.end());
      }
      CHECK(kb.vocabulary(kind) == expected);
    }
  }
  SUBCASE("the fixture has the 12 fixture colors") { CHECK(kb.vocabulary(kColor).size() == 12); }
  SUBCASE("unknown kinds are rejected") {
    CHECK(code_of([&] { kb.vocabulary(TagKind("SIZE")); }) == ErrorCode::kNotFound);
  }
}

TEST_CASE("extraction is deterministic") {
  const auto spec = FixtureSpec{};
  const auto config = fixture_config(spec);
  const auto catalog = make_fixture_catalog(spec, 11);
  const auto a = extract_tags(catalog, config.schema(), config.strategies);
  const auto b = extract_tags(catalog, config.schema(), config.strategies);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.inverted() == b.inverted());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.products()[i].tags == b.products()[i].tags);
    CHECK(a.products()[i].price == b.products()[i].price);
  }
}

TEST_CASE("KnowledgeBase rejects bad products") {
  using support::product;
  CHECK(code_of([] { support::make_kb({product("A", {}), product("A", {})}); }) == ErrorCode::kInput);
  CHECK(code_of([] { support::make_kb({product("A", {}, -1.0)}); }) == ErrorCode::kInput);
  CHECK(code_of([] { support::make_kb({product("A", {{TagKind("SIZE"), {"xl"}}})}); }) == ErrorCode::kConfig);
}
