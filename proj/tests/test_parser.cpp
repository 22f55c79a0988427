#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "doctest.h"
#include "oracle.hpp"
#include "progsearch/error.hpp"
#include "progsearch/grammar.hpp"
#include "progsearch/parser.hpp"
#include "support.hpp"

using namespace progsearch;
using support::product;

namespace {

ParseResult parsed(const ParseOutcome& outcome) {
  REQUIRE(std::holds_alternative<ParseResult>(outcome));
  return std::get<ParseResult>(outcome);
}

struct Singleton {
  KnowledgeBase kb = support::make_kb({product("S1", {{kSortal, {"shoes"}}, {kColor, {"purple"}}}, 80.0)});
  std::vector<SynthTriple> triples;
  ParserModel model;

  Singleton() {
    SynthTriple t;
    t.query = "purple shoes";
    t.form = LogicalForm({Predicate{kSortal, "shoes"}, Predicate{kColor, "purple"}});
    t.golden = {"S1"};
    t.production = "color";
    t.alignment = {{0, 1}, {1, 0}};
    triples.push_back(t);
    model = train(triples, kb);
  }
};

}  // namespace

TEST_CASE("label set derives from the schema") {
  const LabelSet labels(TagSchema({kSortal, kColor, kPrice}));
  CHECK(labels.names() ==
        std::vector<std::string>{"O", "B-SORTAL", "I-SORTAL", "B-COLOR", "I-COLOR", "OP-LT", "OP-GT", "NUM"});
  const LabelSet no_price(TagSchema({kSortal}));
  CHECK(no_price.size() == 3);
  const auto b = *labels.find("B-COLOR"), i = *labels.find("I-COLOR"), is = *labels.find("I-SORTAL");
  CHECK(labels.allowed(b, i));
  CHECK_FALSE(labels.allowed(b, is));
  CHECK_FALSE(labels.allowed(labels.size(), i));
}

TEST_CASE("gold labels follow the alignment") {
  const auto& p = support::fixture_pipeline();
  for (const auto& t : std::span(p.triples).first(200)) {
    const auto labels = gold_labels(t);
    CHECK(labels.size() == tokenize(t.query).size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].rfind("I-", 0) == 0) {
        REQUIRE(i > 0);
        CHECK(labels[i - 1].substr(2) == labels[i].substr(2));
      }
    }
  }
  SynthTriple t;
  t.query = "dark red shoes under 100";
  t.form = LogicalForm({Predicate{kSortal, "shoes"}, Predicate{kColor, "dark red"}, Comparison{kPrice, CmpOp::kLt, 100}});
  t.alignment = {{0, 1}, {1, 1}, {2, 0}, {3, 2}, {4, 2}};
  CHECK(gold_labels(t) == std::vector<std::string>{"B-COLOR", "I-COLOR", "B-SORTAL", "OP-LT", "NUM"});
}

TEST_CASE("decode optimality against brute force enumeration") {
  const LabelSet labels(TagSchema({kSortal, kColor, kBrand, kPrice}));
  const std::size_t L = labels.size();
  CHECK(L <= 12);
  Rng rng(2024);
  for (int round = 0; round < 60; ++round) {
    const std::size_t n = 1 + rng.uniform(5);
    DecodeInput in;
    in.emission.assign(n, std::vector<double>(L));
    in.transition.assign(L + 1, std::vector<double>(L));
    for (auto& row : in.emission)
      for (auto& x : row) x = rng.uniform01() * 4 - 2;
    for (auto& row : in.transition)
      for (auto& x : row) x = rng.uniform01() * 2 - 1;

    std::vector<double> all;
    std::vector<std::size_t> seq(n, 0), best_seq;
    const double best = oracle::brute_force_decode(in, labels, best_seq);
    while (true) {
      bool ok = true;
      for (std::size_t t = 0; t < n && ok; ++t) ok = labels.allowed(t == 0 ? L : seq[t - 1], seq[t]);
      if (ok) all.push_back(sequence_score(in, seq));
      std::size_t i = 0;
      while (i < n && ++seq[i] == L) seq[i++] = 0;
      if (i == n) break;
    }
    std::sort(all.rbegin(), all.rend());

    const auto r = viterbi_2best(in, labels);
    CHECK(r.best == doctest::Approx(best).epsilon(1e-12));
    CHECK(sequence_score(in, r.labels) == doctest::Approx(best).epsilon(1e-12));
    if (all.size() > 1) {
      CHECK(r.second == doctest::Approx(all[1]).epsilon(1e-12));
    } else {
      CHECK(r.second == -std::numeric_limits<double>::infinity());
    }
  }
}

TEST_CASE("singleton training memorizes its query") {
  Singleton s;
  const auto r = parsed(s.model.parse("purple shoes"));
  CHECK(r.form == s.triples[0].form);
  CHECK(r.confidence > 0);
  CHECK(r.labels == std::vector<std::string>{"B-COLOR", "B-SORTAL"});
  const auto m = evaluate(s.model, s.triples);
  CHECK(m.exact_match == 1.0);
  CHECK(m.failure_rate == 0.0);
}

TEST_CASE("training errors") {
  const Singleton s;
  CHECK_THROWS_AS(train(std::vector<SynthTriple>{}, s.kb), Error);
  SynthTriple flat;
  flat.query = "shoes";
  flat.form = LogicalForm({Predicate{kSortal, "shoes"}});
  flat.alignment = {{0, 0}};
  try {
    train(std::vector{flat}, s.kb);
    FAIL("degenerate data must be rejected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInput);
  }
  CHECK_THROWS_AS(evaluate(s.model, std::vector<SynthTriple>{}), Error);
}

TEST_CASE("parse examples on the fixture model") {
  const auto& model = *support::fixture_pipeline().model;
  SUBCASE("prada purple shoes") {
    const auto r = parsed(model.parse("prada purple shoes"));
    CHECK(r.form ==
          LogicalForm({Predicate{kSortal, "shoes"}, Predicate{kColor, "purple"}, Predicate{kBrand, "prada"}}));
    CHECK(r.confidence > 0);
  }
  SUBCASE("shoes under 100") {
    const auto r = parsed(model.parse("shoes under 100"));
    CHECK(r.form == LogicalForm({Predicate{kSortal, "shoes"}, Comparison{kPrice, CmpOp::kLt, 100}}));
  }
  SUBCASE("out of vocabulary fails without error") {
    const auto outcome = model.parse("zxqv");
    REQUIRE(std::holds_alternative<ParseFailure>(outcome));
    CHECK_FALSE(std::get<ParseFailure>(outcome).reason.empty());
  }
  SUBCASE("empty and whitespace queries are input errors") {
    for (const char* q : {"", "   ", "?!"}) {
      try {
        model.parse(q);
        FAIL("expected an input error");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kInput);
      }
    }
  }
  SUBCASE("mixed case and punctuation normalize") {
    CHECK(parsed(model.parse("Prada, PURPLE shoes!")).form == parsed(model.parse("prada purple shoes")).form);
  }
  SUBCASE("synonym variants parse to the canonical value") {
    CHECK(parsed(model.parse("purple sneakers")).form == parsed(model.parse("purple shoes")).form);
  }
}

TEST_CASE("parse is deterministic") {
  const auto& model = *support::fixture_pipeline().model;
  for (const char* q : {"prada purple shoes", "blue bags under 120", "nintendo switch", "zxqv shoes"}) {
    const auto a = model.parse(q), b = model.parse(q);
    REQUIRE(a.index() == b.index());
    if (const auto* r = std::get_if<ParseResult>(&a)) {
      const auto& s = std::get<ParseResult>(b);
      CHECK(r->form == s.form);
      CHECK(r->confidence == s.confidence);
      CHECK(r->margin == s.margin);
      CHECK(r->labels == s.labels);
    }
  }
}

TEST_CASE("confidence calibration is monotone and bounded") {
  const auto& model = *support::fixture_pipeline().model;
  const auto& bins = model.calibration();
  REQUIRE_FALSE(bins.empty());
  for (std::size_t i = 0; i + 1 < bins.size(); ++i) {
    CHECK(bins[i].upper_margin <= bins[i + 1].upper_margin);
    CHECK(bins[i].confidence <= bins[i + 1].confidence);
  }
  double prev = -1;
  for (double m = -1; m < 50; m += 0.25) {
    const double c = model.calibrate(m);
    CHECK(c >= 0);
    CHECK(c <= 1);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(model.calibrate(std::numeric_limits<double>::max()) <= 1.0);
}

TEST_CASE("generation closure: training queries parse to their forms") {
  const auto& p = support::fixture_pipeline();
  std::size_t checked = 0, exact = 0;
  for (std::size_t i = 0; i < p.train_set.size(); i += 25) {
    const auto& t = p.train_set[i];
    const auto outcome = p.model->parse(t.query);
    ++checked;
    if (const auto* r = std::get_if<ParseResult>(&outcome); r && r->form == t.form) ++exact;
  }
  CHECK(static_cast<double>(exact) / static_cast<double>(checked) >= 0.99);
}

TEST_CASE("heldout metrics") {
  const auto& p = support::fixture_pipeline();
  const auto m = evaluate(*p.model, p.heldout);
  CHECK(m.examples == p.heldout.size());
  CHECK(m.exact_match >= 0.95);
  CHECK(m.failure_rate < 0.01);
  double min_recall = 1.0;
  for (const auto& [kind, s] : m.per_kind) {
    for (double x : {s.precision, s.recall, s.f1}) {
      CHECK(x >= 0);
      CHECK(x <= 1);
    }
    min_recall = std::min(min_recall, s.recall);
  }
  CHECK(m.exact_match >= 0);
  CHECK(m.exact_match <= 1);
  const auto shuffled = evaluate(p.model->shuffled_labels(7), p.heldout);
  CHECK(shuffled.exact_match < m.exact_match);
}

TEST_CASE("split_dataset is seeded and disjoint by query") {
  const auto& p = support::fixture_pipeline();
  const auto [train_a, held_a] = split_dataset(p.triples, 0.1, 7);
  const auto [train_b, held_b] = split_dataset(p.triples, 0.1, 7);
  CHECK(train_a == train_b);
  CHECK(held_a == held_b);
  std::set<std::string> held;
  for (const auto& t : held_a) held.insert(t.query);
  for (const auto& t : train_a) CHECK(held.count(t.query) == 0);
  CHECK(held_a.size() == static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(p.triples.size()))));
}

TEST_CASE("gazetteer is consistent with the knowledge base") {
  const auto& p = support::fixture_pipeline();
  for (const auto& kind : p.kb->schema().kinds()) {
    if (kind.numeric()) continue;
    for (const auto& value : p.kb->vocabulary(kind)) {
      const auto* entries = p.model->gazetteer_lookup(surface_form(value));
      REQUIRE(entries != nullptr);
      CHECK(entries->count({kind, value}) == 1);
    }
  }
  CHECK(p.model->gazetteer_lookup("zxqv") == nullptr);
}

TEST_CASE("training is deterministic under the seed") {
  Singleton s;
  const auto again = train(s.triples, s.kb);
  CHECK(again.to_json() == s.model.to_json());
  const auto& p = support::fixture_pipeline();
  const std::span<const SynthTriple> part = std::span(p.train_set).first(1500);
  CHECK(train(part, *p.kb).to_json() == train(part, *p.kb).to_json());
}

TEST_CASE("model file round-trips and refuses another schema") {
  const auto& p = support::fixture_pipeline();
  const auto path = std::filesystem::temp_directory_path() / "progsearch_model.json";
  p.model->save(path);
  const auto loaded = ParserModel::load(path, p.kb->fingerprint());
  CHECK(loaded.to_json() == p.model->to_json());
  CHECK(loaded.dataset_hash() == p.model->dataset_hash());
  for (const char* q : {"prada purple shoes", "shoes under 100", "zxqv"}) {
    const auto a = loaded.parse(q), b = p.model->parse(q);
    REQUIRE(a.index() == b.index());
    if (const auto* r = std::get_if<ParseResult>(&a)) {
      CHECK(r->form == std::get<ParseResult>(b).form);
      CHECK(r->confidence == std::get<ParseResult>(b).confidence);
    }
  }
  try {
    ParserModel::load(path, "0000000000000000");
    FAIL("fingerprint mismatch must be refused");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMismatch);
  }
  CHECK_THROWS_AS(ParserModel::from_json("{\"format\": \"other\"}"), Error);
}

TEST_CASE("duplicate kinds keep one atom and warn") {
  const auto& model = *support::fixture_pipeline().model;
  const auto outcome = model.parse("prada gucci shoes");
  if (const auto* r = std::get_if<ParseResult>(&outcome)) {
    std::size_t brands = 0;
    for (const auto& a : r->form.atoms()) brands += atom_kind(a) == kBrand;
    CHECK(brands <= 1);
    if (brands == 1) CHECK_FALSE(r->warnings.empty());
  }
}
