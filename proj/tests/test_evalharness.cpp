#include <cmath>
#include <set>

#include "doctest.h"
#include "oracle.hpp"
#include "progsearch/error.hpp"
#include "progsearch/evalharness.hpp"
#include "support.hpp"

using namespace progsearch;

namespace {

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("q" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("fixture catalog examples") {
  FixtureSpec spec;
  const auto catalog = make_fixture_catalog(spec, 7);
  CHECK(catalog.rows.size() == 1000);
  for (const char* col : {"sku", "Title", "Description", "Category", "Manufacturer", "Color", "Material", "Price",
                          "Popularity"}) {
    CHECK(catalog.has_column(col));
  }
  const auto& kb = support::fixture_kb();
  CHECK(kb.size() == 1000);
  for (const auto& p : kb.products()) CHECK(p.typed());
  CHECK(kb.vocabulary(kSortal).size() >= 15);
  CHECK(kb.vocabulary(kBrand).size() >= 20);
  CHECK(kb.vocabulary(kColor).size() == 12);

  CHECK(render_catalog(make_fixture_catalog(spec, 7)) == render_catalog(catalog));
  CHECK(render_catalog(make_fixture_catalog(spec, 8)) != render_catalog(catalog));

  FixtureSpec none;
  none.products = 0;
  CHECK(make_fixture_catalog(none, 7).rows.empty());

  FixtureSpec greedy;
  greedy.colors = 10000;
  try {
    make_fixture_catalog(greedy, 7);
    FAIL("inconsistent spec must be rejected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInput);
  }
}

TEST_CASE("fixture catalog re-reads to the same tags") {
  const auto path = std::filesystem::temp_directory_path() / "progsearch_fixture.tsv";
  const auto catalog = make_fixture_catalog(FixtureSpec{}, 7);
  write_catalog(path, catalog);
  const auto back = load_catalog(path);
  CHECK(render_catalog(back) == render_catalog(catalog));
  const auto kb = extract_tags(back, fixture_config(FixtureSpec{}).schema(), fixture_config(FixtureSpec{}).strategies);
  const auto& expected = support::fixture_kb();
  REQUIRE(kb.size() == expected.size());
  for (std::size_t i = 0; i < kb.size(); ++i) {
    CHECK(kb.products()[i].tags == expected.products()[i].tags);
    CHECK(kb.products()[i].price == expected.products()[i].price);
  }
}

TEST_CASE("fixture exclusions remove a pair") {
  FixtureSpec spec;
  spec.exclusions = {{"shoes", "purple"}};
  const auto p = build_index(fixture_config(spec), make_fixture_catalog(spec, 7));
  CHECK(oracle::scan(*p.kb, LogicalForm({Predicate{kSortal, "shoes"}, Predicate{kColor, "purple"}})).empty());
  CHECK_FALSE(oracle::scan(*p.kb, LogicalForm({Predicate{kSortal, "shoes"}})).empty());
  CHECK_FALSE(oracle::scan(*p.kb, LogicalForm({Predicate{kColor, "purple"}})).empty());
}

TEST_CASE("zipf distributions are normalized and non-increasing") {
  for (double s : {0.0, 0.5, 0.89, 1.0, 2.0}) {
    const auto d = zipf_distribution(numbered(500), s);
    double total = 0;
    for (std::size_t i = 0; i < d.entries.size(); ++i) {
      total += d.entries[i].second;
      if (i) CHECK(d.entries[i].second <= d.entries[i - 1].second);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
    CHECK(d.exponent == s);
  }
}

TEST_CASE("sample_query_stream") {
  const auto one = zipf_distribution({"only"}, 1.0);
  const auto s = sample_query_stream(one, 50, 7);
  CHECK(s.size() == 50);
  CHECK(std::all_of(s.begin(), s.end(), [](const auto& q) { return q == "only"; }));
  const auto d = zipf_distribution(numbered(100), 1.0);
  CHECK(sample_query_stream(d, 0, 7).empty());
  CHECK(sample_query_stream(d, 1000, 7) == sample_query_stream(d, 1000, 7));
  CHECK(sample_query_stream(d, 1000, 7) != sample_query_stream(d, 1000, 8));
  CHECK_THROWS_AS(sample_query_stream(QueryDistribution{}, 10, 7), Error);

  const auto big = sample_query_stream(d, 200000, 3);
  CHECK(static_cast<double>(std::count(big.begin(), big.end(), "q0")) / 200000.0 ==
        doctest::Approx(d.entries[0].second).epsilon(0.02));
}

TEST_CASE("fit_powerlaw") {
  std::map<std::string, std::uint64_t> zipf;
  for (std::size_t r = 1; r <= 1000; ++r) {
    zipf["q" + std::to_string(r)] = static_cast<std::uint64_t>(std::llround(1e6 / static_cast<double>(r)));
  }
  const auto fitted = fit_powerlaw(zipf);
  CHECK(std::abs(fitted.exponent - 1.0) <= 0.05);
  CHECK(fitted.entries.front().first == "q1");
  double total = 0;
  for (const auto& [q, p] : fitted.entries) total += p;
  CHECK(std::abs(total - 1.0) <= 1e-9);

  std::map<std::string, std::uint64_t> uniform;
  for (std::size_t r = 0; r < 50; ++r) uniform["u" + std::to_string(r)] = 10;
  CHECK(std::abs(fit_powerlaw(uniform).exponent) <= 0.05);

  try {
    fit_powerlaw({{"single", 5}});
    FAIL("too few queries");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInput);
  }
}

TEST_CASE("head_share") {
  CHECK(head_share(std::vector<std::string>{}, 0.05) == 0.0);
  CHECK(head_share(std::vector<std::string>{"a", "a", "a", "b"}, 0.5) == doctest::Approx(0.75));
  CHECK(head_share(std::vector<std::string>{"a", "b", "c"}, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("query log truth matches the linear scan") {
  const auto& p = support::fixture_pipeline();
  const auto log = make_query_log(p.triples);
  CHECK(log.counts.size() == 1000);
  std::uint64_t total = 0;
  for (const auto& [q, c] : log.counts) total += c;
  CHECK(total == doctest::Approx(1e6).epsilon(0.01));
  CHECK(log.counts.count("nintendo switch") == 1);
  std::size_t with_form = 0;
  for (const auto& [q, t] : log.truth) {
    if (!t.form) continue;
    ++with_form;
    REQUIRE(t.golden);
    CHECK(oracle::scan(*p.kb, *t.form) == *t.golden);
  }
  CHECK(with_form > 900);
  CHECK(make_query_log(p.triples).counts == log.counts);
}

TEST_CASE("compare_engines on an empty stream is all zeros") {
  const auto parts = support::fixture_pipeline().parts();
  const auto r = compare_engines(std::vector<std::string>{}, {}, parts);
  CHECK(r.samples == 0);
  CHECK(r.distinct == 0);
  for (const auto* e : {&r.vsm, &r.router}) {
    CHECK(e->sortal_precision == 0.0);
    CHECK(e->empty_rate == 0.0);
    CHECK(e->mean_tier == 0.0);
    CHECK(e->exact_set_accuracy == 0.0);
    CHECK(e->sortal_violations == 0);
  }
}

TEST_CASE("compare_engines on grammar queries favours the router") {
  const auto& p = support::fixture_pipeline();
  std::vector<std::string> stream;
  for (std::size_t i = 0; i < p.heldout.size(); i += 3) {
    for (std::size_t c = 0; c < 1 + i % 4; ++c) stream.push_back(p.heldout[i].query);
  }
  EvalTruth truth;
  for (const auto& t : p.heldout) truth[t.query] = EvalQuery{t.form, t.golden};
  const auto r = compare_engines(stream, truth, p.parts());
  CHECK(r.samples == stream.size());
  CHECK(r.router.exact_set_accuracy >= r.vsm.exact_set_accuracy);
  CHECK(r.router.sortal_precision >= r.vsm.sortal_precision);
  CHECK(r.router.sortal_violations == 0);
  for (const auto* e : {&r.vsm, &r.router}) {
    for (double x : {e->sortal_precision, e->empty_rate, e->exact_set_accuracy}) {
      CHECK(x >= 0);
      CHECK(x <= 1);
    }
  }
  double mass = 0;
  for (const auto& [name, m] : r.routing) mass += m;
  CHECK(mass == doctest::Approx(1.0));
}

TEST_CASE("nintendo switch separates the engines") {
  const auto& p = support::fixture_pipeline();
  const auto log = make_query_log(p.triples);
  REQUIRE(log.truth.at("nintendo switch").form);
  const std::vector<std::string> stream(5, "nintendo switch");
  const auto r = compare_engines(stream, log.truth, p.parts());
  CHECK(r.vsm.sortal_precision < 1.0);
  CHECK(r.router.sortal_precision == 1.0);
  CHECK(r.parsed_sortal_precision == 1.0);
}

TEST_CASE("evaluation reports are deterministic and well formed") {
  const auto& p = support::fixture_pipeline();
  EvaluationOptions options;
  options.stream_size = 20000;
  const auto a = run_evaluation(p, options);
  const auto b = run_evaluation(p, options);
  CHECK(report_to_json(a.report, a.meta) == report_to_json(b.report, b.meta));
  CHECK(report_to_text(a.report, a.meta) == report_to_text(b.report, b.meta));
  CHECK(report_basename(a.meta).rfind("report-seed7-", 0) == 0);
  CHECK(a.stream.size() == 20000);

  const auto& curve = a.report.head_coverage;
  REQUIRE_FALSE(curve.empty());
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].head >= curve[i - 1].head);
    CHECK(curve[i].mass >= curve[i - 1].mass);
    CHECK(curve[i].parsed_mass >= curve[i - 1].parsed_mass);
  }
  CHECK(curve.back().head == a.report.distinct);
  CHECK(curve.back().mass == doctest::Approx(1.0));
  for (const auto& pt : curve) CHECK(pt.parsed_mass <= pt.mass + 1e-12);

  const auto with_latency = report_to_json(a.report, a.meta, true);
  CHECK(with_latency.find("latency") != std::string::npos);
  CHECK(report_to_json(a.report, a.meta).find("p50") == std::string::npos);
  REQUIRE(a.meta.head_share_5pct);
  CHECK(*a.meta.head_share_5pct > 0.3);
  CHECK(*a.meta.head_share_5pct < 0.7);
}
