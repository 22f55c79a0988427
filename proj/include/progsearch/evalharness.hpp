#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/config.hpp"
#include "progsearch/logical_form.hpp"
#include "progsearch/pipeline.hpp"
#include "progsearch/vsm.hpp"

namespace progsearch {

// --- fixtures -----------------------------------------------------------------------

struct FixtureSpec {
  std::size_t products = 1000;
  std::size_t sortals = 15;
  std::size_t brands = 20;
  std::size_t colors = 12;
  std::size_t materials = 6;
  std::size_t genders = 3;
  double price_min = 5.0;
  double price_max = 500.0;
  /// Nintendo consoles plus short Nintendo-branded pen listings.
  bool distractors = true;
  /// (sortal, color) pairs that never occur, e.g. {"shoes", "purple"}.
  std::vector<std::pair<std::string, std::string>> exclusions;
};

/// Deterministic catalog with ground truth in structured columns (Category,
/// Manufacturer, Color, Material, Gender, Price, Popularity) and in the text
/// fields (Title, Description). Every configured value occurs at least once.
/// Throws Error(kInput) when `spec` asks for more values than the pools
/// hold or than the products can carry.
Catalog make_fixture_catalog(const FixtureSpec& spec, std::uint64_t seed);

/// Tab-separated rendering, header first.
std::string render_catalog(const Catalog& catalog);
void write_catalog(const std::filesystem::path& path, const Catalog& catalog);

/// Schema, strategies, similarity, grammar and synonyms matching the fixture.
PipelineConfig fixture_config(const FixtureSpec& spec);

// --- query distributions --------------------------------------------------------------

struct QueryDistribution {
  /// (query, probability), probabilities non-increasing.
  std::vector<std::pair<std::string, double>> entries;
  double exponent = 0.0;
};

/// p(rank r) proportional to r^-exponent over `queries` in the given order.
QueryDistribution zipf_distribution(std::vector<std::string> queries, double exponent);

/// i.i.d. samples by inverse CDF. Throws Error(kInput) on an empty
/// distribution.
std::vector<std::string> sample_query_stream(const QueryDistribution& dist, std::size_t n,
                                             std::uint64_t seed);

/// Least squares on (log rank, log count); queries ranked by count, ties by
/// query. Throws Error(kInput) for fewer than 10 distinct queries.
QueryDistribution fit_powerlaw(const std::map<std::string, std::uint64_t>& counts);

/// Share of stream samples carried by the top ceil(fraction * distinct)
/// distinct queries.
double head_share(std::span<const std::string> stream, double fraction);

/// What is known about a query in the evaluation stream.
struct EvalQuery {
  std::optional<LogicalForm> form;   // generating form, when grammar-made
  std::optional<SkuSet> golden;
};

using EvalTruth = std::map<std::string, EvalQuery, std::less<>>;

struct QueryLog {
  std::map<std::string, std::uint64_t> counts;
  EvalTruth truth;
};

struct QueryLogOptions {
  std::size_t distinct = 1000;
  double exponent = 0.89;
  std::uint64_t total = 1000000;
  std::uint64_t seed = 7;
  /// Placed at the top ranks in this order, ahead of the sampled triples.
  std::vector<std::string> head_queries{"nintendo switch"};
  /// Free-text queries outside the grammar, spread over the tail.
  std::vector<std::string> free_text{"gift ideas", "zxqv", "something nice for summer",
                                     "best deals", "return policy"};
};

/// Synthetic observed log: grammar triples with exact Zipf counts.
QueryLog make_query_log(std::span<const SynthTriple> triples, const QueryLogOptions& options = {});

// --- engine comparison ----------------------------------------------------------------

struct LatencyStats {
  double p50_us = 0.0;
  double p90_us = 0.0;
  double p99_us = 0.0;
};

struct EngineMetrics {
  double sortal_precision = 0.0;
  double empty_rate = 0.0;
  double mean_tier = 0.0;
  double exact_set_accuracy = 0.0;
  /// Parsed-path results lacking the parsed form's sortal.
  std::size_t sortal_violations = 0;
  LatencyStats latency;
};

struct CoveragePoint {
  std::size_t head = 0;
  double mass = 0.0;
  double parsed_mass = 0.0;
};

struct ComparisonReport {
  std::size_t samples = 0;
  std::size_t distinct = 0;
  std::size_t eval_k = 10;
  EngineMetrics vsm;
  EngineMetrics router;
  /// Stream mass by route: PARSED and each fallback reason.
  std::map<std::string, double> routing;
  /// Parsed path only.
  double parsed_sortal_precision = 0.0;
  /// Parse time of queries the router sent to the text tier.
  LatencyStats vsm_routed_parse;
  std::vector<CoveragePoint> head_coverage;
};

/// Runs each distinct stream query through the text tier and the two-tier
/// router, weighting by stream multiplicity. Sortal precision looks at the
/// top `eval_k` results; exact-set accuracy at the full result set.
ComparisonReport compare_engines(std::span<const std::string> stream, const EvalTruth& truth,
                                 const EngineParts& parts, std::size_t eval_k = 10);

struct ReportMeta {
  std::uint64_t seed = 7;
  std::string config_hash;
  std::string dataset_hash;
  std::string schema_fingerprint;
  std::optional<double> fitted_exponent;
  std::optional<double> head_share_5pct;
  std::optional<double> parser_exact_match;
  std::optional<double> parser_failure_rate;
  std::optional<double> shuffled_exact_match;
};

inline constexpr int kReportSchemaVersion = 1;

/// Versioned JSON document. Latency depends on the machine, so it is left
/// out unless `include_latency`; everything else is reproducible.
std::string report_to_json(const ComparisonReport& report, const ReportMeta& meta,
                           bool include_latency = false);
std::string report_to_text(const ComparisonReport& report, const ReportMeta& meta);
/// "report-seed7-<config hash>"
std::string report_basename(const ReportMeta& meta);

/// The full experiment on a built pipeline: query log, fitted
/// distribution, 100k-sample stream, parser metrics and the comparison.
struct EvaluationOptions {
  std::size_t stream_size = 100000;
  std::uint64_t seed = 7;
  QueryLogOptions log;
  std::size_t eval_k = 10;
};

struct EvaluationResult {
  QueryLog log;
  QueryDistribution fitted;
  std::vector<std::string> stream;
  ComparisonReport report;
  ReportMeta meta;
};

EvaluationResult run_evaluation(const Pipeline& pipeline, const EvaluationOptions& options = {});

}  // namespace progsearch
