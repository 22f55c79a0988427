#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/parser.hpp"
#include "progsearch/synthesis.hpp"

namespace progsearch {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::uint32_t doc;
  std::uint32_t tf;
};

/// BM25 index over product text. Immutable after construction.
class SparseIndex {
 public:
  SparseIndex() = default;
  /// Documents as (sku, text) pairs; text goes through tokenize().
  SparseIndex(std::vector<std::pair<std::string, std::string>> documents, Bm25Params params = {});

  std::size_t document_count() const { return skus_.size(); }
  double average_length() const { return avg_length_; }
  const Bm25Params& params() const { return params_; }
  const std::string& sku(std::uint32_t doc) const { return skus_.at(doc); }
  std::uint32_t length(std::uint32_t doc) const { return lengths_.at(doc); }
  std::optional<std::uint32_t> doc_of(std::string_view sku) const;
  /// (doc, tf) pairs ascending by doc; empty for unknown terms.
  std::span<const Posting> postings(std::string_view term) const;
  const std::map<std::string, std::vector<Posting>, std::less<>>& terms() const { return postings_; }
  /// ln(1 + (N - df + 0.5) / (df + 0.5))
  double idf(std::string_view term) const;

  /// Schema fingerprint of the knowledge base the text came from (empty for
  /// ad-hoc document sets).
  const std::string& fingerprint() const { return fingerprint_; }
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  friend SparseIndex index_text(const KnowledgeBase& kb, std::span<const std::string> fields,
                                Bm25Params params);

  std::vector<std::string> skus_;
  std::vector<std::uint32_t> lengths_;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
  std::map<std::string, std::uint32_t, std::less<>> doc_by_sku_;
  double avg_length_ = 0.0;
  Bm25Params params_;
  std::string fingerprint_;
  std::vector<std::string> fields_;
};

/// One document per product: the selected raw fields joined by spaces.
/// Throws Error(kInput) on an empty field list or a field no product has.
SparseIndex index_text(const KnowledgeBase& kb, std::span<const std::string> fields,
                       Bm25Params params = {});

struct ScoredSku {
  std::string sku;
  double score = 0.0;
};

/// Top k documents by BM25 score (descending, sku ascending on ties). Each
/// distinct query term counts once. Throws Error(kInput) when k == 0.
std::vector<ScoredSku> search_bm25(const SparseIndex& index, std::string_view query, std::size_t k);

// --- router -----------------------------------------------------------------------

enum class RoutePath { kParsed, kVsmFallback };
enum class RouteReason { kNone, kParseFailure, kLowConfidence, kEmptyAfterFallback };

std::string_view to_string(RoutePath path);
std::string_view to_string(RouteReason reason);

struct RouteDecision {
  RoutePath path = RoutePath::kParsed;
  RouteReason reason = RouteReason::kNone;
  /// LowConfidence only.
  double threshold = 0.0;
  double value = 0.0;
  std::string detail;
};

struct RouterConfig {
  double threshold = 0.5;
  std::size_t k = 10;
  std::vector<std::string> fields{"Title", "Description"};
};

struct StageTiming {
  std::int64_t parse_us = 0;
  std::int64_t compile_us = 0;
  std::int64_t execute_us = 0;
  std::int64_t rank_us = 0;
  std::int64_t vsm_us = 0;
  std::int64_t total_us = 0;
};

/// Everything the router needs, shared and immutable.
struct EngineParts {
  std::shared_ptr<const KnowledgeBase> kb;
  std::shared_ptr<const SparseIndex> index;
  std::shared_ptr<const ParserModel> model;  // may be null: text tier only
  RouterConfig router;
  FallbackPolicy fallback;
  RankingWeights weights;
  std::shared_ptr<const SignalTable> signals;  // may be null: no signals
  ExplanationTemplates templates;
};

/// Throws Error(kMismatch) when the components disagree on the schema
/// fingerprint, Error(kConfig) when a required part is missing.
void check_parts(const EngineParts& parts);

struct RouteOutcome {
  std::vector<RankedResult> results;
  RouteDecision decision;
  std::optional<FallbackTrace> trace;
  std::string explanation;
  std::optional<ParseResult> parse;
  std::optional<QueryPlan> plan;
  StageTiming timing;
};

/// Two-tier routing: parse, execute with fallback, and degrade to BM25 on
/// parse failure, low confidence, a missing SORTAL, or an empty result.
/// Never throws.
RouteOutcome route(std::string_view query, const EngineParts& parts);

/// Text tier only, bypassing the parser.
RouteOutcome route_vsm_only(std::string_view query, const EngineParts& parts);

/// Signal table from a numeric raw column (e.g. Popularity); non-numeric
/// cells are skipped.
SignalTable signals_from_column(const KnowledgeBase& kb, std::string_view column,
                                std::string_view signal = "popularity");

}  // namespace progsearch
