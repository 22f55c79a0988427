#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/logical_form.hpp"

namespace progsearch {

// --- plans ------------------------------------------------------------------------

struct IndexLookup {
  TagKind kind;
  std::string value;

  auto operator<=>(const IndexLookup&) const = default;
};

struct NumericFilter {
  TagKind attribute;
  CmpOp op = CmpOp::kLt;
  double bound = 0.0;

  bool operator==(const NumericFilter&) const = default;
};

using PlanNode = std::variant<IndexLookup, NumericFilter>;

/// Conjunctive filter plan. `sql_text` is only a rendering for display;
/// execute() never reads it.
struct QueryPlan {
  std::vector<PlanNode> nodes;
  std::string sql_text;
  std::string fingerprint;  // schema fingerprint the plan was compiled against
};

/// One node per atom, in the form's canonical order. Throws Error(kInput) on
/// an empty form.
QueryPlan compile(const LogicalForm& form, std::string_view schema_fingerprint);
QueryPlan compile(const LogicalForm& form, const KnowledgeBase& kb);

/// SELECT sku FROM products WHERE sortal = 'shoes' AND price < 100
std::string render_sql(std::span<const PlanNode> nodes);

/// Intersection of posting lists and numeric filters. Throws
/// Error(kMismatch) when the plan was compiled for another schema.
SkuSet execute(const QueryPlan& plan, const KnowledgeBase& kb);

// --- fallback ---------------------------------------------------------------------

struct RelaxValue {
  TagKind kind;
  std::string from;
  std::string to;
  double distance = 0.0;
};

struct DropAtom {
  TagKind kind;
};

struct FallbackStep {
  std::variant<RelaxValue, DropAtom> action;
  std::string rationale;
};

struct FallbackTrace {
  std::vector<FallbackStep> steps;
  std::string message;
};

struct FallbackPolicy {
  /// Kind order for relaxation and dropping. Kinds not listed come after,
  /// alphabetically.
  std::vector<TagKind> priority{kBrand, kMaterial, kGender, kColor, kPrice};
  std::set<TagKind> no_relax;
  std::set<TagKind> no_drop;
  std::size_t max_steps = 3;
};

/// Placeholders: {query} {from} {to} {sortal} {kind}.
struct ExplanationTemplates {
  std::string exact = "Showing exact matches for {query}.";
  std::string relax = "We don't have {from} {sortal}, showing {to} {sortal} instead.";
  std::string drop = "We ignored {kind} to find more {sortal}.";
  std::string vsm = "Showing text matches for \"{query}\".";
};

struct FallbackResult {
  SkuSet skus;
  FallbackTrace trace;
  LogicalForm final_form;
  QueryPlan final_plan;

  std::size_t tier() const { return trace.steps.size(); }
};

/// Exact execution, then the relaxation ladder: per step, try replacing one
/// non-sortal value by its nearest similar value; if nothing helps, drop the
/// next droppable atom. The SORTAL atom is never touched. Throws
/// Error(kInput) when the form has no SORTAL atom.
FallbackResult execute_with_fallback(const LogicalForm& form, const KnowledgeBase& kb,
                                     const FallbackPolicy& policy = {},
                                     const ExplanationTemplates& templates = {});

/// "prada purple shoes under 100"
std::string paraphrase(const LogicalForm& form);

std::string explain(const FallbackTrace& trace, const LogicalForm& form,
                    const ExplanationTemplates& templates = {});

// --- ranking ----------------------------------------------------------------------

using SignalMap = std::map<std::string, double>;
using SignalTable = std::map<std::string, SignalMap, std::less<>>;

struct RankingWeights {
  std::map<std::string, double> weights{{"popularity", 1.0}};
};

struct RankedResult {
  std::string sku;
  std::size_t relevance_tier = 0;
  SignalMap rank_signals;
  double score = 0.0;
  std::size_t final_position = 0;
};

/// Tier ascending, then weighted signal score descending, then sku. Throws
/// Error(kInput) when a sku has no tier.
std::vector<RankedResult> rank(std::span<const std::string> skus,
                               const std::map<std::string, std::size_t, std::less<>>& tiers,
                               const SignalTable& signals, const RankingWeights& weights = {});

/// Same, with one tier for every sku.
std::vector<RankedResult> rank(std::span<const std::string> skus, std::size_t tier,
                               const SignalTable& signals, const RankingWeights& weights = {});

}  // namespace progsearch
