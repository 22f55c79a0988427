#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/logical_form.hpp"

namespace progsearch {

// --- productions ----------------------------------------------------------------

struct SlotElement {
  TagKind kind;
};

/// Bare token(s) that contribute no atom. `alternatives` holds one token per
/// surface choice ("ski|running"); an optional literal may also be omitted.
struct LiteralElement {
  std::vector<std::string> alternatives;
  bool optional = false;
};

/// Comparison phrase followed by a numeric bound, e.g. "under [PRICE]".
/// Every phrasing must map to `op` in price_phrasings().
struct PriceSlotElement {
  CmpOp op = CmpOp::kLt;
  std::vector<std::string> phrasings;
};

using Element = std::variant<SlotElement, LiteralElement, PriceSlotElement>;

struct Production {
  std::string name;
  std::vector<Element> elements;
};

/// The fixed phrase table: under/below -> <, over/above -> >.
const std::map<std::string, CmpOp, std::less<>>& price_phrasings();

/// Production file: one production per line, whitespace-separated elements;
/// `[KIND]` is a slot, a bare token is a literal (`a|b` alternatives, `tok?`
/// optional), a phrase-table literal directly before `[PRICE]` forms the
/// price slot. '#' starts a comment. A line may start with `name:`.
std::vector<Production> parse_productions(std::string_view text);
std::vector<Production> load_productions(const std::filesystem::path& path);
std::string to_line(const Production& production);

// --- generation -------------------------------------------------------------------

struct SynthTriple {
  std::string query;
  LogicalForm form;
  SkuSet golden;
  std::string production;
  /// (token index, atom index) for every token that realizes an atom.
  std::vector<std::pair<std::size_t, std::size_t>> alignment;

  bool operator==(const SynthTriple&) const = default;
};

struct GenerationPolicy {
  enum class Mode { kNonEmptyOnly, kOverGenerate };
  Mode mode = Mode::kNonEmptyOnly;
  /// When set, a candidate is kept with probability |golden| / |sortal set|,
  /// favouring broad queries. Off by default.
  bool weight_by_golden = false;
};

/// A production with its slot domains resolved against a knowledge base.
struct CompiledProduction {
  Production production;
  /// One domain per element; literal domains include "" when optional.
  std::vector<std::vector<std::string>> domains;
  std::uint64_t space = 0;
};

/// Immutable slot-filling machine over a knowledge base.
class Generator {
 public:
  Generator(std::vector<CompiledProduction> productions,
            std::shared_ptr<const KnowledgeBase> kb, std::vector<std::string> warnings);

  const std::vector<CompiledProduction>& productions() const { return productions_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const KnowledgeBase& kb() const { return *kb_; }
  std::shared_ptr<const KnowledgeBase> kb_ptr() const { return kb_; }
  std::uint64_t space_size() const;

  /// Realizes combination `index` (mixed-radix over the domains) of a
  /// production into a triple with its golden set computed by scan.
  SynthTriple realize(std::size_t production, std::uint64_t index) const;

 private:
  std::vector<CompiledProduction> productions_;
  std::shared_ptr<const KnowledgeBase> kb_;
  std::vector<std::string> warnings_;
};

/// Productions whose slot kinds have empty vocabularies are disabled with a
/// warning; throws Error(kConfig) when nothing remains.
Generator compile_grammar(std::span<const Production> productions,
                          std::shared_ptr<const KnowledgeBase> kb);

/// Price bounds offered to price slots: the p25/p50/p75/p90 price quantiles
/// rounded to two significant digits, deduplicated.
std::vector<double> price_bounds(const KnowledgeBase& kb);

/// Up to n distinct (by query) triples, sampled without replacement: a
/// production uniformly among those not exhausted, then a uniformly random
/// unused combination of slot values.
std::vector<SynthTriple> generate_triples(const Generator& generator, std::size_t n,
                                          std::uint64_t seed, GenerationPolicy policy = {});

struct AugmentStats {
  std::size_t added = 0;
  std::size_t collisions = 0;  // replacement clashes with another slot's vocabulary
  std::size_t duplicates = 0;  // replacement produced an existing query
};

/// Token-level synonym substitution. For each triple, every token equal to a
/// key yields one variant per replacement, with form and golden unchanged.
/// Originals are kept; each original is followed by its variants.
std::vector<SynthTriple> augment_synonyms(
    std::span<const SynthTriple> triples,
    const std::map<std::string, std::vector<std::string>>& synonyms,
    const KnowledgeBase& kb, AugmentStats* stats = nullptr);

// --- dataset I/O ----------------------------------------------------------------

/// One JSON object: {query, atoms, golden, production, alignment}.
std::string to_json_line(const SynthTriple& triple);
SynthTriple triple_from_json_line(std::string_view line);
void write_triples(const std::filesystem::path& path, std::span<const SynthTriple> triples);
std::vector<SynthTriple> read_triples(const std::filesystem::path& path);
/// Hash of the serialized dataset, recorded in trained models.
std::string dataset_hash(std::span<const SynthTriple> triples);

}  // namespace progsearch
