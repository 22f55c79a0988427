#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "progsearch/catalog.hpp"

namespace progsearch {

enum class CmpOp { kLt, kLe, kGt, kGe, kEq };

std::string_view to_symbol(CmpOp op);
/// Accepts "<", "<=", ">", ">=", "=" (and the unicode ≤ / ≥).
CmpOp cmp_op_from_symbol(std::string_view symbol);
bool compare(double lhs, CmpOp op, double rhs);

/// Categorical conjunct, e.g. COLOR = purple.
struct Predicate {
  TagKind kind;
  std::string value;

  auto operator<=>(const Predicate&) const = default;
};

/// Numeric conjunct, e.g. PRICE < 100.
struct Comparison {
  TagKind attribute;
  CmpOp op = CmpOp::kLt;
  double bound = 0.0;

  bool operator==(const Comparison&) const = default;
};

using Atom = std::variant<Predicate, Comparison>;

const TagKind& atom_kind(const Atom& atom);
std::string to_string(const Atom& atom);

/// True iff the product satisfies the conjunct: categorical values are
/// matched against the product's value set, comparisons need a price.
bool satisfies(const Product& product, const Atom& atom);

/// A conjunction of atoms over one implicit variable. Atoms are kept in
/// canonical order (SORTAL first, remaining kinds alphabetically) so that
/// equality is structural.
class LogicalForm {
 public:
  LogicalForm() = default;
  /// Throws Error(kInput) on a repeated kind or a categorical/numeric mismatch.
  explicit LogicalForm(std::vector<Atom> atoms);

  std::span<const Atom> atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }

  /// Index of the SORTAL atom, when present (always 0 by canonical order).
  std::optional<std::size_t> head() const { return head_; }
  const Predicate* sortal() const;
  const Atom* find(const TagKind& kind) const;

  /// Form with `kind`'s atom removed / replaced.
  LogicalForm without(const TagKind& kind) const;
  LogicalForm with_value(const TagKind& kind, std::string value) const;

  /// "SORTAL:shoes & BRAND:prada & PRICE<100"
  std::string to_string() const;

  bool operator==(const LogicalForm&) const = default;

 private:
  std::vector<Atom> atoms_;
  std::optional<std::size_t> head_;
};

/// Reference semantics: a linear scan over every product. Golden sets of
/// generated triples are defined by this function.
SkuSet scan_evaluate(const LogicalForm& form, const KnowledgeBase& kb);

}  // namespace progsearch
