#include "progsearch/logical_form.hpp"

#include <algorithm>

#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

std::string_view to_symbol(CmpOp op) {
  switch (op) {
    case CmpOp::kLt: return "<";
    case CmpOp::kLe: return "<=";
    case CmpOp::kGt: return ">";
    case CmpOp::kGe: return ">=";
    case CmpOp::kEq: return "=";
  }
  return "=";
}

CmpOp cmp_op_from_symbol(std::string_view symbol) {
  if (symbol == "<") return CmpOp::kLt;
  if (symbol == "<=" || symbol == "≤") return CmpOp::kLe;
  if (symbol == ">") return CmpOp::kGt;
  if (symbol == ">=" || symbol == "≥") return CmpOp::kGe;
  if (symbol == "=" || symbol == "==") return CmpOp::kEq;
  throw Error(ErrorCode::kInput, "unknown comparison operator '" + std::string(symbol) + "'");
}

bool compare(double lhs, CmpOp op, double rhs) {
  switch (op) {
    case CmpOp::kLt: return lhs < rhs;
    case CmpOp::kLe: return lhs <= rhs;
    case CmpOp::kGt: return lhs > rhs;
    case CmpOp::kGe: return lhs >= rhs;
    case CmpOp::kEq: return lhs == rhs;
  }
  return false;
}

const TagKind& atom_kind(const Atom& atom) {
  if (const auto* p = std::get_if<Predicate>(&atom)) return p->kind;
  return std::get<Comparison>(atom).attribute;
}

std::string to_string(const Atom& atom) {
  if (const auto* p = std::get_if<Predicate>(&atom)) return p->kind.name() + ":" + p->value;
  const auto& c = std::get<Comparison>(atom);
  return c.attribute.name() + std::string(to_symbol(c.op)) + format_number(c.bound);
}

bool satisfies(const Product& product, const Atom& atom) {
  if (const auto* p = std::get_if<Predicate>(&atom)) return product.has_tag(p->kind, p->value);
  const auto& c = std::get<Comparison>(atom);
  return product.price.has_value() && compare(*product.price, c.op, c.bound);
}

namespace {

bool canonical_less(const Atom& a, const Atom& b) {
  const auto& ka = atom_kind(a);
  const auto& kb = atom_kind(b);
  const bool sa = ka == kSortal, sb = kb == kSortal;
  if (sa != sb) return sa;
  return ka < kb;
}

}  // namespace

LogicalForm::LogicalForm(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  for (const auto& atom : atoms_) {
    const auto& kind = atom_kind(atom);
    const bool numeric_atom = std::holds_alternative<Comparison>(atom);
    if (kind.numeric() != numeric_atom) {
      throw Error(ErrorCode::kInput, numeric_atom
                                         ? "comparison on categorical kind " + kind.name()
                                         : "predicate on numeric kind " + kind.name());
    }
    if (const auto* p = std::get_if<Predicate>(&atom); p && p->value.empty()) {
      throw Error(ErrorCode::kInput, "predicate with empty value for " + kind.name());
    }
  }
  std::stable_sort(atoms_.begin(), atoms_.end(), canonical_less);
  for (std::size_t i = 1; i < atoms_.size(); ++i) {
    if (atom_kind(atoms_[i]) == atom_kind(atoms_[i - 1])) {
      throw Error(ErrorCode::kInput, "more than one atom for kind " + atom_kind(atoms_[i]).name());
    }
  }
  if (!atoms_.empty() && atom_kind(atoms_.front()) == kSortal) head_ = 0;
}

const Predicate* LogicalForm::sortal() const {
  if (!head_) return nullptr;
  return &std::get<Predicate>(atoms_[*head_]);
}

const Atom* LogicalForm::find(const TagKind& kind) const {
  for (const auto& atom : atoms_) {
    if (atom_kind(atom) == kind) return &atom;
  }
  return nullptr;
}

LogicalForm LogicalForm::without(const TagKind& kind) const {
  std::vector<Atom> kept;
  for (const auto& atom : atoms_) {
    if (atom_kind(atom) != kind) kept.push_back(atom);
  }
  return LogicalForm(std::move(kept));
}

LogicalForm LogicalForm::with_value(const TagKind& kind, std::string value) const {
  std::vector<Atom> atoms(atoms_.begin(), atoms_.end());
  for (auto& atom : atoms) {
    if (auto* p = std::get_if<Predicate>(&atom); p && p->kind == kind) p->value = value;
  }
  return LogicalForm(std::move(atoms));
}

std::string LogicalForm::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (i) out += " & ";
    out += progsearch::to_string(atoms_[i]);
  }
  return out;
}

SkuSet scan_evaluate(const LogicalForm& form, const KnowledgeBase& kb) {
  SkuSet out;
  for (const auto& product : kb.products()) {
    bool ok = true;
    for (const auto& atom : form.atoms()) {
      if (!satisfies(product, atom)) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(product.sku);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace progsearch
