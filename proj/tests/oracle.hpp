#pragma once

// Reference implementations written against the raw data only. They do not
// call the library's evaluators, executors or scorers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/logical_form.hpp"
#include "progsearch/parser.hpp"
#include "progsearch/synthesis.hpp"
#include "progsearch/text.hpp"

namespace oracle {

using namespace progsearch;

inline bool holds(double lhs, CmpOp op, double rhs) {
  switch (op) {
    case CmpOp::kLt: return lhs < rhs;
    case CmpOp::kLe: return lhs <= rhs;
    case CmpOp::kGt: return lhs > rhs;
    case CmpOp::kGe: return lhs >= rhs;
    case CmpOp::kEq: return lhs == rhs;
  }
  return false;
}

inline bool matches(const Product& p, const Atom& atom) {
  if (const auto* pred = std::get_if<Predicate>(&atom)) {
    for (const auto& [kind, values] : p.tags) {
      if (kind.name() == pred->kind.name()) return values.count(pred->value) > 0;
    }
    return false;
  }
  const auto& cmp = std::get<Comparison>(atom);
  return p.price.has_value() && holds(*p.price, cmp.op, cmp.bound);
}

/// Linear scan over every product.
inline std::vector<std::string> scan(const std::vector<Product>& products,
                                     const std::vector<Atom>& atoms) {
  std::vector<std::string> out;
  for (const auto& p : products) {
    bool all = true;
    for (const auto& a : atoms) all = all && matches(p, a);
    if (all) out.push_back(p.sku);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> scan(const KnowledgeBase& kb, const LogicalForm& form) {
  return scan(kb.products(), std::vector<Atom>(form.atoms().begin(), form.atoms().end()));
}

/// BM25 computed term by term from token lists, recounting df and lengths.
struct Bm25Corpus {
  std::vector<std::string> skus;
  std::vector<std::vector<std::string>> docs;
  double k1 = 1.2;
  double b = 0.75;

  double score(const std::vector<std::string>& query, std::size_t doc) const {
    const double n = static_cast<double>(docs.size());
    double total_len = 0;
    for (const auto& d : docs) total_len += static_cast<double>(d.size());
    const double avgdl = total_len / n;
    std::set<std::string> terms(query.begin(), query.end());
    double s = 0;
    for (const auto& t : terms) {
      double df = 0;
      for (const auto& d : docs) df += std::find(d.begin(), d.end(), t) != d.end() ? 1 : 0;
      const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), t));
      if (tf == 0) continue;
      const double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
      const double dl = static_cast<double>(docs[doc].size());
      s += idf * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / avgdl));
    }
    return s;
  }
};

/// Exhaustive argmax over admissible label sequences. Returns the best
/// score, and fills `best` with a best sequence.
inline double brute_force_decode(const DecodeInput& in, const LabelSet& labels,
                                 std::vector<std::size_t>& best) {
  const std::size_t n = in.emission.size();
  const std::size_t L = labels.size();
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> seq(n, 0);
  while (true) {
    bool ok = true;
    double s = 0;
    for (std::size_t t = 0; t < n && ok; ++t) {
      const std::size_t prev = t == 0 ? L : seq[t - 1];
      ok = labels.allowed(prev, seq[t]);
      s += in.transition[prev][seq[t]] + in.emission[t][seq[t]];
    }
    if (ok && s > best_score) {
      best_score = s;
      best = seq;
    }
    std::size_t i = 0;
    while (i < n && ++seq[i] == L) seq[i++] = 0;
    if (i == n) break;
  }
  return best_score;
}

/// Counts ordering violations: a higher tier before a lower tier, a lower
/// weighted score before a higher one within a tier, or a sku tie out of order.
inline std::size_t ranking_violations(const std::vector<RankedResult>& ranked,
                                      const std::map<std::string, std::size_t, std::less<>>& tiers,
                                      const SignalTable& signals, const RankingWeights& weights) {
  auto weighted = [&](const std::string& sku) {
    double s = 0;
    auto it = signals.find(sku);
    if (it == signals.end()) return 0.0;
    for (const auto& [name, w] : weights.weights) {
      auto v = it->second.find(name);
      if (v != it->second.end()) s += w * v->second;
    }
    return s;
  };
  std::size_t violations = 0;
  for (std::size_t i = 0; i + 1 < ranked.size(); ++i) {
    const auto& a = ranked[i].sku;
    const auto& b = ranked[i + 1].sku;
    const auto ta = tiers.at(a), tb = tiers.at(b);
    if (ta > tb) {
      ++violations;
    } else if (ta == tb) {
      const double sa = weighted(a), sb = weighted(b);
      if (sa < sb || (sa == sb && a > b)) ++violations;
    }
    if (ranked[i].final_position != i) ++violations;
  }
  return violations;
}

/// Reads "SELECT sku FROM products WHERE a = 'x' AND price < 100" back into
/// sorted conjunct strings "a=x", "price<100".
inline std::vector<std::string> read_sql_conjuncts(const std::string& sql) {
  const std::string prefix = "SELECT sku FROM products WHERE ";
  std::vector<std::string> out;
  if (sql.rfind(prefix, 0) != 0) return out;
  std::string rest = sql.substr(prefix.size());
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    auto next = rest.find(" AND ", pos);
    // quoted values may contain " AND "; skip separators inside quotes
    while (next != std::string::npos &&
           std::count(rest.begin() + static_cast<std::ptrdiff_t>(pos), rest.begin() + static_cast<std::ptrdiff_t>(next), '\'') % 2 == 1) {
      next = rest.find(" AND ", next + 1);
    }
    std::string part = rest.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    std::istringstream in(part);
    std::string attr, op;
    in >> attr >> op;
    std::string value;
    std::getline(in, value);
    value = value.substr(value.find_first_not_of(' '));
    if (value.size() >= 2 && value.front() == '\'' && value.back() == '\'') {
      value = value.substr(1, value.size() - 2);
      std::string unescaped;
      for (std::size_t i = 0; i < value.size(); ++i) {
        unescaped.push_back(value[i]);
        if (value[i] == '\'' && i + 1 < value.size() && value[i + 1] == '\'') ++i;
      }
      value = unescaped;
    }
    out.push_back(attr + op + value);
    if (next == std::string::npos) break;
    pos = next + 5;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle
