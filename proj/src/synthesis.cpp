#include "progsearch/synthesis.hpp"

#include <algorithm>

#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

namespace {

std::string quote_sql(std::string_view value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'') out += "''";
    else out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

}  // namespace

std::string render_sql(std::span<const PlanNode> nodes) {
  std::string sql = "SELECT sku FROM products";
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    sql += i ? " AND " : " WHERE ";
    if (const auto* lookup = std::get_if<IndexLookup>(&nodes[i])) {
      sql += to_lower(lookup->kind.name()) + " = " + quote_sql(lookup->value);
    } else {
      const auto& f = std::get<NumericFilter>(nodes[i]);
      sql += to_lower(f.attribute.name()) + " " + std::string(to_symbol(f.op)) + " " +
             format_number(f.bound);
    }
  }
  return sql;
}

QueryPlan compile(const LogicalForm& form, std::string_view schema_fingerprint) {
  if (form.empty()) throw Error(ErrorCode::kInput, "cannot compile an empty logical form");
  QueryPlan plan;
  for (const auto& atom : form.atoms()) {
    if (const auto* p = std::get_if<Predicate>(&atom)) {
      plan.nodes.emplace_back(IndexLookup{p->kind, p->value});
    } else {
      const auto& c = std::get<Comparison>(atom);
      plan.nodes.emplace_back(NumericFilter{c.attribute, c.op, c.bound});
    }
  }
  plan.sql_text = render_sql(plan.nodes);
  plan.fingerprint = std::string(schema_fingerprint);
  return plan;
}

QueryPlan compile(const LogicalForm& form, const KnowledgeBase& kb) {
  return compile(form, kb.fingerprint());
}

SkuSet execute(const QueryPlan& plan, const KnowledgeBase& kb) {
  if (plan.fingerprint != kb.fingerprint()) {
    throw Error(ErrorCode::kMismatch, "plan compiled for schema " + plan.fingerprint +
                                          ", knowledge base is " + kb.fingerprint());
  }
  std::vector<std::span<const ProductId>> lists;
  std::vector<const NumericFilter*> filters;
  for (const auto& node : plan.nodes) {
    if (const auto* lookup = std::get_if<IndexLookup>(&node)) {
      lists.push_back(kb.postings(lookup->kind, lookup->value));
      if (lists.back().empty()) return {};
    } else {
      filters.push_back(&std::get<NumericFilter>(node));
    }
  }

  std::vector<ProductId> ids;
  if (lists.empty()) {
    ids.resize(kb.size());
    for (ProductId i = 0; i < ids.size(); ++i) ids[i] = i;
  } else {
    std::sort(lists.begin(), lists.end(),
              [](const auto& a, const auto& b) { return a.size() < b.size(); });
    ids.assign(lists[0].begin(), lists[0].end());
    for (std::size_t k = 1; k < lists.size() && !ids.empty(); ++k) {
      std::vector<ProductId> next;
      std::set_intersection(ids.begin(), ids.end(), lists[k].begin(), lists[k].end(),
                            std::back_inserter(next));
      ids = std::move(next);
    }
  }

  SkuSet out;
  for (auto id : ids) {
    const auto& product = kb.product(id);
    bool ok = true;
    for (const auto* f : filters) {
      if (!product.price || !compare(*product.price, f->op, f->bound)) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(product.sku);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// --- fallback ---------------------------------------------------------------------

namespace {

std::vector<TagKind> ladder_order(const LogicalForm& form, const FallbackPolicy& policy) {
  std::vector<TagKind> order;
  for (const auto& kind : policy.priority) {
    if (kind != kSortal && form.find(kind)) order.push_back(kind);
  }
  std::vector<TagKind> rest;
  for (const auto& atom : form.atoms()) {
    const auto& kind = atom_kind(atom);
    if (kind != kSortal && std::find(order.begin(), order.end(), kind) == order.end()) {
      rest.push_back(kind);
    }
  }
  std::sort(rest.begin(), rest.end());
  order.insert(order.end(), rest.begin(), rest.end());
  return order;
}

std::string kind_word(const TagKind& kind) { return to_lower(kind.name()); }

}  // namespace

FallbackResult execute_with_fallback(const LogicalForm& form, const KnowledgeBase& kb,
                                     const FallbackPolicy& policy,
                                     const ExplanationTemplates& templates) {
  if (!form.sortal()) {
    throw Error(ErrorCode::kInput, "fallback requires a SORTAL atom; route to the text tier");
  }
  FallbackResult result;
  result.final_form = form;
  result.final_plan = compile(form, kb);
  result.skus = execute(result.final_plan, kb);

  const auto& schema = kb.schema();
  while (result.skus.empty() && result.trace.steps.size() < policy.max_steps &&
         result.final_form.size() > 1) {
    const auto& current = result.final_form;
    const auto order = ladder_order(current, policy);

    bool relaxed = false;
    for (const auto& kind : order) {
      if (policy.no_relax.count(kind) || !schema.has_similarity(kind)) continue;
      const auto* p = std::get_if<Predicate>(current.find(kind));
      if (!p) continue;
      for (const auto& neighbor : schema.neighbors(kind, p->value)) {
        auto candidate = current.with_value(kind, neighbor.value);
        auto plan = compile(candidate, kb);
        auto skus = execute(plan, kb);
        if (skus.empty()) continue;
        result.trace.steps.push_back(
            {RelaxValue{kind, p->value, neighbor.value, neighbor.distance},
             "no results for " + kind.name() + ":" + p->value + "; nearest value with results is " +
                 neighbor.value + " (distance " + format_number(neighbor.distance) + ")"});
        result.final_form = std::move(candidate);
        result.final_plan = std::move(plan);
        result.skus = std::move(skus);
        relaxed = true;
        break;
      }
      if (relaxed) break;
    }
    if (relaxed) break;

    auto victim = std::find_if(order.begin(), order.end(),
                               [&](const TagKind& k) { return !policy.no_drop.count(k); });
    if (victim == order.end()) break;
    const auto dropped = progsearch::to_string(*current.find(*victim));
    result.trace.steps.push_back(
        {DropAtom{*victim}, "no results with " + dropped + " and no similar value helps"});
    result.final_form = current.without(*victim);
    result.final_plan = compile(result.final_form, kb);
    result.skus = execute(result.final_plan, kb);
  }
  result.trace.message = explain(result.trace, form, templates);
  return result;
}

std::string paraphrase(const LogicalForm& form) {
  std::vector<std::string> words;
  for (const auto& atom : form.atoms()) {
    const auto* p = std::get_if<Predicate>(&atom);
    if (p && p->kind != kSortal) words.push_back(p->value);
  }
  if (const auto* s = form.sortal()) words.push_back(s->value);
  for (const auto& atom : form.atoms()) {
    const auto* c = std::get_if<Comparison>(&atom);
    if (!c) continue;
    std::string phrase;
    switch (c->op) {
      case CmpOp::kLt: phrase = "under"; break;
      case CmpOp::kLe: phrase = "at most"; break;
      case CmpOp::kGt: phrase = "over"; break;
      case CmpOp::kGe: phrase = "at least"; break;
      case CmpOp::kEq: phrase = "at"; break;
    }
    words.push_back(phrase + " " + format_number(c->bound));
  }
  return join_tokens(words);
}

std::string explain(const FallbackTrace& trace, const LogicalForm& form,
                    const ExplanationTemplates& templates) {
  if (trace.steps.empty()) return replace_all(templates.exact, "{query}", paraphrase(form));
  const std::string sortal = form.sortal() ? form.sortal()->value : std::string("items");
  std::string out;
  for (const auto& step : trace.steps) {
    std::string sentence;
    if (const auto* r = std::get_if<RelaxValue>(&step.action)) {
      sentence = replace_all(templates.relax, "{from}", r->from);
      sentence = replace_all(sentence, "{to}", r->to);
      sentence = replace_all(sentence, "{kind}", kind_word(r->kind));
    } else {
      sentence = replace_all(templates.drop, "{kind}", kind_word(std::get<DropAtom>(step.action).kind));
    }
    sentence = replace_all(sentence, "{sortal}", sortal);
    sentence = replace_all(sentence, "{query}", paraphrase(form));
    if (!out.empty()) out.push_back(' ');
    out += sentence;
  }
  return out;
}

// --- ranking ----------------------------------------------------------------------

std::vector<RankedResult> rank(std::span<const std::string> skus,
                               const std::map<std::string, std::size_t, std::less<>>& tiers,
                               const SignalTable& signals, const RankingWeights& weights) {
  std::vector<RankedResult> out;
  out.reserve(skus.size());
  for (const auto& sku : skus) {
    auto tier = tiers.find(sku);
    if (tier == tiers.end()) throw Error(ErrorCode::kInput, "no relevance tier for sku " + sku);
    RankedResult r;
    r.sku = sku;
    r.relevance_tier = tier->second;
    if (auto it = signals.find(sku); it != signals.end()) r.rank_signals = it->second;
    for (const auto& [name, weight] : weights.weights) {
      if (auto s = r.rank_signals.find(name); s != r.rank_signals.end()) r.score += weight * s->second;
    }
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const RankedResult& a, const RankedResult& b) {
    if (a.relevance_tier != b.relevance_tier) return a.relevance_tier < b.relevance_tier;
    if (a.score != b.score) return a.score > b.score;
    return a.sku < b.sku;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].final_position = i;
  return out;
}

std::vector<RankedResult> rank(std::span<const std::string> skus, std::size_t tier,
                               const SignalTable& signals, const RankingWeights& weights) {
  std::map<std::string, std::size_t, std::less<>> tiers;
  for (const auto& sku : skus) tiers[sku] = tier;
  return rank(skus, tiers, signals, weights);
}

}  // namespace progsearch
