#include "progsearch/vsm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <unordered_map>

#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

SparseIndex::SparseIndex(std::vector<std::pair<std::string, std::string>> documents,
                         Bm25Params params)
    : params_(params) {
  if (!(params.k1 > 0) || !(params.b > 0)) {
    throw Error(ErrorCode::kConfig, "BM25 parameters must be positive");
  }
  std::sort(documents.begin(), documents.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::uint64_t total = 0;
  for (auto& [sku, text] : documents) {
    const auto doc = static_cast<std::uint32_t>(skus_.size());
    if (!doc_by_sku_.emplace(sku, doc).second) {
      throw Error(ErrorCode::kInput, "duplicate document sku '" + sku + "'");
    }
    skus_.push_back(sku);
    const auto tokens = tokenize(text);
    lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total += tokens.size();
    std::map<std::string_view, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      auto it = postings_.find(term);
      if (it == postings_.end()) it = postings_.emplace(std::string(term), std::vector<Posting>{}).first;
      it->second.push_back({doc, count});
    }
  }
  avg_length_ = skus_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(skus_.size());
}

std::optional<std::uint32_t> SparseIndex::doc_of(std::string_view sku) const {
  auto it = doc_by_sku_.find(sku);
  if (it == doc_by_sku_.end()) return std::nullopt;
  return it->second;
}

std::span<const Posting> SparseIndex::postings(std::string_view term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return {};
  return it->second;
}

double SparseIndex::idf(std::string_view term) const {
  const double n = static_cast<double>(skus_.size());
  const double df = static_cast<double>(postings(term).size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

SparseIndex index_text(const KnowledgeBase& kb, std::span<const std::string> fields,
                       Bm25Params params) {
  if (fields.empty()) throw Error(ErrorCode::kInput, "text index needs at least one field");
  for (const auto& field : fields) {
    const bool known = kb.products().empty() ||
                       std::any_of(kb.products().begin(), kb.products().end(),
                                   [&](const Product& p) { return p.raw.count(field) > 0; });
    if (!known) throw Error(ErrorCode::kInput, "unknown text field '" + field + "'");
  }
  std::vector<std::pair<std::string, std::string>> docs;
  docs.reserve(kb.size());
  for (const auto& product : kb.products()) {
    std::string text;
    for (const auto& field : fields) {
      auto it = product.raw.find(field);
      if (it == product.raw.end()) continue;
      if (!text.empty()) text.push_back(' ');
      text += it->second;
    }
    docs.emplace_back(product.sku, std::move(text));
  }
  SparseIndex index(std::move(docs), params);
  index.fingerprint_ = kb.fingerprint();
  index.fields_.assign(fields.begin(), fields.end());
  return index;
}

std::vector<ScoredSku> search_bm25(const SparseIndex& index, std::string_view query, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInput, "k must be at least 1");
  auto terms = tokenize(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  const auto& p = index.params();
  const double avg = index.average_length();
  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& term : terms) {
    const auto list = index.postings(term);
    if (list.empty()) continue;
    const double idf = index.idf(term);
    for (const auto& posting : list) {
      const double tf = posting.tf;
      const double norm = p.k1 * (1.0 - p.b + p.b * index.length(posting.doc) / avg);
      scores[posting.doc] += idf * tf * (p.k1 + 1.0) / (tf + norm);
    }
  }
  std::vector<ScoredSku> out;
  out.reserve(scores.size());
  for (const auto& [doc, score] : scores) out.push_back({index.sku(doc), score});
  auto better = [](const ScoredSku& a, const ScoredSku& b) {
    return a.score != b.score ? a.score > b.score : a.sku < b.sku;
  };
  if (out.size() > k) {
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(), better);
    out.resize(k);
  } else {
    std::sort(out.begin(), out.end(), better);
  }
  return out;
}

// --- router -----------------------------------------------------------------------

std::string_view to_string(RoutePath path) {
  return path == RoutePath::kParsed ? "PARSED" : "VSM_FALLBACK";
}

std::string_view to_string(RouteReason reason) {
  switch (reason) {
    case RouteReason::kNone: return "None";
    case RouteReason::kParseFailure: return "ParseFailure";
    case RouteReason::kLowConfidence: return "LowConfidence";
    case RouteReason::kEmptyAfterFallback: return "EmptyAfterFallback";
  }
  return "None";
}

void check_parts(const EngineParts& parts) {
  if (!parts.kb || !parts.index) throw Error(ErrorCode::kConfig, "engine needs a knowledge base and a text index");
  if (!parts.index->fingerprint().empty() && parts.index->fingerprint() != parts.kb->fingerprint()) {
    throw Error(ErrorCode::kMismatch, "text index was built for schema " + parts.index->fingerprint());
  }
  if (parts.model && parts.model->schema_fingerprint() != parts.kb->fingerprint()) {
    throw Error(ErrorCode::kMismatch,
                "parser model was trained for schema " + parts.model->schema_fingerprint());
  }
}

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start).count();
}

std::string fill_query(std::string text, std::string_view query) {
  const std::string key = "{query}";
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + query.size())) {
    text.replace(pos, key.size(), query);
  }
  return text;
}

void run_vsm(std::string_view query, const EngineParts& parts, RouteOutcome& out) {
  const auto start = Clock::now();
  out.results.clear();
  try {
    if (parts.index) {
      auto hits = search_bm25(*parts.index, query, std::max<std::size_t>(parts.router.k, 1));
      for (std::size_t i = 0; i < hits.size(); ++i) {
        RankedResult r;
        r.sku = hits[i].sku;
        r.relevance_tier = 0;
        r.rank_signals = {{"bm25", hits[i].score}};
        r.score = hits[i].score;
        r.final_position = i;
        out.results.push_back(std::move(r));
      }
    }
  } catch (const std::exception& e) {
    out.decision.detail += out.decision.detail.empty() ? "" : "; ";
    out.decision.detail += std::string("text tier failed: ") + e.what();
  }
  out.explanation = fill_query(parts.templates.vsm, trim(query));
  out.timing.vsm_us = micros_since(start);
}

}  // namespace

RouteOutcome route_vsm_only(std::string_view query, const EngineParts& parts) {
  const auto start = Clock::now();
  RouteOutcome out;
  out.decision.path = RoutePath::kVsmFallback;
  out.decision.reason = RouteReason::kNone;
  out.decision.detail = "text tier only";
  run_vsm(query, parts, out);
  out.timing.total_us = micros_since(start);
  return out;
}

RouteOutcome route(std::string_view query, const EngineParts& parts) {
  const auto start = Clock::now();
  RouteOutcome out;
  auto fall_back = [&](RouteReason reason, std::string detail) {
    out.decision.path = RoutePath::kVsmFallback;
    out.decision.reason = reason;
    out.decision.detail = std::move(detail);
    out.plan.reset();
    run_vsm(query, parts, out);
    out.timing.total_us = micros_since(start);
    return out;
  };

  try {
    if (!parts.model || !parts.kb) return fall_back(RouteReason::kParseFailure, "no parser model loaded");

    auto t = Clock::now();
    ParseOutcome outcome;
    try {
      outcome = parts.model->parse(query);
    } catch (const std::exception& e) {
      out.timing.parse_us = micros_since(t);
      return fall_back(RouteReason::kParseFailure, e.what());
    }
    out.timing.parse_us = micros_since(t);
    if (const auto* failure = std::get_if<ParseFailure>(&outcome)) {
      return fall_back(RouteReason::kParseFailure, failure->reason);
    }
    out.parse = std::get<ParseResult>(std::move(outcome));
    const auto& parsed = *out.parse;
    if (parsed.confidence < parts.router.threshold) {
      out.decision.threshold = parts.router.threshold;
      out.decision.value = parsed.confidence;
      return fall_back(RouteReason::kLowConfidence, "confidence below threshold");
    }
    if (!parsed.form.sortal()) return fall_back(RouteReason::kParseFailure, "parsed form has no SORTAL");

    t = Clock::now();
    out.plan = compile(parsed.form, *parts.kb);
    out.timing.compile_us = micros_since(t);

    t = Clock::now();
    auto executed = execute_with_fallback(parsed.form, *parts.kb, parts.fallback, parts.templates);
    out.timing.execute_us = micros_since(t);
    out.trace = executed.trace;
    if (executed.skus.empty()) {
      return fall_back(RouteReason::kEmptyAfterFallback, "no results after " +
                                                             std::to_string(executed.tier()) +
                                                             " fallback steps");
    }
    out.plan = executed.final_plan;

    t = Clock::now();
    static const SignalTable kNoSignals;
    auto ranked = rank(executed.skus, executed.tier(), parts.signals ? *parts.signals : kNoSignals,
                       parts.weights);
    if (ranked.size() > parts.router.k) ranked.resize(parts.router.k);
    out.results = std::move(ranked);
    out.timing.rank_us = micros_since(t);

    out.decision = RouteDecision{};
    out.explanation = executed.trace.message;
    out.timing.total_us = micros_since(start);
    return out;
  } catch (const std::exception& e) {
    return fall_back(RouteReason::kParseFailure, std::string("parsed path failed: ") + e.what());
  }
}

SignalTable signals_from_column(const KnowledgeBase& kb, std::string_view column,
                                std::string_view signal) {
  SignalTable table;
  for (const auto& product : kb.products()) {
    auto it = product.raw.find(std::string(column));
    if (it == product.raw.end()) continue;
    const auto text = trim(it->second);
    if (text.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(v)) continue;
    table[product.sku][std::string(signal)] = v;
  }
  return table;
}

}  // namespace progsearch
