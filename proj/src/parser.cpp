#include "progsearch/parser.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::string_view kOpLt = "OP-LT";
constexpr std::string_view kOpGt = "OP-GT";
constexpr std::string_view kNum = "NUM";

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

// --- labels -----------------------------------------------------------------------

LabelSet::LabelSet(const TagSchema& schema) {
  std::vector<std::string> names{"O"};
  bool numeric = false;
  for (const auto& kind : schema.kinds()) {
    if (kind.numeric()) {
      numeric = true;
      continue;
    }
    names.push_back("B-" + kind.name());
    names.push_back("I-" + kind.name());
  }
  if (numeric) {
    names.emplace_back(kOpLt);
    names.emplace_back(kOpGt);
    names.emplace_back(kNum);
  }
  *this = LabelSet(std::move(names));
}

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  const auto n = names_.size();
  allowed_.assign(n + 1, std::vector<bool>(n, true));
  for (std::size_t cur = 0; cur < n; ++cur) {
    if (!starts_with(names_[cur], "I-")) continue;
    const auto kind = names_[cur].substr(2);
    allowed_[n][cur] = false;
    for (std::size_t prev = 0; prev < n; ++prev) {
      allowed_[prev][cur] = names_[prev] == "B-" + kind || names_[prev] == "I-" + kind;
    }
  }
}

std::optional<std::size_t> LabelSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

bool LabelSet::allowed(std::size_t prev, std::size_t cur) const { return allowed_[prev][cur]; }

std::vector<std::string> gold_labels(const SynthTriple& triple) {
  const auto tokens = tokenize(triple.query);
  std::vector<std::optional<std::size_t>> atom_of(tokens.size());
  for (const auto& [t, a] : triple.alignment) {
    if (t >= tokens.size() || a >= triple.form.size()) {
      throw Error(ErrorCode::kInput, "alignment out of range for query '" + triple.query + "'");
    }
    atom_of[t] = a;
  }
  std::vector<std::string> labels(tokens.size(), "O");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!atom_of[i]) continue;
    const auto& atom = triple.form.atoms()[*atom_of[i]];
    if (const auto* p = std::get_if<Predicate>(&atom)) {
      const bool inside = i > 0 && atom_of[i - 1] == atom_of[i];
      labels[i] = (inside ? "I-" : "B-") + p->kind.name();
    } else if (is_numeral(tokens[i])) {
      labels[i] = kNum;
    } else {
      const auto op = std::get<Comparison>(atom).op;
      labels[i] = (op == CmpOp::kLt || op == CmpOp::kLe) ? kOpLt : kOpGt;
    }
  }
  return labels;
}

// --- decoding -----------------------------------------------------------------------

DecodeResult viterbi_2best(const DecodeInput& input, const LabelSet& labels) {
  const std::size_t n = input.emission.size();
  const std::size_t L = labels.size();
  const std::size_t start = L;
  DecodeResult result;
  if (n == 0) return result;

  struct Entry {
    double score = kNegInf;
    std::size_t prev = 0;
    int rank = 0;
  };
  // cells[t][l][r]: r-th best partial path ending in label l at position t.
  std::vector<std::vector<std::array<Entry, 2>>> cells(n, std::vector<std::array<Entry, 2>>(L));
  auto offer = [](std::array<Entry, 2>& slot, const Entry& e) {
    if (e.score > slot[0].score) {
      slot[1] = slot[0];
      slot[0] = e;
    } else if (e.score > slot[1].score) {
      slot[1] = e;
    }
  };

  for (std::size_t l = 0; l < L; ++l) {
    if (!labels.allowed(start, l)) continue;
    offer(cells[0][l], Entry{input.transition[start][l] + input.emission[0][l], start, 0});
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t p = 0; p < L; ++p) {
        if (!labels.allowed(p, l)) continue;
        for (int r = 0; r < 2; ++r) {
          const double prev = cells[t - 1][p][r].score;
          if (prev == kNegInf) continue;
          offer(cells[t][l], Entry{prev + input.transition[p][l] + input.emission[t][l], p, r});
        }
      }
    }
  }

  std::array<Entry, 2> final_best;
  std::array<std::size_t, 2> final_label{0, 0};
  std::array<int, 2> final_rank{0, 0};
  for (std::size_t l = 0; l < L; ++l) {
    for (int r = 0; r < 2; ++r) {
      const auto& e = cells[n - 1][l][r];
      if (e.score == kNegInf) continue;
      if (e.score > final_best[0].score) {
        final_best[1] = final_best[0];
        final_label[1] = final_label[0];
        final_rank[1] = final_rank[0];
        final_best[0] = e;
        final_label[0] = l;
        final_rank[0] = r;
      } else if (e.score > final_best[1].score) {
        final_best[1] = e;
        final_label[1] = l;
        final_rank[1] = r;
      }
    }
  }
  result.best = final_best[0].score;
  result.second = final_best[1].score;
  result.labels.assign(n, 0);
  std::size_t label = final_label[0];
  int rank = final_rank[0];
  for (std::size_t t = n; t-- > 0;) {
    result.labels[t] = label;
    const auto& e = cells[t][label][rank];
    label = e.prev;
    rank = e.rank;
  }
  return result;
}

double sequence_score(const DecodeInput& input, std::span<const std::size_t> labels) {
  if (labels.empty()) return 0.0;
  const std::size_t start = input.transition.size() - 1;
  double s = input.transition[start][labels[0]] + input.emission[0][labels[0]];
  for (std::size_t t = 1; t < labels.size(); ++t) {
    s += input.transition[labels[t - 1]][labels[t]] + input.emission[t][labels[t]];
  }
  return s;
}

// --- features -----------------------------------------------------------------------

namespace {

std::string shape_of(std::string_view token) {
  std::string shape;
  for (char c : token) {
    char s = std::isdigit(static_cast<unsigned char>(c)) ? '9'
             : std::isalpha(static_cast<unsigned char>(c)) ? 'a'
                                                            : 'x';
    if (shape.empty() || shape.back() != s) shape.push_back(s);
  }
  return shape;
}

std::vector<std::string> fold_variants(std::string_view surface) {
  std::vector<std::string> out;
  std::string s(surface);
  out.push_back(s + "s");
  out.push_back(s + "es");
  if (s.size() > 2 && s.back() == 's') out.push_back(s.substr(0, s.size() - 1));
  if (s.size() > 3 && s.substr(s.size() - 2) == "es") out.push_back(s.substr(0, s.size() - 2));
  return out;
}

}  // namespace

std::vector<std::string> ParserModel::feature_names(std::span<const std::string> tokens) const {
  const std::size_t n = tokens.size();
  std::vector<std::string> joined;  // per position, '\n'-separated feature strings
  joined.assign(n, std::string{});
  auto add = [&](std::size_t i, std::string_view f) {
    joined[i].append(f);
    joined[i].push_back('\n');
  };

  for (std::size_t i = 0; i < n; ++i) {
    const auto& tok = tokens[i];
    add(i, "b");
    add(i, "w=" + tok);
    if (config_.use_shape) {
      add(i, "s=" + shape_of(tok));
      if (is_numeral(tok)) add(i, "num");
    }
    if (config_.use_context) {
      add(i, "p=" + (i > 0 ? tokens[i - 1] : std::string("<s>")));
      add(i, "n=" + (i + 1 < n ? tokens[i + 1] : std::string("</s>")));
    }
    if (auto it = price_phrasings().find(tok); it != price_phrasings().end()) {
      add(i, (it->second == CmpOp::kLt || it->second == CmpOp::kLe) ? "op=lt" : "op=gt");
    }
  }

  if (config_.use_gazetteer) {
    // All gazetteer matches, plus a greedy leftmost-longest segmentation.
    std::vector<std::vector<std::pair<std::size_t, std::set<TagKind>>>> matches(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::string surface;
      for (std::size_t j = i; j < n && j - i < max_ngram_; ++j) {
        if (j > i) surface.push_back(' ');
        surface += tokens[j];
        auto it = gazetteer_.find(surface);
        if (it == gazetteer_.end()) continue;
        std::set<TagKind> kinds;
        for (const auto& entry : it->second) kinds.insert(entry.first);
        for (const auto& k : kinds) {
          add(i, "gB=" + k.name());
          for (std::size_t m = i + 1; m <= j; ++m) add(m, "gI=" + k.name());
        }
        matches[i].emplace_back(j + 1 - i, std::move(kinds));
      }
      if (matches[i].empty()) {
        for (const auto& variant : fold_variants(tokens[i])) {
          auto it = gazetteer_.find(variant);
          if (it == gazetteer_.end()) continue;
          for (const auto& entry : it->second) add(i, "fB=" + entry.first.name());
        }
      }
    }
    for (std::size_t i = 0; i < n;) {
      if (matches[i].empty()) {
        ++i;
        continue;
      }
      const auto& longest = matches[i].back();
      for (const auto& k : longest.second) {
        add(i, "lB=" + k.name());
        for (std::size_t m = i + 1; m < i + longest.first; ++m) add(m, "lI=" + k.name());
      }
      i += longest.first;
    }
  }
  return joined;
}

std::vector<std::vector<std::uint32_t>> ParserModel::features(
    std::span<const std::string> tokens, bool grow) {
  const auto names = feature_names(tokens);
  std::vector<std::vector<std::uint32_t>> out(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string_view all = names[i];
    while (!all.empty()) {
      const auto nl = all.find('\n');
      const std::string f(all.substr(0, nl));
      all.remove_prefix(nl + 1);
      auto it = feature_index_.find(f);
      if (it == feature_index_.end()) {
        if (!grow) continue;
        const auto id = static_cast<std::uint32_t>(feature_list_.size());
        it = feature_index_.emplace(f, id).first;
        feature_list_.push_back(f);
      }
      out[i].push_back(it->second);
    }
  }
  return out;
}

std::vector<std::vector<std::uint32_t>> ParserModel::features(
    std::span<const std::string> tokens) const {
  const auto names = feature_names(tokens);
  std::vector<std::vector<std::uint32_t>> out(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string_view all = names[i];
    while (!all.empty()) {
      const auto nl = all.find('\n');
      auto it = feature_index_.find(std::string(all.substr(0, nl)));
      all.remove_prefix(nl + 1);
      if (it != feature_index_.end()) out[i].push_back(it->second);
    }
  }
  return out;
}

DecodeInput ParserModel::score(std::span<const std::string> tokens) const {
  const auto feats = features(tokens);
  const std::size_t L = labels_.size();
  DecodeInput input;
  input.transition = transition_;
  input.emission.assign(tokens.size(), std::vector<double>(L, 0.0));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (auto f : feats[t]) {
      const double* row = &emission_[static_cast<std::size_t>(f) * L];
      for (std::size_t l = 0; l < L; ++l) input.emission[t][l] += row[l];
    }
  }
  return input;
}

// --- interpretation -------------------------------------------------------------------

const std::set<std::pair<TagKind, std::string>>* ParserModel::gazetteer_lookup(
    std::string_view surface) const {
  auto it = gazetteer_.find(surface);
  return it == gazetteer_.end() ? nullptr : &it->second;
}

double ParserModel::calibrate(double margin) const {
  if (calibration_.empty()) return 1.0;
  for (const auto& bin : calibration_) {
    if (margin <= bin.upper_margin) return std::clamp(bin.confidence, 0.0, 1.0);
  }
  return std::clamp(calibration_.back().confidence, 0.0, 1.0);
}

ParseOutcome ParserModel::interpret(std::vector<std::string> tokens, const DecodeInput& scores,
                                    const DecodeResult& decoded) const {
  const std::size_t n = tokens.size();
  std::vector<std::string> names(n);
  for (std::size_t t = 0; t < n; ++t) names[t] = labels_.name(decoded.labels[t]);

  struct Candidate {
    Atom atom;
    double score;
    std::vector<std::size_t> token_ids;
  };
  std::vector<Candidate> candidates;
  std::vector<std::string> warnings;
  auto emission_of = [&](std::size_t t) { return scores.emission[t][decoded.labels[t]]; };

  for (std::size_t i = 0; i < n;) {
    const auto& label = names[i];
    if (!starts_with(label, "B-")) {
      ++i;
      continue;
    }
    const TagKind kind(label.substr(2));
    std::size_t j = i + 1;
    while (j < n && names[j] == "I-" + kind.name()) ++j;
    std::vector<std::string> span_tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                         tokens.begin() + static_cast<std::ptrdiff_t>(j));
    const auto surface = join_tokens(span_tokens);
    std::optional<std::string> value;
    auto resolve = [&](std::string_view s) {
      if (const auto* entries = gazetteer_lookup(s)) {
        for (const auto& [k, v] : *entries) {
          if (k == kind) {
            value = v;
            return;
          }
        }
      }
    };
    resolve(surface);
    if (!value) {
      const auto head = join_tokens(std::span(span_tokens).first(span_tokens.size() - 1));
      for (const auto& variant : fold_variants(span_tokens.back())) {
        resolve(head.empty() ? variant : head + " " + variant);
        if (value) break;
      }
    }
    if (!value) {
      warnings.push_back("span '" + surface + "' tagged " + kind.name() +
                         " matches no known value; ignored");
    } else {
      Candidate c{Predicate{kind, *value}, 0.0, {}};
      for (std::size_t t = i; t < j; ++t) {
        c.score += emission_of(t);
        c.token_ids.push_back(t);
      }
      candidates.push_back(std::move(c));
    }
    i = j;
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t pending_op = kNone;
  for (std::size_t t = 0; t < n; ++t) {
    if (names[t] == kOpLt || names[t] == kOpGt) {
      if (pending_op != kNone) warnings.push_back("comparison phrase '" + tokens[pending_op] + "' has no number");
      pending_op = t;
    } else if (names[t] == kNum) {
      if (pending_op == kNone || !is_numeral(tokens[t])) {
        warnings.push_back("number '" + tokens[t] + "' has no comparison phrase; ignored");
        continue;
      }
      CmpOp op = names[pending_op] == kOpLt ? CmpOp::kLt : CmpOp::kGt;
      if (auto it = price_phrasings().find(tokens[pending_op]); it != price_phrasings().end()) {
        op = it->second;
      }
      candidates.push_back({Comparison{kPrice, op, parse_numeral(tokens[t])},
                            emission_of(pending_op) + emission_of(t),
                            {pending_op, t}});
      pending_op = kNone;
    }
  }
  if (pending_op != kNone) warnings.push_back("comparison phrase '" + tokens[pending_op] + "' has no number");

  // At most one atom per kind: keep the higher-scoring span.
  std::vector<Candidate> kept;
  for (auto& c : candidates) {
    auto clash = std::find_if(kept.begin(), kept.end(), [&](const Candidate& k) {
      return atom_kind(k.atom) == atom_kind(c.atom);
    });
    if (clash == kept.end()) {
      kept.push_back(std::move(c));
      continue;
    }
    const bool replace = c.score > clash->score;
    const auto& dropped = replace ? *clash : c;
    warnings.push_back("duplicate " + atom_kind(c.atom).name() + " span dropped: " +
                       progsearch::to_string(dropped.atom));
    if (replace) *clash = std::move(c);
  }

  if (kept.empty()) {
    return ParseFailure{"no span resolves to a known attribute value", std::move(tokens),
                        std::move(names)};
  }

  std::vector<Atom> atoms;
  for (const auto& k : kept) atoms.push_back(k.atom);
  ParseResult result;
  result.form = LogicalForm(atoms);
  const auto form_atoms = result.form.atoms();
  for (const auto& k : kept) {
    const auto& kind = atom_kind(k.atom);
    std::size_t a = 0;
    while (atom_kind(form_atoms[a]) != kind) ++a;
    for (auto t : k.token_ids) result.alignment.emplace_back(t, a);
  }
  std::sort(result.alignment.begin(), result.alignment.end());
  result.margin = decoded.second == kNegInf ? std::numeric_limits<double>::max()
                                            : decoded.best - decoded.second;
  result.confidence = calibrate(result.margin);
  result.tokens = std::move(tokens);
  result.labels = std::move(names);
  result.warnings = std::move(warnings);
  return result;
}

ParseOutcome ParserModel::parse(std::string_view query) const {
  auto tokens = tokenize(query);
  if (tokens.empty()) throw Error(ErrorCode::kInput, "query is empty after normalization");
  if (labels_.size() == 0) throw Error(ErrorCode::kUnavailable, "parser model is not trained");
  const auto scores = score(tokens);
  const auto decoded = viterbi_2best(scores, labels_);
  return interpret(std::move(tokens), scores, decoded);
}

// --- training -------------------------------------------------------------------------

namespace {

std::vector<CalibrationBin> fit_calibration(std::vector<std::pair<double, bool>> samples) {
  std::vector<CalibrationBin> bins;
  if (samples.empty()) return bins;
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second < b.second;
  });
  const std::size_t count = std::min<std::size_t>(10, samples.size());
  std::vector<double> accuracy(count), weight(count);
  std::vector<double> upper(count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t lo = b * samples.size() / count;
    const std::size_t hi = (b + 1) * samples.size() / count;
    double correct = 0;
    for (std::size_t i = lo; i < hi; ++i) correct += samples[i].second ? 1.0 : 0.0;
    weight[b] = static_cast<double>(hi - lo);
    accuracy[b] = correct / weight[b];
    upper[b] = samples[hi - 1].first;
  }
  upper.back() = std::numeric_limits<double>::infinity();

  // Pool adjacent violators so the step table is non-decreasing.
  struct Block {
    double value, weight;
    std::size_t first, last;
  };
  std::vector<Block> blocks;
  for (std::size_t b = 0; b < count; ++b) {
    blocks.push_back({accuracy[b], weight[b], b, b});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value > blocks.back().value) {
      auto top = blocks.back();
      blocks.pop_back();
      auto& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.value = (prev.value * prev.weight + top.value * top.weight) / w;
      prev.weight = w;
      prev.last = top.last;
    }
  }
  for (const auto& block : blocks) {
    for (std::size_t b = block.first; b <= block.last; ++b) {
      bins.push_back({upper[b], block.value});
    }
  }
  return bins;
}

}  // namespace

ParserModel train(std::span<const SynthTriple> triples, const KnowledgeBase& kb,
                  const TrainingConfig& config, TrainReport* report) {
  if (triples.empty()) throw Error(ErrorCode::kInput, "cannot train on an empty dataset");

  ParserModel model;
  model.config_ = config;
  model.labels_ = LabelSet(kb.schema());
  model.schema_fingerprint_ = kb.fingerprint();
  model.dataset_hash_ = dataset_hash(triples);
  const std::size_t L = model.labels_.size();

  // Gold sequences first, so degenerate data fails before any work.
  std::vector<std::vector<std::string>> token_seqs;
  std::vector<std::vector<std::size_t>> gold;
  std::set<std::size_t> distinct;
  for (const auto& t : triples) {
    token_seqs.push_back(tokenize(t.query));
    std::vector<std::size_t> ids;
    for (const auto& name : gold_labels(t)) {
      auto id = model.labels_.find(name);
      if (!id) throw Error(ErrorCode::kInput, "label " + name + " is not in the schema label set");
      ids.push_back(*id);
      distinct.insert(*id);
    }
    gold.push_back(std::move(ids));
  }
  if (distinct.size() < 2) {
    throw Error(ErrorCode::kInput, "degenerate training data: every token has the same label");
  }

  // Gazetteer: knowledge-base vocabularies plus surfaces seen in training.
  for (const auto& kind : kb.schema().kinds()) {
    if (kind.numeric()) continue;
    for (const auto& value : kb.vocabulary(kind)) {
      const auto surface = surface_form(value);
      if (!surface.empty()) model.gazetteer_[surface].insert({kind, value});
    }
  }
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto atoms = triples[i].form.atoms();
    std::map<std::size_t, std::vector<std::size_t>> tokens_of_atom;
    for (const auto& [t, a] : triples[i].alignment) tokens_of_atom[a].push_back(t);
    for (const auto& [a, ts] : tokens_of_atom) {
      const auto* p = std::get_if<Predicate>(&atoms[a]);
      if (!p) continue;
      std::vector<std::string> parts;
      for (auto t : ts) parts.push_back(token_seqs[i][t]);
      model.gazetteer_[join_tokens(parts)].insert({p->kind, p->value});
    }
  }
  for (const auto& [surface, _] : model.gazetteer_) {
    model.max_ngram_ = std::max(model.max_ngram_, tokenize(surface).size());
  }

  // Reserve a calibration split.
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  rng.shuffle(order);
  auto calib_count = static_cast<std::size_t>(
      std::floor(config.calibration_fraction * static_cast<double>(triples.size())));
  if (calib_count >= triples.size()) calib_count = 0;
  std::vector<std::size_t> calib(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(calib_count));
  std::vector<std::size_t> train_ids(order.begin() + static_cast<std::ptrdiff_t>(calib_count), order.end());

  std::vector<std::vector<std::vector<std::uint32_t>>> feats(triples.size());
  for (auto i : train_ids) feats[i] = model.features(token_seqs[i], true);
  const std::size_t F = model.feature_list_.size();

  std::vector<double> w(F * L, 0.0), w_acc(F * L, 0.0);
  std::vector<std::vector<double>> tr(L + 1, std::vector<double>(L, 0.0));
  auto tr_acc = tr;
  double c = 1.0;
  TrainReport rep;
  rep.train_examples = train_ids.size();
  rep.calibration_examples = calib.size();

  auto emission_for = [&](const std::vector<std::vector<std::uint32_t>>& fs) {
    DecodeInput input;
    input.transition = tr;
    input.emission.assign(fs.size(), std::vector<double>(L, 0.0));
    for (std::size_t t = 0; t < fs.size(); ++t) {
      for (auto f : fs[t]) {
        for (std::size_t l = 0; l < L; ++l) input.emission[t][l] += w[f * L + l];
      }
    }
    return input;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train_ids);
    std::size_t mistakes = 0;
    for (auto i : train_ids) {
      const auto& fs = feats[i];
      const auto& y = gold[i];
      const auto decoded = viterbi_2best(emission_for(fs), model.labels_);
      if (decoded.labels != y) {
        ++mistakes;
        const auto& z = decoded.labels;
        for (std::size_t t = 0; t < y.size(); ++t) {
          if (y[t] != z[t]) {
            for (auto f : fs[t]) {
              w[f * L + y[t]] += 1.0;
              w_acc[f * L + y[t]] += c;
              w[f * L + z[t]] -= 1.0;
              w_acc[f * L + z[t]] -= c;
            }
          }
          const std::size_t py = t ? y[t - 1] : L;
          const std::size_t pz = t ? z[t - 1] : L;
          if (py != pz || y[t] != z[t]) {
            tr[py][y[t]] += 1.0;
            tr_acc[py][y[t]] += c;
            tr[pz][z[t]] -= 1.0;
            tr_acc[pz][z[t]] -= c;
          }
        }
      }
      c += 1.0;
    }
    rep.epoch_mistakes.push_back(mistakes);
    if (mistakes == 0) break;
  }

  model.emission_.resize(F * L);
  for (std::size_t k = 0; k < F * L; ++k) model.emission_[k] = w[k] - w_acc[k] / c;
  model.transition_ = tr;
  for (std::size_t p = 0; p <= L; ++p) {
    for (std::size_t l = 0; l < L; ++l) {
      // Inadmissible transitions stay at zero; the decoder never takes them.
      model.transition_[p][l] = tr[p][l] - tr_acc[p][l] / c;
    }
  }

  // Confidence table from margins on the reserved split (or the training
  // data itself when the dataset is too small to reserve any).
  const auto& calib_ids = calib.empty() ? train_ids : calib;
  std::vector<std::pair<double, bool>> samples;
  std::size_t correct = 0;
  for (auto i : calib_ids) {
    const auto scores = model.score(token_seqs[i]);
    const auto decoded = viterbi_2best(scores, model.labels_);
    auto outcome = model.interpret(token_seqs[i], scores, decoded);
    const double margin = decoded.second == kNegInf ? std::numeric_limits<double>::max()
                                                    : decoded.best - decoded.second;
    const auto* parsed = std::get_if<ParseResult>(&outcome);
    const bool ok = parsed && parsed->form == triples[i].form;
    correct += ok ? 1 : 0;
    samples.emplace_back(margin, ok);
  }
  rep.calibration_exact_match =
      calib_ids.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(calib_ids.size());
  model.calibration_ = fit_calibration(std::move(samples));
  if (report) *report = std::move(rep);
  return model;
}

std::pair<std::vector<SynthTriple>, std::vector<SynthTriple>> split_dataset(
    std::span<const SynthTriple> triples, double heldout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const auto held = static_cast<std::size_t>(
      std::ceil(heldout_fraction * static_cast<double>(triples.size())));
  std::vector<SynthTriple> train_set, heldout;
  std::set<std::string> held_queries;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k < held) {
      heldout.push_back(triples[order[k]]);
      held_queries.insert(triples[order[k]].query);
    }
  }
  for (std::size_t k = held; k < order.size(); ++k) {
    if (!held_queries.count(triples[order[k]].query)) train_set.push_back(triples[order[k]]);
  }
  return {std::move(train_set), std::move(heldout)};
}

// --- evaluation ------------------------------------------------------------------------

ParserMetrics evaluate(const ParserModel& model, std::span<const SynthTriple> heldout) {
  if (heldout.empty()) throw Error(ErrorCode::kInput, "cannot evaluate on an empty heldout set");
  ParserMetrics m;
  m.examples = heldout.size();
  std::size_t exact = 0, failures = 0;
  for (const auto& t : heldout) {
    std::optional<LogicalForm> predicted;
    try {
      auto outcome = model.parse(t.query);
      if (auto* r = std::get_if<ParseResult>(&outcome)) predicted = r->form;
    } catch (const Error&) {
    }
    if (!predicted) ++failures;
    if (predicted && *predicted == t.form) ++exact;

    std::map<TagKind, std::string> gold_atoms, pred_atoms;
    for (const auto& a : t.form.atoms()) gold_atoms[atom_kind(a)] = to_string(a);
    if (predicted) {
      for (const auto& a : predicted->atoms()) pred_atoms[atom_kind(a)] = to_string(a);
    }
    for (const auto& [kind, atom] : gold_atoms) {
      auto& s = m.per_kind[kind];
      auto it = pred_atoms.find(kind);
      if (it != pred_atoms.end() && it->second == atom) {
        ++s.true_positive;
      } else {
        ++s.false_negative;
        if (it != pred_atoms.end()) ++s.false_positive;
      }
    }
    for (const auto& [kind, atom] : pred_atoms) {
      if (!gold_atoms.count(kind)) ++m.per_kind[kind].false_positive;
    }
  }
  const auto n = static_cast<double>(heldout.size());
  m.exact_match = static_cast<double>(exact) / n;
  m.failure_rate = static_cast<double>(failures) / n;
  for (auto& [kind, s] : m.per_kind) {
    const double tp = static_cast<double>(s.true_positive);
    s.precision = s.true_positive + s.false_positive ? tp / static_cast<double>(s.true_positive + s.false_positive) : 0.0;
    s.recall = s.true_positive + s.false_negative ? tp / static_cast<double>(s.true_positive + s.false_negative) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  }
  return m;
}

// --- shuffled copy ----------------------------------------------------------------------

ParserModel ParserModel::shuffled_labels(std::uint64_t seed) const {
  ParserModel copy = *this;
  const std::size_t L = labels_.size();
  if (L < 2) return copy;
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  auto has_fixed_point = [&] {
    for (std::size_t l = 0; l < L; ++l) {
      if (perm[l] == l) return true;
    }
    return false;
  };
  do {
    rng.shuffle(perm);
  } while (has_fixed_point());
  const std::size_t F = feature_list_.size();
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t l = 0; l < L; ++l) copy.emission_[f * L + perm[l]] = emission_[f * L + l];
  }
  return copy;
}

// --- serialization ------------------------------------------------------------------------

std::string ParserModel::to_json() const {
  json j;
  j["format"] = "progsearch-parser/1";
  j["schema_fingerprint"] = schema_fingerprint_;
  j["dataset_hash"] = dataset_hash_;
  j["training"] = {{"seed", config_.seed},
                   {"epochs", config_.epochs},
                   {"calibration_fraction", config_.calibration_fraction},
                   {"use_gazetteer", config_.use_gazetteer},
                   {"use_context", config_.use_context},
                   {"use_shape", config_.use_shape}};
  j["labels"] = labels_.names();
  j["features"] = feature_list_;
  const std::size_t L = labels_.size();
  json emission = json::array();
  for (std::size_t k = 0; k < emission_.size(); ++k) {
    if (emission_[k] != 0.0) emission.push_back({k / L, k % L, emission_[k]});
  }
  j["emission"] = std::move(emission);
  j["transition"] = transition_;
  json gazetteer = json::array();
  for (const auto& [surface, entries] : gazetteer_) {
    for (const auto& [kind, value] : entries) {
      gazetteer.push_back({{"surface", surface}, {"kind", kind.name()}, {"value", value}});
    }
  }
  j["gazetteer"] = std::move(gazetteer);
  json calibration = json::array();
  for (const auto& bin : calibration_) {
    calibration.push_back({std::isinf(bin.upper_margin) ? json(nullptr) : json(bin.upper_margin),
                           bin.confidence});
  }
  j["calibration"] = std::move(calibration);
  return j.dump();
}

ParserModel ParserModel::from_json(std::string_view text, std::string_view expected_fingerprint) {
  ParserModel m;
  try {
    auto j = json::parse(text);
    if (j.value("format", std::string{}) != "progsearch-parser/1") {
      throw Error(ErrorCode::kInput, "not a parser model file");
    }
    m.schema_fingerprint_ = j.at("schema_fingerprint").get<std::string>();
    if (!expected_fingerprint.empty() && m.schema_fingerprint_ != expected_fingerprint) {
      throw Error(ErrorCode::kMismatch, "parser model schema fingerprint " + m.schema_fingerprint_ +
                                            " does not match knowledge base " +
                                            std::string(expected_fingerprint));
    }
    m.dataset_hash_ = j.at("dataset_hash").get<std::string>();
    const auto& tc = j.at("training");
    m.config_.seed = tc.at("seed").get<std::uint64_t>();
    m.config_.epochs = tc.at("epochs").get<std::size_t>();
    m.config_.calibration_fraction = tc.at("calibration_fraction").get<double>();
    m.config_.use_gazetteer = tc.at("use_gazetteer").get<bool>();
    m.config_.use_context = tc.at("use_context").get<bool>();
    m.config_.use_shape = tc.at("use_shape").get<bool>();
    m.labels_ = LabelSet(j.at("labels").get<std::vector<std::string>>());
    m.feature_list_ = j.at("features").get<std::vector<std::string>>();
    for (std::uint32_t f = 0; f < m.feature_list_.size(); ++f) m.feature_index_[m.feature_list_[f]] = f;
    const std::size_t L = m.labels_.size();
    m.emission_.assign(m.feature_list_.size() * L, 0.0);
    for (const auto& e : j.at("emission")) {
      m.emission_.at(e.at(0).get<std::size_t>() * L + e.at(1).get<std::size_t>()) = e.at(2).get<double>();
    }
    m.transition_ = j.at("transition").get<std::vector<std::vector<double>>>();
    if (m.transition_.size() != L + 1) throw Error(ErrorCode::kInput, "transition table has wrong shape");
    for (const auto& g : j.at("gazetteer")) {
      m.gazetteer_[g.at("surface").get<std::string>()].insert(
          {TagKind(g.at("kind").get<std::string>()), g.at("value").get<std::string>()});
    }
    for (const auto& [surface, _] : m.gazetteer_) {
      m.max_ngram_ = std::max(m.max_ngram_, tokenize(surface).size());
    }
    for (const auto& b : j.at("calibration")) {
      const double upper =
          b.at(0).is_null() ? std::numeric_limits<double>::infinity() : b.at(0).get<double>();
      m.calibration_.push_back({upper, b.at(1).get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("malformed parser model: ") + e.what());
  }
  return m;
}

void ParserModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  out << to_json() << '\n';
}

ParserModel ParserModel::load(const std::filesystem::path& path,
                              std::string_view expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "model file not found: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str(), expected_fingerprint);
}

}  // namespace progsearch
