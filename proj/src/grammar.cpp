#include "progsearch/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "progsearch/error.hpp"
#include "progsearch/text.hpp"

namespace progsearch {

using nlohmann::json;

const std::map<std::string, CmpOp, std::less<>>& price_phrasings() {
  static const std::map<std::string, CmpOp, std::less<>> kTable = {
      {"under", CmpOp::kLt}, {"below", CmpOp::kLt}, {"over", CmpOp::kGt}, {"above", CmpOp::kGt}};
  return kTable;
}

// --- production file --------------------------------------------------------------

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

LiteralElement parse_literal(std::string token, std::size_t line_no) {
  LiteralElement lit;
  if (token.size() > 1 && token.back() == '?') {
    lit.optional = true;
    token.pop_back();
  }
  std::size_t start = 0;
  while (start <= token.size()) {
    auto end = token.find('|', start);
    if (end == std::string::npos) end = token.size();
    const auto alt = token.substr(start, end - start);
    const auto toks = tokenize(alt);
    if (toks.size() != 1 || toks.front() != to_lower(alt)) {
      throw Error(ErrorCode::kInput, "production line " + std::to_string(line_no) +
                                         ": literal '" + alt + "' is not a single token");
    }
    lit.alternatives.push_back(toks.front());
    start = end + 1;
  }
  return lit;
}

}  // namespace

std::vector<Production> parse_productions(std::string_view text) {
  std::vector<Production> out;
  std::set<std::string> names;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;

    Production production;
    if (tokens.front().size() > 1 && tokens.front().back() == ':') {
      production.name = tokens.front().substr(0, tokens.front().size() - 1);
      tokens.erase(tokens.begin());
    }
    std::set<TagKind> kinds;
    for (auto& token : tokens) {
      if (token.size() > 2 && token.front() == '[' && token.back() == ']') {
        const TagKind kind(token.substr(1, token.size() - 2));
        if (!kinds.insert(kind).second) {
          throw Error(ErrorCode::kInput, "production line " + std::to_string(line_no) +
                                             ": more than one slot for " + kind.name());
        }
        if (!kind.numeric()) {
          production.elements.push_back(SlotElement{kind});
          continue;
        }
        auto* lit = production.elements.empty()
                        ? nullptr
                        : std::get_if<LiteralElement>(&production.elements.back());
        if (!lit || lit->optional) {
          throw Error(ErrorCode::kInput, "production line " + std::to_string(line_no) +
                                             ": [" + kind.name() +
                                             "] must follow a comparison phrase (under, over...)");
        }
        PriceSlotElement slot;
        std::set<CmpOp> ops;
        for (const auto& alt : lit->alternatives) {
          auto it = price_phrasings().find(alt);
          if (it == price_phrasings().end()) {
            throw Error(ErrorCode::kInput, "production line " + std::to_string(line_no) +
                                               ": '" + alt + "' is not a comparison phrase");
          }
          ops.insert(it->second);
          slot.phrasings.push_back(alt);
        }
        if (ops.size() != 1) {
          throw Error(ErrorCode::kInput, "production line " + std::to_string(line_no) +
                                             ": phrasings of one price slot disagree on the operator");
        }
        slot.op = *ops.begin();
        production.elements.back() = std::move(slot);
      } else {
        production.elements.push_back(parse_literal(token, line_no));
      }
    }
    if (production.name.empty()) production.name = to_line(production);
    std::string unique = production.name;
    for (int k = 2; names.count(unique); ++k) unique = production.name + "#" + std::to_string(k);
    production.name = unique;
    names.insert(unique);
    out.push_back(std::move(production));
  }
  return out;
}

std::vector<Production> load_productions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "production file not found: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_productions(buffer.str());
}

std::string to_line(const Production& production) {
  std::string out;
  auto append = [&out](const std::string& piece) {
    if (!out.empty()) out += ' ';
    out += piece;
  };
  for (const auto& element : production.elements) {
    if (const auto* s = std::get_if<SlotElement>(&element)) {
      append("[" + s->kind.name() + "]");
    } else if (const auto* l = std::get_if<LiteralElement>(&element)) {
      append(join_tokens(l->alternatives, "|") + (l->optional ? "?" : ""));
    } else {
      const auto& p = std::get<PriceSlotElement>(element);
      append(join_tokens(p.phrasings, "|"));
      append("[" + kPrice.name() + "]");
    }
  }
  return out;
}

// --- compilation ------------------------------------------------------------------

std::vector<double> price_bounds(const KnowledgeBase& kb) {
  std::vector<double> prices;
  for (const auto& p : kb.products()) {
    if (p.price) prices.push_back(*p.price);
  }
  if (prices.empty()) return {};
  std::sort(prices.begin(), prices.end());
  std::vector<double> bounds;
  for (double q : {0.25, 0.5, 0.75, 0.9}) {
    // Linear interpolation between closest ranks.
    const double pos = q * static_cast<double>(prices.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, prices.size() - 1);
    const double v = prices[lo] + (pos - static_cast<double>(lo)) * (prices[hi] - prices[lo]);
    const double rounded = round_significant(v, 2);
    if (rounded > 0 && std::find(bounds.begin(), bounds.end(), rounded) == bounds.end()) {
      bounds.push_back(rounded);
    }
  }
  std::sort(bounds.begin(), bounds.end());
  return bounds;
}

Generator::Generator(std::vector<CompiledProduction> productions,
                     std::shared_ptr<const KnowledgeBase> kb, std::vector<std::string> warnings)
    : productions_(std::move(productions)), kb_(std::move(kb)), warnings_(std::move(warnings)) {}

std::uint64_t Generator::space_size() const {
  std::uint64_t total = 0;
  for (const auto& p : productions_) total += p.space;
  return total;
}

Generator compile_grammar(std::span<const Production> productions,
                          std::shared_ptr<const KnowledgeBase> kb) {
  if (!kb) throw Error(ErrorCode::kInternal, "compile_grammar without a knowledge base");
  std::vector<CompiledProduction> compiled;
  std::vector<std::string> warnings;
  const auto bounds = price_bounds(*kb);

  for (const auto& production : productions) {
    CompiledProduction cp{production, {}, 1};
    std::string disabled;
    std::size_t sortals = 0;
    for (const auto& element : production.elements) {
      std::vector<std::string> domain;
      if (const auto* s = std::get_if<SlotElement>(&element)) {
        if (s->kind == kSortal) ++sortals;
        if (!kb->schema().has(s->kind)) {
          disabled = "kind " + s->kind.name() + " is not in the schema";
          break;
        }
        const auto& vocab = kb->vocabulary(s->kind);
        domain.assign(vocab.begin(), vocab.end());
        if (domain.empty()) {
          disabled = "kind " + s->kind.name() + " has an empty vocabulary";
          break;
        }
      } else if (const auto* l = std::get_if<LiteralElement>(&element)) {
        domain = l->alternatives;
        if (l->optional) domain.insert(domain.begin(), std::string{});
      } else {
        const auto& p = std::get<PriceSlotElement>(element);
        if (bounds.empty()) {
          disabled = "no product carries a price";
          break;
        }
        for (const auto& phrase : p.phrasings) {
          for (double b : bounds) domain.push_back(phrase + " " + format_number(b));
        }
      }
      if (cp.space > std::numeric_limits<std::uint64_t>::max() / domain.size()) {
        disabled = "slot-filling space overflows";
        break;
      }
      cp.space *= domain.size();
      cp.domains.push_back(std::move(domain));
    }
    if (disabled.empty() && sortals > 1) disabled = "more than one SORTAL slot";
    if (!disabled.empty()) {
      warnings.push_back("production '" + production.name + "' disabled: " + disabled);
      continue;
    }
    compiled.push_back(std::move(cp));
  }
  if (compiled.empty()) {
    throw Error(ErrorCode::kConfig, "empty grammar: every production is disabled");
  }
  return Generator(std::move(compiled), std::move(kb), std::move(warnings));
}

SynthTriple Generator::realize(std::size_t production, std::uint64_t index) const {
  const auto& cp = productions_.at(production);
  std::vector<std::size_t> choice(cp.domains.size());
  for (std::size_t e = cp.domains.size(); e-- > 0;) {
    choice[e] = static_cast<std::size_t>(index % cp.domains[e].size());
    index /= cp.domains[e].size();
  }

  std::vector<std::string> tokens;
  std::vector<Atom> atoms;
  std::vector<std::pair<std::size_t, std::size_t>> raw_alignment;
  for (std::size_t e = 0; e < cp.domains.size(); ++e) {
    const auto& picked = cp.domains[e][choice[e]];
    const auto& element = cp.production.elements[e];
    if (const auto* s = std::get_if<SlotElement>(&element)) {
      const auto atom_index = atoms.size();
      atoms.push_back(Predicate{s->kind, picked});
      for (auto& t : tokenize(picked)) {
        raw_alignment.emplace_back(tokens.size(), atom_index);
        tokens.push_back(std::move(t));
      }
    } else if (std::holds_alternative<LiteralElement>(element)) {
      if (!picked.empty()) tokens.push_back(picked);
    } else {
      const auto& p = std::get<PriceSlotElement>(element);
      const auto space = picked.find(' ');
      const auto atom_index = atoms.size();
      atoms.push_back(Comparison{kPrice, p.op, parse_numeral(picked.substr(space + 1))});
      raw_alignment.emplace_back(tokens.size(), atom_index);
      tokens.push_back(picked.substr(0, space));
      raw_alignment.emplace_back(tokens.size(), atom_index);
      tokens.push_back(picked.substr(space + 1));
    }
  }

  SynthTriple triple;
  triple.form = LogicalForm(atoms);
  triple.query = join_tokens(tokens);
  triple.production = cp.production.name;
  for (const auto& [token, raw_atom] : raw_alignment) {
    const auto& kind = atom_kind(atoms[raw_atom]);
    const auto forms = triple.form.atoms();
    for (std::size_t a = 0; a < forms.size(); ++a) {
      if (atom_kind(forms[a]) == kind) triple.alignment.emplace_back(token, a);
    }
  }
  triple.golden = scan_evaluate(triple.form, *kb_);
  return triple;
}

// --- sampling ---------------------------------------------------------------------

namespace {

// Lazily materialized Fisher-Yates permutation of [0, size).
class SparsePermutation {
 public:
  explicit SparsePermutation(std::uint64_t size) : size_(size) {}

  bool exhausted() const { return drawn_ == size_; }

  std::uint64_t next(Rng& rng) {
    const std::uint64_t j = drawn_ + rng.uniform(size_ - drawn_);
    const std::uint64_t picked = at(j);
    swapped_[j] = at(drawn_);
    ++drawn_;
    return picked;
  }

 private:
  std::uint64_t at(std::uint64_t i) const {
    auto it = swapped_.find(i);
    return it == swapped_.end() ? i : it->second;
  }

  std::uint64_t size_;
  std::uint64_t drawn_ = 0;
  std::unordered_map<std::uint64_t, std::uint64_t> swapped_;
};

}  // namespace

std::vector<SynthTriple> generate_triples(const Generator& generator, std::size_t n,
                                          std::uint64_t seed, GenerationPolicy policy) {
  std::vector<SynthTriple> out;
  if (n == 0) return out;
  Rng rng(seed);
  std::vector<SparsePermutation> permutations;
  std::vector<std::size_t> active;
  for (std::size_t p = 0; p < generator.productions().size(); ++p) {
    permutations.emplace_back(generator.productions()[p].space);
    if (generator.productions()[p].space > 0) active.push_back(p);
  }
  std::unordered_set<std::string> seen;
  const auto& kb = generator.kb();

  while (out.size() < n && !active.empty()) {
    const auto slot = static_cast<std::size_t>(rng.uniform(active.size()));
    const auto p = active[slot];
    const auto index = permutations[p].next(rng);
    if (permutations[p].exhausted()) active.erase(active.begin() + static_cast<std::ptrdiff_t>(slot));

    auto triple = generator.realize(p, index);
    if (seen.count(triple.query)) continue;
    if (triple.golden.empty() && policy.mode == GenerationPolicy::Mode::kNonEmptyOnly) continue;
    if (policy.weight_by_golden) {
      std::size_t reference = kb.size();
      if (const auto* sortal = triple.form.sortal()) {
        reference = kb.postings(kSortal, sortal->value).size();
      }
      const double keep = reference == 0 ? 0.0
                                         : static_cast<double>(triple.golden.size()) /
                                               static_cast<double>(reference);
      if (rng.uniform01() >= keep) continue;
    }
    seen.insert(triple.query);
    out.push_back(std::move(triple));
  }
  return out;
}

// --- synonym augmentation -----------------------------------------------------------

std::vector<SynthTriple> augment_synonyms(
    std::span<const SynthTriple> triples,
    const std::map<std::string, std::vector<std::string>>& synonyms, const KnowledgeBase& kb,
    AugmentStats* stats) {
  AugmentStats local;
  AugmentStats& st = stats ? *stats : local;
  st = AugmentStats{};

  std::map<std::string, std::set<TagKind>, std::less<>> vocab_tokens;
  for (const auto& kind : kb.schema().kinds()) {
    if (kind.numeric()) continue;
    for (const auto& value : kb.vocabulary(kind)) {
      for (auto& t : tokenize(value)) vocab_tokens[t].insert(kind);
    }
  }

  std::map<std::string, std::vector<std::string>> table;
  for (const auto& [key, replacements] : synonyms) {
    auto& list = table[surface_form(key)];
    for (const auto& r : replacements) list.push_back(canonical_value(r));
  }

  std::unordered_set<std::string> seen;
  for (const auto& t : triples) seen.insert(t.query);

  std::vector<SynthTriple> out;
  out.reserve(triples.size());
  for (const auto& triple : triples) {
    out.push_back(triple);
    if (table.empty()) continue;
    const auto tokens = tokenize(triple.query);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto it = table.find(tokens[i]);
      if (it == table.end()) continue;
      for (const auto& replacement : it->second) {
        const auto rtoks = tokenize(replacement);
        if (rtoks.size() != 1 || vocab_tokens.count(rtoks.front())) {
          ++st.collisions;
          continue;
        }
        auto variant_tokens = tokens;
        variant_tokens[i] = rtoks.front();
        SynthTriple variant = triple;
        variant.query = join_tokens(variant_tokens);
        if (!seen.insert(variant.query).second) {
          ++st.duplicates;
          continue;
        }
        ++st.added;
        out.push_back(std::move(variant));
      }
    }
  }
  return out;
}

// --- dataset I/O -------------------------------------------------------------------

std::string to_json_line(const SynthTriple& triple) {
  json atoms = json::array();
  for (const auto& atom : triple.form.atoms()) {
    if (const auto* p = std::get_if<Predicate>(&atom)) {
      atoms.push_back({{"kind", p->kind.name()}, {"value", p->value}});
    } else {
      const auto& c = std::get<Comparison>(atom);
      atoms.push_back({{"attr", c.attribute.name()}, {"op", to_symbol(c.op)}, {"bound", c.bound}});
    }
  }
  json alignment = json::array();
  for (const auto& [t, a] : triple.alignment) alignment.push_back({t, a});
  json j = {{"query", triple.query},
            {"atoms", std::move(atoms)},
            {"golden", triple.golden},
            {"production", triple.production},
            {"alignment", std::move(alignment)}};
  return j.dump();
}

SynthTriple triple_from_json_line(std::string_view line) {
  try {
    auto j = json::parse(line);
    SynthTriple t;
    t.query = j.at("query").get<std::string>();
    std::vector<Atom> atoms;
    for (const auto& a : j.at("atoms")) {
      if (a.contains("kind")) {
        atoms.push_back(Predicate{TagKind(a.at("kind").get<std::string>()),
                                  a.at("value").get<std::string>()});
      } else {
        atoms.push_back(Comparison{TagKind(a.at("attr").get<std::string>()),
                                   cmp_op_from_symbol(a.at("op").get<std::string>()),
                                   a.at("bound").get<double>()});
      }
    }
    t.form = LogicalForm(std::move(atoms));
    t.golden = j.at("golden").get<std::vector<std::string>>();
    std::sort(t.golden.begin(), t.golden.end());
    t.production = j.value("production", std::string{});
    for (const auto& pair : j.at("alignment")) {
      t.alignment.emplace_back(pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>());
    }
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInput, std::string("malformed triple record: ") + e.what());
  }
}

void write_triples(const std::filesystem::path& path, std::span<const SynthTriple> triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  for (const auto& t : triples) out << to_json_line(t) << '\n';
}

std::vector<SynthTriple> read_triples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "dataset file not found: " + path.string());
  std::vector<SynthTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(triple_from_json_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::kInput, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string dataset_hash(std::span<const SynthTriple> triples) {
  std::uint64_t h = fnv1a("");
  for (const auto& t : triples) {
    h = fnv1a(to_json_line(t), h);
    h = fnv1a("\n", h);
  }
  return hex64(h);
}

}  // namespace progsearch
