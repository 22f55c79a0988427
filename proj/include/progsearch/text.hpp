#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace progsearch {

/// Shared tokenizer. Queries, generated training data, gazetteer surfaces and
/// BM25 documents all go through this function so that tokens are
/// byte-identical across the pipeline.
///
/// ASCII letters are lowercased; runs of letters/digits (and any non-ASCII
/// bytes) form tokens; every other byte separates tokens. A '.' between two
/// digits stays inside the token so "99.5" is a single numeral; a ',' there is
/// dropped as a thousands separator ("1,000" becomes "1000").
std::vector<std::string> tokenize(std::string_view text);

/// Tokens joined by single spaces.
std::string join_tokens(std::span<const std::string> tokens,
                        std::string_view sep = " ");

std::string to_lower(std::string_view text);
std::string to_upper(std::string_view text);
std::string trim(std::string_view text);

/// Lowercase, trim, collapse internal whitespace runs to one space.
std::string canonical_value(std::string_view text);

/// Tokenized surface of a value: tokenize() then join with single spaces.
std::string surface_form(std::string_view value);

bool is_numeral(std::string_view token);
double parse_numeral(std::string_view token);

/// Round to `digits` significant digits (2 -> 137.5 becomes 140).
double round_significant(double value, int digits);

/// Shortest decimal rendering that parses back to the same double;
/// integral values print without a fractional part.
std::string format_number(double value);

/// FNV-1a 64-bit.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Deterministic random source. std::mt19937_64's output sequence is fixed by
/// the standard; the distributions in <random> are not, so sampling helpers
/// are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform(std::uint64_t n);
  /// Uniform real in [0, 1).
  double uniform01();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace progsearch
