#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/grammar.hpp"
#include "progsearch/logical_form.hpp"

namespace progsearch {

/// Token label inventory: O, B-<KIND>/I-<KIND> per categorical kind, OP-LT,
/// OP-GT and NUM. Derived from the schema.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(const TagSchema& schema);
  explicit LabelSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  std::optional<std::size_t> find(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

  static constexpr std::size_t kOutside = 0;

  /// BIO constraint: I-K may only follow B-K or I-K. `prev` == size() means
  /// sequence start.
  bool allowed(std::size_t prev, std::size_t cur) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<bool>> allowed_;  // [(prev | start)][cur]
};

/// Gold label sequence for a triple, derived from its token alignment.
std::vector<std::string> gold_labels(const SynthTriple& triple);

// --- decoding ---------------------------------------------------------------------

/// Emission scores [position][label] plus transition scores
/// [prev label or start][label] for one sentence.
struct DecodeInput {
  std::vector<std::vector<double>> emission;
  std::vector<std::vector<double>> transition;  // (L + 1) x L, last row = start
};

struct DecodeResult {
  std::vector<std::size_t> labels;
  double best = 0.0;
  double second = 0.0;  // -infinity when only one sequence is admissible
};

/// Exact Viterbi decode keeping the two best scores per cell, so the margin
/// between the best and second-best full sequence is exact.
DecodeResult viterbi_2best(const DecodeInput& input, const LabelSet& labels);

double sequence_score(const DecodeInput& input, std::span<const std::size_t> labels);

// --- model ------------------------------------------------------------------------

struct TrainingConfig {
  std::uint64_t seed = 7;
  std::size_t epochs = 12;
  double calibration_fraction = 0.1;
  bool use_gazetteer = true;
  bool use_context = true;
  bool use_shape = true;
};

struct ParseResult {
  LogicalForm form;
  double confidence = 0.0;
  double margin = 0.0;
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
  /// (token index, atom index) for tokens that produced an atom.
  std::vector<std::pair<std::size_t, std::size_t>> alignment;
  std::vector<std::string> warnings;
};

struct ParseFailure {
  std::string reason;
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
};

using ParseOutcome = std::variant<ParseResult, ParseFailure>;

struct CalibrationBin {
  double upper_margin;  // bin covers margins <= upper_margin
  double confidence;
};

class ParserModel;

struct TrainReport {
  std::size_t train_examples = 0;
  std::size_t calibration_examples = 0;
  double calibration_exact_match = 0.0;
  std::vector<std::size_t> epoch_mistakes;
};

/// Structured-perceptron tagger (averaged) with a gazetteer of value
/// surfaces. Immutable once trained; parse() is safe to call concurrently.
class ParserModel {
 public:
  ParserModel() = default;

  ParseOutcome parse(std::string_view query) const;

  const LabelSet& labels() const { return labels_; }
  const std::string& schema_fingerprint() const { return schema_fingerprint_; }
  const std::string& dataset_hash() const { return dataset_hash_; }
  const TrainingConfig& config() const { return config_; }
  const std::vector<CalibrationBin>& calibration() const { return calibration_; }

  /// Monotone step map from decode margin to [0, 1].
  double calibrate(double margin) const;

  /// Gazetteer lookup: (kind, canonical value) pairs for a token surface.
  const std::set<std::pair<TagKind, std::string>>* gazetteer_lookup(std::string_view surface) const;

  /// Copy with emission weight columns permuted among labels (a deranged
  /// model for sanity comparisons).
  ParserModel shuffled_labels(std::uint64_t seed) const;

  /// Emission/transition scores the model assigns to a token sequence.
  DecodeInput score(std::span<const std::string> tokens) const;

  std::string to_json() const;
  /// Throws Error(kMismatch) when the stored schema fingerprint differs from
  /// `expected_fingerprint` (unless it is empty).
  static ParserModel from_json(std::string_view text, std::string_view expected_fingerprint = {});
  void save(const std::filesystem::path& path) const;
  static ParserModel load(const std::filesystem::path& path,
                          std::string_view expected_fingerprint = {});

 private:
  friend ParserModel train(std::span<const SynthTriple> triples, const KnowledgeBase& kb,
                           const TrainingConfig& config, TrainReport* report);

  std::vector<std::vector<std::uint32_t>> features(std::span<const std::string> tokens,
                                                   bool grow);
  std::vector<std::vector<std::uint32_t>> features(std::span<const std::string> tokens) const;
  std::vector<std::string> feature_names(std::span<const std::string> tokens) const;
  ParseOutcome interpret(std::vector<std::string> tokens, const DecodeInput& scores,
                         const DecodeResult& decoded) const;

  LabelSet labels_;
  std::unordered_map<std::string, std::uint32_t> feature_index_;
  std::vector<std::string> feature_list_;
  std::vector<double> emission_;                 // feature-major: [f * L + l]
  std::vector<std::vector<double>> transition_;  // (L + 1) x L
  std::map<std::string, std::set<std::pair<TagKind, std::string>>, std::less<>> gazetteer_;
  std::size_t max_ngram_ = 1;
  std::vector<CalibrationBin> calibration_;
  std::string schema_fingerprint_;
  std::string dataset_hash_;
  TrainingConfig config_;
};

/// Trains on `triples`, reserving config.calibration_fraction of them (after
/// a seeded shuffle) to fit the confidence table. Throws Error(kInput) on an
/// empty dataset or when every token carries the same label.
ParserModel train(std::span<const SynthTriple> triples, const KnowledgeBase& kb,
                  const TrainingConfig& config = {}, TrainReport* report = nullptr);

/// Seeded split into (train, heldout); heldout queries never occur in train.
std::pair<std::vector<SynthTriple>, std::vector<SynthTriple>> split_dataset(
    std::span<const SynthTriple> triples, double heldout_fraction, std::uint64_t seed);

struct SlotScores {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ParserMetrics {
  std::size_t examples = 0;
  double exact_match = 0.0;
  double failure_rate = 0.0;
  std::map<TagKind, SlotScores> per_kind;
};

/// Throws Error(kInput) on an empty heldout set.
ParserMetrics evaluate(const ParserModel& model, std::span<const SynthTriple> heldout);

}  // namespace progsearch
