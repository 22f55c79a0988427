#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/grammar.hpp"
#include "progsearch/parser.hpp"
#include "progsearch/synthesis.hpp"
#include "progsearch/vsm.hpp"

namespace progsearch {

struct SimilarityEntry {
  TagKind kind;
  std::string a;
  std::string b;
  double distance = 0.0;
};

struct GenerationConfig {
  std::size_t count = 10000;
  std::uint64_t seed = 7;
  GenerationPolicy policy;
  double heldout_fraction = 0.1;
};

struct SuggestConfig {
  /// Synthetic candidates generated for type-ahead (non-empty golden only).
  std::size_t synthetic = 2000;
  /// Share of the k slots offered to observed head queries when a log is
  /// uploaded; the rest go to synthetic entries.
  double head_share = 0.5;
};

/// The declarative configuration document (JSON). Paths are resolved
/// against `base_dir`, the directory of the file it was loaded from.
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::optional<std::filesystem::path> catalog;

  std::vector<TagKind> kinds;
  std::map<TagKind, std::vector<std::string>> vocab_seeds;
  std::vector<SimilarityEntry> similarity;
  std::vector<ExtractionStrategy> strategies;
  /// Model endpoint id -> URL (http://host:port/path), served by HTTP models.
  std::map<std::string, std::string> model_endpoints;

  std::vector<Production> productions;
  std::map<std::string, std::vector<std::string>> synonyms;
  GenerationConfig generation;
  TrainingConfig training;
  bool train_parser = true;

  FallbackPolicy fallback;
  RouterConfig router;
  RankingWeights weights;
  std::string signal_column = "Popularity";
  SuggestConfig suggest;
  ExplanationTemplates templates;

  TagSchema schema() const;
};

/// Throws Error(kConfig) with the offending key on malformed documents.
PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);
/// Short hash of the serialized config, used in report file names.
std::string config_hash(const PipelineConfig& config);

}  // namespace progsearch
