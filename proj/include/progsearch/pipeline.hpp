#pragma once

#include <memory>
#include <string>
#include <vector>

#include "progsearch/catalog.hpp"
#include "progsearch/config.hpp"
#include "progsearch/grammar.hpp"
#include "progsearch/parser.hpp"
#include "progsearch/vsm.hpp"

namespace progsearch {

/// Every artifact built from one catalog and one config document.
struct Pipeline {
  PipelineConfig config;
  std::shared_ptr<const KnowledgeBase> kb;
  ExtractionReport extraction;
  std::shared_ptr<const SparseIndex> index;
  std::shared_ptr<const Generator> generator;

  /// Generated (then synonym-augmented) triples and their seeded split.
  std::vector<SynthTriple> triples;
  AugmentStats augment;
  std::vector<SynthTriple> train_set;
  std::vector<SynthTriple> heldout;

  std::shared_ptr<const ParserModel> model;  // null when training is disabled
  TrainReport train_report;

  std::vector<std::string> warnings;

  EngineParts parts() const;
};

/// Extraction and indexing only.
Pipeline build_index(const PipelineConfig& config, const Catalog& catalog,
                     const ModelRegistry& models = {});

/// Adds grammar compilation, generation, augmentation, the split and (when
/// config.train_parser) training.
Pipeline build_pipeline(const PipelineConfig& config, const Catalog& catalog,
                        const ModelRegistry& models = {});

void build_generation(Pipeline& pipeline);
void build_parser(Pipeline& pipeline);

}  // namespace progsearch
