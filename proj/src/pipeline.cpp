#include "progsearch/pipeline.hpp"

#include "progsearch/error.hpp"

namespace progsearch {

EngineParts Pipeline::parts() const {
  EngineParts p;
  p.kb = kb;
  p.index = index;
  p.model = model;
  p.router = config.router;
  p.fallback = config.fallback;
  p.weights = config.weights;
  p.templates = config.templates;
  if (kb && !config.signal_column.empty()) {
    p.signals = std::make_shared<SignalTable>(signals_from_column(*kb, config.signal_column));
  }
  return p;
}

Pipeline build_index(const PipelineConfig& config, const Catalog& catalog,
                     const ModelRegistry& models) {
  Pipeline p;
  p.config = config;
  auto kb = std::make_shared<KnowledgeBase>(
      extract_tags(catalog, config.schema(), config.strategies, models, &p.extraction));
  p.kb = kb;
  p.index = std::make_shared<SparseIndex>(index_text(*kb, config.router.fields));
  p.warnings = p.extraction.warnings;
  return p;
}

void build_generation(Pipeline& p) {
  if (p.config.productions.empty()) throw Error(ErrorCode::kConfig, "config has no grammar productions");
  auto generator = std::make_shared<Generator>(compile_grammar(p.config.productions, p.kb));
  p.generator = generator;
  for (const auto& w : generator->warnings()) p.warnings.push_back(w);
  const auto& g = p.config.generation;
  auto triples = generate_triples(*generator, g.count, g.seed, g.policy);
  p.triples = augment_synonyms(triples, p.config.synonyms, *p.kb, &p.augment);
  std::tie(p.train_set, p.heldout) = split_dataset(p.triples, g.heldout_fraction, g.seed);
}

void build_parser(Pipeline& p) {
  const auto& data = p.train_set.empty() ? p.triples : p.train_set;
  p.model = std::make_shared<ParserModel>(train(data, *p.kb, p.config.training, &p.train_report));
}

Pipeline build_pipeline(const PipelineConfig& config, const Catalog& catalog,
                        const ModelRegistry& models) {
  auto p = build_index(config, catalog, models);
  build_generation(p);
  if (config.train_parser) build_parser(p);
  return p;
}

}  // namespace progsearch
