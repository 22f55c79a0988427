#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "progsearch/catalog.hpp"
#include "progsearch/evalharness.hpp"
#include "progsearch/pipeline.hpp"

namespace support {

using namespace progsearch;

inline std::filesystem::path source_dir() { return PROGSEARCH_SOURCE_DIR; }

/// 1,000-product fixture, seed 7, trained parser. Built once per binary.
inline const Pipeline& fixture_pipeline() {
  static const Pipeline pipeline = [] {
    FixtureSpec spec;
    return build_pipeline(fixture_config(spec), make_fixture_catalog(spec, 7));
  }();
  return pipeline;
}

inline const KnowledgeBase& fixture_kb() { return *fixture_pipeline().kb; }

/// Knowledge base straight from hand-written products.
inline KnowledgeBase make_kb(std::vector<Product> products, TagSchema schema = TagSchema::standard()) {
  return KnowledgeBase(std::move(products), std::move(schema));
}

inline Product product(std::string sku, std::map<TagKind, std::set<std::string>> tags,
                       std::optional<double> price = std::nullopt, std::string title = {}) {
  Product p;
  p.sku = std::move(sku);
  p.tags = std::move(tags);
  p.price = price;
  if (!title.empty()) p.raw["Title"] = std::move(title);
  return p;
}

}  // namespace support

namespace doctest {
template <>
struct StringMaker<progsearch::LogicalForm> {
  static String convert(const progsearch::LogicalForm& f) { return f.to_string().c_str(); }
};
template <>
struct StringMaker<std::vector<std::string>> {
  static String convert(const std::vector<std::string>& v) {
    std::string s = "[";
    for (const auto& x : v) s += x + ",";
    return (s + "]").c_str();
  }
};
}  // namespace doctest
