#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace progsearch {

/// Attribute kind name, stored uppercase. PRICE is the only numeric kind.
class TagKind {
 public:
  TagKind() = default;
  explicit TagKind(std::string_view name);

  const std::string& name() const { return name_; }
  bool numeric() const { return name_ == "PRICE"; }

  auto operator<=>(const TagKind&) const = default;

 private:
  std::string name_;
};

inline const TagKind kSortal{"SORTAL"};
inline const TagKind kBrand{"BRAND"};
inline const TagKind kColor{"COLOR"};
inline const TagKind kMaterial{"MATERIAL"};
inline const TagKind kGender{"GENDER"};
inline const TagKind kPrice{"PRICE"};

/// Sorted, duplicate-free list of SKUs.
using SkuSet = std::vector<std::string>;

struct SimilarityNeighbor {
  std::string value;
  double distance;
};

class TagSchema {
 public:
  TagSchema() = default;
  explicit TagSchema(std::vector<TagKind> kinds);

  /// Default kinds: SORTAL, BRAND, COLOR, MATERIAL, GENDER, PRICE.
  static TagSchema standard();

  const std::vector<TagKind>& kinds() const { return kinds_; }
  bool has(const TagKind& kind) const;
  void add_kind(const TagKind& kind);

  /// Candidate values for a kind (the SORTAL noun lexicon, color names...).
  const std::vector<std::string>& seeds(const TagKind& kind) const;
  void set_seeds(const TagKind& kind, std::vector<std::string> values);

  /// Stores distance(a, b) = distance(b, a) = d. Requires d in [0, 1], a != b
  /// (the diagonal is implicitly zero) and a categorical kind in the schema.
  void add_similarity(const TagKind& kind, std::string_view a, std::string_view b,
                      double distance);
  std::optional<double> distance(const TagKind& kind, std::string_view a,
                                 std::string_view b) const;
  /// Neighbors of `value` by ascending distance, ties alphabetical.
  std::vector<SimilarityNeighbor> neighbors(const TagKind& kind,
                                            std::string_view value) const;
  bool has_similarity(const TagKind& kind) const;

  /// Drops similarity entries whose values are absent from `vocab`; returns
  /// one message per removed entry.
  std::vector<std::string> prune_similarity(
      const std::map<TagKind, std::set<std::string>>& vocab);

  using SimilarityTable = std::map<std::pair<std::string, std::string>, double>;
  const std::map<TagKind, SimilarityTable>& similarity() const { return similarity_; }

 private:
  std::vector<TagKind> kinds_;
  std::map<TagKind, std::vector<std::string>> seeds_;
  std::map<TagKind, SimilarityTable> similarity_;
};

// --- extraction strategies -------------------------------------------------

struct ConfigStrategy {
  std::string column;
};

struct HeuristicStrategy {
  std::string rule;  // "first_noun_overlap" or "vocab_match"
  std::map<std::string, std::string> params;
};

struct ModelStrategy {
  std::string endpoint;
};

struct ExtractionStrategy {
  TagKind tag;
  std::variant<ConfigStrategy, HeuristicStrategy, ModelStrategy> variant;
};

// --- catalog rows ------------------------------------------------------------

struct CatalogRow {
  std::size_t line = 0;  // 1-based line in the source file
  std::map<std::string, std::string> fields;
};

struct Catalog {
  std::vector<std::string> columns;
  std::vector<CatalogRow> rows;

  bool has_column(std::string_view name) const;
};

/// Parses delimited text: header row, tab- or comma-delimited (tab wins when
/// the header contains one), double-quoted fields with "" escapes, required
/// `sku` column.
Catalog parse_catalog(std::string_view text);
Catalog load_catalog(const std::filesystem::path& path);

// --- model strategy wire contract -------------------------------------------

struct TagRequest {
  std::string sku;
  std::map<std::string, std::string> raw;
};

struct TagResponse {
  std::string kind;
  std::vector<std::string> values;
  double confidence = 1.0;
};

std::string encode_tag_request(const TagRequest& request);
TagRequest decode_tag_request(std::string_view body);
std::string encode_tag_response(const TagResponse& response);
TagResponse decode_tag_response(std::string_view body);

/// A tagging model reachable behind an endpoint id. Returning nullopt means
/// the endpoint could not answer for this product.
class TagModel {
 public:
  virtual ~TagModel() = default;
  virtual std::optional<TagResponse> tag(const TagRequest& request,
                                         const TagKind& kind) = 0;
};

/// Bundled fake: answers from a sku -> values table, or, when built with a
/// column name, from that raw field of the request.
class LookupTagModel : public TagModel {
 public:
  explicit LookupTagModel(std::map<std::string, std::vector<std::string>> table);
  static std::shared_ptr<LookupTagModel> from_column(std::string column);

  std::optional<TagResponse> tag(const TagRequest& request,
                                 const TagKind& kind) override;

 private:
  std::map<std::string, std::vector<std::string>> table_;
  std::string column_;
};

/// Endpoint id -> model. Ids of the form "column:<Name>" resolve to a
/// LookupTagModel over that raw column without registration.
class ModelRegistry {
 public:
  void add(std::string endpoint, std::shared_ptr<TagModel> model);
  std::shared_ptr<TagModel> find(const std::string& endpoint) const;

 private:
  std::map<std::string, std::shared_ptr<TagModel>> models_;
};

// --- knowledge base ---------------------------------------------------------

struct Product {
  std::string sku;
  std::map<std::string, std::string> raw;
  std::map<TagKind, std::set<std::string>> tags;
  std::optional<double> price;

  bool typed() const;
  bool has_tag(const TagKind& kind, std::string_view value) const;
};

using ProductId = std::uint32_t;

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(std::vector<Product> products, TagSchema schema);

  const std::vector<Product>& products() const { return products_; }
  const TagSchema& schema() const { return schema_; }
  std::size_t size() const { return products_.size(); }

  /// Throws Error(kNotFound) for a kind outside the schema.
  const std::set<std::string>& vocabulary(const TagKind& kind) const;
  /// Product ids tagged (kind, value), ascending.
  std::span<const ProductId> postings(const TagKind& kind, std::string_view value) const;
  const std::map<TagKind, std::map<std::string, std::vector<ProductId>, std::less<>>>&
  inverted() const {
    return inverted_;
  }
  std::optional<ProductId> find(std::string_view sku) const;
  const Product& product(ProductId id) const { return products_.at(id); }

  /// Hash of kind names and vocabularies; components built from a different
  /// knowledge base refuse to run against this one.
  const std::string& fingerprint() const { return fingerprint_; }

  /// Recomputes the inverted index from product tags (used to check the
  /// index invariant).
  static std::map<TagKind, std::map<std::string, std::vector<ProductId>, std::less<>>>
  build_inverted(const std::vector<Product>& products);

 private:
  std::vector<Product> products_;
  TagSchema schema_;
  std::map<TagKind, std::set<std::string>> vocab_;
  std::map<TagKind, std::map<std::string, std::vector<ProductId>, std::less<>>> inverted_;
  std::map<std::string, ProductId, std::less<>> by_sku_;
  std::string fingerprint_;
};

struct ExtractionReport {
  std::size_t products = 0;
  std::size_t untyped = 0;
  std::size_t priceless = 0;
  std::size_t model_skipped = 0;
  std::vector<std::string> warnings;
};

/// Runs strategies in series per product. For each (product, kind) the first
/// strategy that yields a value wins; later strategies for that kind are not
/// consulted.
KnowledgeBase extract_tags(const Catalog& catalog, const TagSchema& schema,
                           std::span<const ExtractionStrategy> strategies,
                           const ModelRegistry& models = {},
                           ExtractionReport* report = nullptr);

/// First description token (lowercased, punctuation stripped, naive plural
/// folding) that is in `lexicon` and whose stem occurs in `category`.
std::optional<std::string> heuristic_first_overlap(std::string_view description,
                                                   std::string_view category,
                                                   std::span<const std::string> lexicon);

/// Leftmost-longest occurrence of a lexicon phrase in `text`.
std::optional<std::string> heuristic_vocab_match(std::string_view text,
                                                 std::span<const std::string> lexicon);

const std::set<std::string>& vocabulary(const KnowledgeBase& kb, const TagKind& kind);

}  // namespace progsearch
