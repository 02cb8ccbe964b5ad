#pragma once

// Users, anchors and items with their categorical features and histories;
// JSONL ingestion/serialization; dataset splitting; a synthetic log generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace twins {

/// External, opaque object id as it appears in the logs.
using ObjectId = std::int64_t;
/// Dense position of an object inside the Catalog.
using Index = std::uint32_t;
/// Dense categorical feature id, 0..V-1 per object kind.
using FeatureId = std::uint32_t;

enum class ObjectKind { user, anchor, item };

const char* to_string(ObjectKind kind);

struct Item {
  ObjectId id = 0;
  /// Slot 0 is the item's category.
  std::vector<FeatureId> features;

  FeatureId category() const { return features.front(); }
  bool operator==(const Item&) const = default;
};

struct User {
  ObjectId id = 0;
  std::vector<FeatureId> features;
  std::vector<Index> browsed_items;    // oldest first
  std::vector<Index> browsed_anchors;  // oldest first
  bool operator==(const User&) const = default;
};

struct Anchor {
  ObjectId id = 0;
  std::vector<FeatureId> features;
  std::vector<Index> broadcast_items;  // oldest first
  bool operator==(const Anchor&) const = default;
};

struct LabeledPair {
  Index user = 0;
  Index anchor = 0;
  int label = 0;

  bool operator==(const LabeledPair&) const = default;
  auto operator<=>(const LabeledPair&) const = default;
};

/// Immutable registry of every object. Histories hold dense indices, so every
/// history entry resolves by construction.
class Catalog {
 public:
  const std::vector<User>& users() const { return users_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  const std::vector<Item>& items() const { return items_; }

  const User& user(Index i) const { return users_.at(i); }
  const Anchor& anchor(Index i) const { return anchors_.at(i); }
  const Item& item(Index i) const { return items_.at(i); }

  std::optional<Index> find(ObjectKind kind, ObjectId id) const;
  /// Throws InputError naming the kind and id when absent.
  Index index_of(ObjectKind kind, ObjectId id) const;

  /// Embedding-table height for a kind: one past the largest feature id.
  std::size_t vocab_size(ObjectKind kind) const;

  bool operator==(const Catalog&) const = default;

 private:
  friend class CatalogBuilder;

  std::vector<User> users_;
  std::vector<Anchor> anchors_;
  std::vector<Item> items_;
  std::unordered_map<ObjectId, Index> user_index_;
  std::unordered_map<ObjectId, Index> anchor_index_;
  std::unordered_map<ObjectId, Index> item_index_;
  std::array<std::size_t, 3> vocab_{};
};

/// Collects objects by external id, then links histories into a Catalog.
class CatalogBuilder {
 public:
  struct Record {
    ObjectKind kind = ObjectKind::item;
    ObjectId id = 0;
    std::vector<FeatureId> features;
    std::vector<ObjectId> items;    // browsed_items or broadcast_items
    std::vector<ObjectId> anchors;  // browsed_anchors (users only)
    std::size_t line = 0;           // source line for error messages, 0 if none
  };

  /// Returns false if an object of that kind and id already exists.
  bool add(Record record);
  bool contains(ObjectKind kind, ObjectId id) const;

  /// Resolves every history reference; InputError names the first dangling
  /// id and its line. Histories longer than `max_history` keep the most
  /// recent entries.
  Catalog build(std::size_t max_history = 200) const;

 private:
  std::vector<Record> records_;
  std::array<std::unordered_map<ObjectId, std::size_t>, 3> seen_;
};

// ---- ingestion -------------------------------------------------------------

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

/// Maps string-valued features to dense ids per object kind. Persisted as
/// text, one `kind<TAB>token` per line in id order.
class Vocabulary {
 public:
  FeatureId id_for(ObjectKind kind, const std::string& token);
  std::size_t size(ObjectKind kind) const { return tokens_[static_cast<int>(kind)].size(); }

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const Vocabulary&) const = default;

 private:
  std::array<std::vector<std::string>, 3> tokens_;
  std::array<std::map<std::string, FeatureId>, 3> ids_;
};

struct IngestOptions {
  std::size_t max_history = 200;
  /// Used (and extended) for string-valued features.
  Vocabulary* vocabulary = nullptr;
};

struct Dataset {
  Catalog catalog;
  std::vector<LabeledPair> pairs;
  /// Malformed lines that were skipped, per file.
  std::vector<LineIssue> rejected_catalog_lines;
  std::vector<LineIssue> rejected_pair_lines;
};

/// Parses catalog JSONL then pairs JSONL. Malformed lines are skipped and
/// reported; a pair or history naming an unknown id throws InputError.
Dataset ingest_logs(std::istream& catalog_jsonl, std::istream& pairs_jsonl,
                    const IngestOptions& options = {});
Dataset ingest_logs(const std::filesystem::path& catalog_file,
                    const std::filesystem::path& pairs_file, const IngestOptions& options = {});

void write_catalog(std::ostream& out, const Catalog& catalog);
void write_pairs(std::ostream& out, const Catalog& catalog, const std::vector<LabeledPair>& pairs);

// ---- splitting -------------------------------------------------------------

struct DatasetSplit {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> validation;
  std::vector<LabeledPair> test;
  /// Set when fewer than three pairs forced everything into train.
  bool degenerate = false;
};

/// Seeded shuffle, then sizes by largest-remainder rounding of the ratios
/// (ties go to the earlier split). Ratios must sum to 1.
DatasetSplit split_dataset(const std::vector<LabeledPair>& pairs,
                           std::array<double, 3> ratios = {0.6, 0.2, 0.2},
                           std::uint64_t seed = 0);

/// Exact part sizes produced by split_dataset for n pairs.
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios);

// ---- synthetic logs --------------------------------------------------------

struct SyntheticSpec {
  std::size_t num_users = 100;
  std::size_t num_anchors = 20;
  std::size_t num_items = 500;
  std::size_t num_categories = 10;
  std::size_t num_pairs = 1000;
  /// Inclusive range of item-history lengths for users and anchors.
  std::pair<std::size_t, std::size_t> history_len_range{5, 20};
  /// Inclusive range of browsed-anchor history lengths for users.
  std::pair<std::size_t, std::size_t> browsed_anchor_range{1, 5};
  /// Each user and anchor concentrates on up to this many categories.
  std::size_t max_interests = 3;
  /// Probability a history event stays inside the owner's interests.
  double focus = 0.9;
  double signal_strength = 0.5;
  double base_rate = 0.08;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Catalog catalog;
  std::vector<LabeledPair> pairs;
};

/// Planted signal: P(label = 1) = clamp(base_rate + signal_strength * J,
/// 0.02, 0.98) where J is the Jaccard index between the categories in the
/// user's browsed items and the anchor's broadcast items.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

double category_jaccard(const Catalog& catalog, Index user, Index anchor);
double label_probability(double jaccard, double signal_strength, double base_rate);

}  // namespace twins
