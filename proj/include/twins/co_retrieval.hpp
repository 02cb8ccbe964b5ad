#pragma once

// Category-intersection co-retrieval over a Key-Key-Value index:
// owner -> category -> items (most recent first).

#include <cstdint>
#include <iosfwd>
#include <unordered_map>
#include <vector>

#include "twins/data.hpp"

namespace twins {

enum class IndexSide : std::uint64_t { user = 0, anchor = 1 };

/// Items of one owner falling in one category, most recent first, with each
/// item's position in the owner's history.
struct CategoryBucket {
  std::vector<Index> items;
  std::vector<std::uint32_t> positions;

  bool operator==(const CategoryBucket&) const = default;
};

class KkvIndex {
 public:
  using CategoryMap = std::unordered_map<FeatureId, CategoryBucket>;

  /// Groups every user's browsed items (or every anchor's broadcast items) by
  /// item category.
  static KkvIndex build(const Catalog& catalog, IndexSide side);

  IndexSide side() const { return side_; }
  std::size_t owner_count() const { return owners_.size(); }
  /// Category map of an owner; empty if the owner is unknown or has no history.
  const CategoryMap& categories(Index owner) const;

  /// Binary form: "KKV1", then little-endian u64 fields: side, owner count,
  /// and per owner its id, category count and per category (ascending) the
  /// category id, item count, item ids, history positions.
  void save(std::ostream& out) const;
  static KkvIndex load(std::istream& in);

  bool operator==(const KkvIndex&) const = default;

 private:
  IndexSide side_ = IndexSide::user;
  std::vector<CategoryMap> owners_;
};

struct RetrievedHistories {
  std::vector<Index> user_items;  // most recent first
  std::vector<std::uint32_t> user_positions;
  std::vector<Index> anchor_items;  // most recent first
  std::vector<std::uint32_t> anchor_positions;
  std::vector<FeatureId> common_categories;  // ascending

  bool operator==(const RetrievedHistories&) const = default;
};

/// Keeps only items whose category both sides share, at most `cap` per side.
/// When more match, selection goes round by round across the common
/// categories (k-th most recent of each category in round k, rounds ordered
/// by recency) until the cap is reached.
RetrievedHistories co_retrieve(const KkvIndex& user_index, const KkvIndex& anchor_index, Index user,
                               Index anchor, std::size_t cap);

/// Number of item-aspect attention pairs the retrieval leaves.
std::uint64_t pair_budget(const RetrievedHistories& retrieved);

}  // namespace twins
