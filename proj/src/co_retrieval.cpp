#include "twins/co_retrieval.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "twins/error.hpp"

namespace twins {

KkvIndex KkvIndex::build(const Catalog& catalog, IndexSide side) {
  KkvIndex index;
  index.side_ = side;
  const std::size_t n = side == IndexSide::user ? catalog.users().size() : catalog.anchors().size();
  index.owners_.resize(n);
  for (std::size_t o = 0; o < n; ++o) {
    const auto& history = side == IndexSide::user ? catalog.users()[o].browsed_items
                                                  : catalog.anchors()[o].broadcast_items;
    auto& map = index.owners_[o];
    for (std::size_t pos = history.size(); pos-- > 0;) {
      auto& bucket = map[catalog.item(history[pos]).category()];
      bucket.items.push_back(history[pos]);
      bucket.positions.push_back(static_cast<std::uint32_t>(pos));
    }
  }
  return index;
}

const KkvIndex::CategoryMap& KkvIndex::categories(Index owner) const {
  static const CategoryMap kEmpty;
  return owner < owners_.size() ? owners_[owner] : kEmpty;
}

namespace {

constexpr char kMagic[4] = {'K', 'K', 'V', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("KKV index: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

std::vector<FeatureId> sorted_keys(const KkvIndex::CategoryMap& map) {
  std::vector<FeatureId> keys;
  keys.reserve(map.size());
  for (const auto& [k, _] : map) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

void KkvIndex::save(std::ostream& out) const {
  out.write(kMagic, 4);
  put_u64(out, static_cast<std::uint64_t>(side_));
  put_u64(out, owners_.size());
  for (std::size_t o = 0; o < owners_.size(); ++o) {
    const auto& map = owners_[o];
    put_u64(out, o);
    put_u64(out, map.size());
    for (auto cat : sorted_keys(map)) {
      const auto& bucket = map.at(cat);
      put_u64(out, cat);
      put_u64(out, bucket.items.size());
      for (auto i : bucket.items) put_u64(out, i);
      for (auto p : bucket.positions) put_u64(out, p);
    }
  }
}

KkvIndex KkvIndex::load(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw FormatError("KKV index: bad magic (expected KKV1)");
  }
  KkvIndex index;
  const auto side = get_u64(in);
  if (side > 1) throw FormatError("KKV index: unknown side " + std::to_string(side));
  index.side_ = static_cast<IndexSide>(side);
  const auto owners = get_u64(in);
  if (owners > (std::uint64_t{1} << 32)) throw FormatError("KKV index: implausible owner count");
  index.owners_.resize(owners);
  for (std::uint64_t k = 0; k < owners; ++k) {
    const auto owner = get_u64(in);
    if (owner >= owners) throw FormatError("KKV index: owner id out of range");
    const auto ncat = get_u64(in);
    auto& map = index.owners_[owner];
    for (std::uint64_t c = 0; c < ncat; ++c) {
      const auto cat = static_cast<FeatureId>(get_u64(in));
      const auto n = get_u64(in);
      if (n > (std::uint64_t{1} << 32)) throw FormatError("KKV index: implausible bucket size");
      auto& bucket = map[cat];
      bucket.items.resize(n);
      bucket.positions.resize(n);
      for (auto& i : bucket.items) i = static_cast<Index>(get_u64(in));
      for (auto& p : bucket.positions) p = static_cast<std::uint32_t>(get_u64(in));
    }
  }
  return index;
}

namespace {

/// Round-robin selection over the buckets of the common categories; result is
/// most recent first.
void select(const KkvIndex::CategoryMap& map, const std::vector<FeatureId>& common, std::size_t cap,
            std::vector<Index>& items, std::vector<std::uint32_t>& positions) {
  struct Pick {
    std::uint32_t position;
    Index item;
  };
  std::vector<const CategoryBucket*> buckets;
  std::size_t total = 0;
  for (auto c : common) {
    const auto& b = map.at(c);
    buckets.push_back(&b);
    total += b.items.size();
  }
  std::vector<Pick> picked;
  picked.reserve(std::min(total, cap));
  if (total <= cap) {
    for (const auto* b : buckets)
      for (std::size_t k = 0; k < b->items.size(); ++k) picked.push_back({b->positions[k], b->items[k]});
  } else {
    std::vector<Pick> round;
    for (std::size_t depth = 0; picked.size() < cap; ++depth) {
      round.clear();
      for (const auto* b : buckets) {
        if (depth < b->items.size()) round.push_back({b->positions[depth], b->items[depth]});
      }
      std::sort(round.begin(), round.end(), [](const Pick& a, const Pick& b) { return a.position > b.position; });
      for (const auto& p : round) {
        if (picked.size() == cap) break;
        picked.push_back(p);
      }
    }
  }
  std::sort(picked.begin(), picked.end(), [](const Pick& a, const Pick& b) { return a.position > b.position; });
  items.reserve(picked.size());
  positions.reserve(picked.size());
  for (const auto& p : picked) {
    items.push_back(p.item);
    positions.push_back(p.position);
  }
}

}  // namespace

RetrievedHistories co_retrieve(const KkvIndex& user_index, const KkvIndex& anchor_index, Index user, Index anchor,
                               std::size_t cap) {
  RetrievedHistories out;
  const auto& um = user_index.categories(user);
  const auto& am = anchor_index.categories(anchor);
  const auto& small = um.size() <= am.size() ? um : am;
  const auto& large = um.size() <= am.size() ? am : um;
  for (const auto& [cat, _] : small) {
    if (large.contains(cat)) out.common_categories.push_back(cat);
  }
  std::sort(out.common_categories.begin(), out.common_categories.end());
  if (out.common_categories.empty() || cap == 0) return out;
  select(um, out.common_categories, cap, out.user_items, out.user_positions);
  select(am, out.common_categories, cap, out.anchor_items, out.anchor_positions);
  return out;
}

std::uint64_t pair_budget(const RetrievedHistories& retrieved) {
  return static_cast<std::uint64_t>(retrieved.user_items.size()) * retrieved.anchor_items.size();
}

}  // namespace twins
