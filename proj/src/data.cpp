#include "twins/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "twins/error.hpp"
#include "twins/rng.hpp"

namespace twins {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::user: return "user";
    case ObjectKind::anchor: return "anchor";
    case ObjectKind::item: return "item";
  }
  return "?";
}

namespace {

constexpr int slot(ObjectKind kind) { return static_cast<int>(kind); }

std::string line_prefix(std::size_t line) {
  return line ? "line " + std::to_string(line) + ": " : std::string();
}

}  // namespace

// ---- Catalog ---------------------------------------------------------------

std::optional<Index> Catalog::find(ObjectKind kind, ObjectId id) const {
  const auto& map = kind == ObjectKind::user     ? user_index_
                    : kind == ObjectKind::anchor ? anchor_index_
                                                 : item_index_;
  if (auto it = map.find(id); it != map.end()) return it->second;
  return std::nullopt;
}

Index Catalog::index_of(ObjectKind kind, ObjectId id) const {
  if (auto i = find(kind, id)) return *i;
  throw InputError(std::string("unknown ") + to_string(kind) + " id " + std::to_string(id));
}

std::size_t Catalog::vocab_size(ObjectKind kind) const { return vocab_[slot(kind)]; }

bool CatalogBuilder::contains(ObjectKind kind, ObjectId id) const {
  return seen_[slot(kind)].contains(id);
}

bool CatalogBuilder::add(Record record) {
  auto& seen = seen_[slot(record.kind)];
  if (seen.contains(record.id)) return false;
  seen.emplace(record.id, records_.size());
  records_.push_back(std::move(record));
  return true;
}

Catalog CatalogBuilder::build(std::size_t max_history) const {
  Catalog c;
  for (const auto& r : records_) {
    auto& vocab = c.vocab_[slot(r.kind)];
    for (auto f : r.features) vocab = std::max<std::size_t>(vocab, std::size_t{f} + 1);
    switch (r.kind) {
      case ObjectKind::item:
        c.item_index_.emplace(r.id, static_cast<Index>(c.items_.size()));
        c.items_.push_back(Item{r.id, r.features});
        break;
      case ObjectKind::anchor:
        c.anchor_index_.emplace(r.id, static_cast<Index>(c.anchors_.size()));
        c.anchors_.push_back(Anchor{r.id, r.features, {}});
        break;
      case ObjectKind::user:
        c.user_index_.emplace(r.id, static_cast<Index>(c.users_.size()));
        c.users_.push_back(User{r.id, r.features, {}, {}});
        break;
    }
  }

  auto resolve = [&](const Record& owner, const std::vector<ObjectId>& ids, ObjectKind target) {
    std::vector<Index> out;
    const std::size_t skip = ids.size() > max_history ? ids.size() - max_history : 0;
    out.reserve(ids.size() - skip);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto found = c.find(target, ids[k]);
      if (!found) {
        throw InputError(line_prefix(owner.line) + to_string(owner.kind) + " " +
                         std::to_string(owner.id) + " references unknown " + to_string(target) +
                         " id " + std::to_string(ids[k]));
      }
      if (k >= skip) out.push_back(*found);
    }
    return out;
  };

  for (const auto& r : records_) {
    if (r.kind == ObjectKind::user) {
      auto& u = c.users_[c.user_index_.at(r.id)];
      u.browsed_items = resolve(r, r.items, ObjectKind::item);
      u.browsed_anchors = resolve(r, r.anchors, ObjectKind::anchor);
    } else if (r.kind == ObjectKind::anchor) {
      c.anchors_[c.anchor_index_.at(r.id)].broadcast_items = resolve(r, r.items, ObjectKind::item);
    }
  }
  return c;
}

// ---- Vocabulary ------------------------------------------------------------

FeatureId Vocabulary::id_for(ObjectKind kind, const std::string& token) {
  auto& ids = ids_[slot(kind)];
  if (auto it = ids.find(token); it != ids.end()) return it->second;
  auto& tokens = tokens_[slot(kind)];
  const auto id = static_cast<FeatureId>(tokens.size());
  tokens.push_back(token);
  ids.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError(path.string() + ":" + std::to_string(n) + ": missing tab");
    const std::string kind = line.substr(0, tab);
    ObjectKind k;
    if (kind == "user") k = ObjectKind::user;
    else if (kind == "anchor") k = ObjectKind::anchor;
    else if (kind == "item") k = ObjectKind::item;
    else throw InputError(path.string() + ":" + std::to_string(n) + ": unknown kind '" + kind + "'");
    v.id_for(k, line.substr(tab + 1));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary " + path.string());
  for (auto kind : {ObjectKind::user, ObjectKind::anchor, ObjectKind::item}) {
    for (const auto& t : tokens_[slot(kind)]) out << to_string(kind) << '\t' << t << '\n';
  }
}

// ---- ingestion -------------------------------------------------------------

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<ObjectId> id_list(const json& obj, const char* key) {
  std::vector<ObjectId> out;
  if (!obj.contains(key)) return out;
  const auto& arr = obj.at(key);
  if (!arr.is_array()) throw std::invalid_argument(std::string(key) + " is not an array");
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw std::invalid_argument(std::string(key) + " holds a non-integer id");
    out.push_back(v.get<ObjectId>());
  }
  return out;
}

enum class FeatureStyle { unknown, integers, strings };

struct CatalogLineParser {
  Vocabulary& vocabulary;
  std::array<FeatureStyle, 3> style{};

  CatalogBuilder::Record parse(const std::string& text, std::size_t line) {
    const json obj = json::parse(text);
    if (!obj.is_object()) throw std::invalid_argument("not a JSON object");
    if (!obj.contains("kind") || !obj.at("kind").is_string()) throw std::invalid_argument("missing kind");
    if (!obj.contains("id") || !obj.at("id").is_number_integer()) throw std::invalid_argument("missing integer id");

    CatalogBuilder::Record r;
    r.line = line;
    r.id = obj.at("id").get<ObjectId>();
    const auto kind = obj.at("kind").get<std::string>();
    if (kind == "user") r.kind = ObjectKind::user;
    else if (kind == "anchor") r.kind = ObjectKind::anchor;
    else if (kind == "item") r.kind = ObjectKind::item;
    else throw std::invalid_argument("unknown kind '" + kind + "'");

    const bool is_user = r.kind == ObjectKind::user;
    const bool is_anchor = r.kind == ObjectKind::anchor;
    if (!is_user && (obj.contains("browsed_items") || obj.contains("browsed_anchors")))
      throw std::invalid_argument("browse history on a non-user");
    if (!is_anchor && obj.contains("broadcast_items"))
      throw std::invalid_argument("broadcast history on a non-anchor");

    if (!obj.contains("features") || !obj.at("features").is_array())
      throw std::invalid_argument("missing features array");
    auto& st = style[slot(r.kind)];
    std::vector<FeatureId> staged;
    FeatureStyle line_style = FeatureStyle::unknown;
    for (const auto& f : obj.at("features")) {
      FeatureStyle s;
      if (f.is_number_unsigned()) {
        const auto v = f.get<std::uint64_t>();
        if (v > 0xffffffffULL) throw std::invalid_argument("feature id out of range");
        staged.push_back(static_cast<FeatureId>(v));
        s = FeatureStyle::integers;
      } else if (f.is_string()) {
        staged.push_back(0);  // assigned after the style check
        s = FeatureStyle::strings;
      } else {
        throw std::invalid_argument("feature must be a non-negative integer or a string");
      }
      if (line_style != FeatureStyle::unknown && line_style != s)
        throw std::invalid_argument("mixed integer and string features");
      line_style = s;
    }
    if (r.kind == ObjectKind::item && staged.empty())
      throw std::invalid_argument("item without features (slot 0 is the category)");
    if (line_style != FeatureStyle::unknown) {
      if (st != FeatureStyle::unknown && st != line_style)
        throw std::invalid_argument(std::string("feature style differs from earlier ") +
                                    to_string(r.kind) + " lines");
    }
    if (is_user) {
      r.items = id_list(obj, "browsed_items");
      r.anchors = id_list(obj, "browsed_anchors");
    } else if (is_anchor) {
      r.items = id_list(obj, "broadcast_items");
    }
    // Only commit vocabulary entries once the whole line validated.
    if (line_style == FeatureStyle::strings) {
      std::size_t k = 0;
      for (const auto& f : obj.at("features")) staged[k++] = vocabulary.id_for(r.kind, f.get<std::string>());
    }
    if (line_style != FeatureStyle::unknown) st = line_style;
    r.features = std::move(staged);
    return r;
  }
};

}  // namespace

Dataset ingest_logs(std::istream& catalog_jsonl, std::istream& pairs_jsonl,
                    const IngestOptions& options) {
  Vocabulary local;
  CatalogLineParser parser{options.vocabulary ? *options.vocabulary : local, {}};
  CatalogBuilder builder;
  Dataset ds;

  std::string text;
  std::size_t line = 0;
  while (std::getline(catalog_jsonl, text)) {
    ++line;
    if (blank(text)) continue;
    try {
      auto record = parser.parse(text, line);
      const auto kind = record.kind;
      const auto id = record.id;
      if (!builder.add(std::move(record))) {
        ds.rejected_catalog_lines.push_back(
            {line, std::string("duplicate ") + to_string(kind) + " id " + std::to_string(id)});
      }
    } catch (const std::exception& e) {
      ds.rejected_catalog_lines.push_back({line, e.what()});
    }
  }
  ds.catalog = builder.build(options.max_history);

  line = 0;
  while (std::getline(pairs_jsonl, text)) {
    ++line;
    if (blank(text)) continue;
    ObjectId uid = 0, aid = 0;
    int label = 0;
    try {
      const json obj = json::parse(text);
      if (!obj.is_object()) throw std::invalid_argument("not a JSON object");
      for (const char* key : {"user", "anchor", "label"}) {
        if (!obj.contains(key) || !obj.at(key).is_number_integer())
          throw std::invalid_argument(std::string("missing integer ") + key);
      }
      uid = obj.at("user").get<ObjectId>();
      aid = obj.at("anchor").get<ObjectId>();
      label = obj.at("label").get<int>();
      if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
    } catch (const std::exception& e) {
      ds.rejected_pair_lines.push_back({line, e.what()});
      continue;
    }
    auto u = ds.catalog.find(ObjectKind::user, uid);
    if (!u) throw InputError(line_prefix(line) + "pair references unknown user id " + std::to_string(uid));
    auto a = ds.catalog.find(ObjectKind::anchor, aid);
    if (!a) throw InputError(line_prefix(line) + "pair references unknown anchor id " + std::to_string(aid));
    ds.pairs.push_back({*u, *a, label});
  }
  return ds;
}

Dataset ingest_logs(const std::filesystem::path& catalog_file, const std::filesystem::path& pairs_file,
                    const IngestOptions& options) {
  std::ifstream c(catalog_file);
  if (!c) throw InputError("cannot open catalog file " + catalog_file.string());
  std::ifstream p(pairs_file);
  if (!p) throw InputError("cannot open pairs file " + pairs_file.string());
  return ingest_logs(c, p, options);
}

void write_catalog(std::ostream& out, const Catalog& catalog) {
  auto ids = [](const std::vector<Index>& idx, auto id_of) {
    std::vector<ObjectId> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(id_of(i));
    return v;
  };
  auto item_id = [&](Index i) { return catalog.item(i).id; };
  auto anchor_id = [&](Index i) { return catalog.anchor(i).id; };
  for (const auto& it : catalog.items()) {
    ordered_json j;
    j["kind"] = "item";
    j["id"] = it.id;
    j["features"] = it.features;
    out << j.dump() << '\n';
  }
  for (const auto& a : catalog.anchors()) {
    ordered_json j;
    j["kind"] = "anchor";
    j["id"] = a.id;
    j["features"] = a.features;
    j["broadcast_items"] = ids(a.broadcast_items, item_id);
    out << j.dump() << '\n';
  }
  for (const auto& u : catalog.users()) {
    ordered_json j;
    j["kind"] = "user";
    j["id"] = u.id;
    j["features"] = u.features;
    j["browsed_items"] = ids(u.browsed_items, item_id);
    j["browsed_anchors"] = ids(u.browsed_anchors, anchor_id);
    out << j.dump() << '\n';
  }
}

void write_pairs(std::ostream& out, const Catalog& catalog, const std::vector<LabeledPair>& pairs) {
  for (const auto& p : pairs) {
    ordered_json j;
    j["user"] = catalog.user(p.user).id;
    j["anchor"] = catalog.anchor(p.anchor).id;
    j["label"] = p.label;
    out << j.dump() << '\n';
  }
}

// ---- splitting -------------------------------------------------------------

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw InputError("split ratios must be finite and non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("split ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratios[k];
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++sizes[order[r % 3]];
  return sizes;
}

DatasetSplit split_dataset(const std::vector<LabeledPair>& pairs, std::array<double, 3> ratios,
                           std::uint64_t seed) {
  const auto sizes = split_sizes(pairs.size(), ratios);
  DatasetSplit out;
  if (pairs.size() < 3) {
    out.train = pairs;
    out.degenerate = true;
    return out;
  }
  std::vector<LabeledPair> shuffled = pairs;
  Rng rng(stream_seed(seed, "split"));
  rng.shuffle(shuffled);
  auto first = shuffled.begin();
  out.train.assign(first, first + sizes[0]);
  out.validation.assign(first + sizes[0], first + sizes[0] + sizes[1]);
  out.test.assign(first + sizes[0] + sizes[1], shuffled.end());
  return out;
}

// ---- synthetic -------------------------------------------------------------

double label_probability(double jaccard, double signal_strength, double base_rate) {
  return std::clamp(base_rate + signal_strength * jaccard, 0.02, 0.98);
}

double category_jaccard(const Catalog& catalog, Index user, Index anchor) {
  std::set<FeatureId> cu, ca;
  for (auto i : catalog.user(user).browsed_items) cu.insert(catalog.item(i).category());
  for (auto i : catalog.anchor(anchor).broadcast_items) ca.insert(catalog.item(i).category());
  if (cu.empty() && ca.empty()) return 0.0;
  std::size_t common = 0;
  for (auto c : cu) common += ca.count(c);
  return static_cast<double>(common) / static_cast<double>(cu.size() + ca.size() - common);
}

namespace {

std::vector<FeatureId> pick_interests(Rng& rng, std::size_t num_categories, std::size_t max_interests) {
  const auto n = static_cast<std::size_t>(
      rng.between(1, static_cast<std::int64_t>(std::min(max_interests, num_categories))));
  std::vector<FeatureId> all(num_categories);
  std::iota(all.begin(), all.end(), FeatureId{0});
  rng.shuffle(all);
  all.resize(n);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<ObjectId> sample_history(Rng& rng, const SyntheticSpec& spec,
                                     const std::vector<FeatureId>& interests,
                                     const std::vector<std::vector<ObjectId>>& items_by_category) {
  const auto len = static_cast<std::size_t>(rng.between(
      static_cast<std::int64_t>(spec.history_len_range.first),
      static_cast<std::int64_t>(spec.history_len_range.second)));
  std::vector<ObjectId> out;
  out.reserve(len);
  for (std::size_t k = 0; k < len; ++k) {
    if (rng.bernoulli(spec.focus)) {
      const auto& pool = items_by_category[interests[rng.below(interests.size())]];
      if (!pool.empty()) {
        out.push_back(pool[rng.below(pool.size())]);
        continue;
      }
    }
    out.push_back(static_cast<ObjectId>(rng.below(spec.num_items)));
  }
  return out;
}

}  // namespace

constexpr std::uint64_t kItemAttributeBuckets = 8;

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_users < 1 || spec.num_anchors < 1 || spec.num_items < 1 || spec.num_categories < 1)
    throw InputError("synthetic generator: all object counts must be at least 1");
  if (spec.max_interests < 1) throw InputError("synthetic generator: max_interests must be at least 1");
  if (spec.history_len_range.first > spec.history_len_range.second ||
      spec.browsed_anchor_range.first > spec.browsed_anchor_range.second)
    throw InputError("synthetic generator: history ranges must satisfy lo <= hi");
  if (!std::isfinite(spec.signal_strength) || !std::isfinite(spec.base_rate) || !std::isfinite(spec.focus))
    throw InputError("synthetic generator: rates must be finite");

  Rng rng(stream_seed(spec.seed, "data"));
  const auto C = spec.num_categories;
  CatalogBuilder builder;

  // Items: [category, C + attribute bucket].
  std::vector<std::vector<ObjectId>> items_by_category(C);
  for (std::size_t i = 0; i < spec.num_items; ++i) {
    const auto cat = static_cast<FeatureId>(rng.below(C));
    items_by_category[cat].push_back(static_cast<ObjectId>(i));
    const auto bucket = static_cast<FeatureId>(C + rng.below(kItemAttributeBuckets));
    builder.add({ObjectKind::item, static_cast<ObjectId>(i), {cat, bucket}, {}, {}, 0});
  }

  // Anchors: [anchor index, N + broadcast-time bucket].
  std::vector<std::vector<FeatureId>> anchor_interests(spec.num_anchors);
  std::vector<std::vector<Index>> anchors_by_category(C);
  for (std::size_t n = 0; n < spec.num_anchors; ++n) {
    anchor_interests[n] = pick_interests(rng, C, spec.max_interests);
    for (auto c : anchor_interests[n]) anchors_by_category[c].push_back(static_cast<Index>(n));
    auto history = sample_history(rng, spec, anchor_interests[n], items_by_category);
    const auto bucket = static_cast<FeatureId>(spec.num_anchors + rng.below(4));
    builder.add({ObjectKind::anchor, static_cast<ObjectId>(n),
                 {static_cast<FeatureId>(n), bucket}, std::move(history), {}, 0});
  }

  // Users: [age bucket, gender, city]. Browsed anchors lean towards anchors
  // sharing an interest.
  for (std::size_t p = 0; p < spec.num_users; ++p) {
    const auto interests = pick_interests(rng, C, spec.max_interests);
    auto history = sample_history(rng, spec, interests, items_by_category);
    const auto n_anchors = static_cast<std::size_t>(rng.between(
        static_cast<std::int64_t>(spec.browsed_anchor_range.first),
        static_cast<std::int64_t>(spec.browsed_anchor_range.second)));
    std::vector<ObjectId> browsed;
    for (std::size_t k = 0; k < n_anchors; ++k) {
      const auto& pool = anchors_by_category[interests[rng.below(interests.size())]];
      if (rng.bernoulli(spec.focus) && !pool.empty()) {
        browsed.push_back(pool[rng.below(pool.size())]);
      } else {
        browsed.push_back(static_cast<ObjectId>(rng.below(spec.num_anchors)));
      }
    }
    const auto age = static_cast<FeatureId>(rng.below(8));
    const auto gender = static_cast<FeatureId>(8 + rng.below(2));
    const auto city = static_cast<FeatureId>(10 + rng.below(16));
    builder.add({ObjectKind::user, static_cast<ObjectId>(p), {age, gender, city}, std::move(history),
                 std::move(browsed), 0});
  }

  SyntheticData out;
  const std::size_t cap = std::max<std::size_t>(
      {spec.history_len_range.second, spec.browsed_anchor_range.second, 1});
  out.catalog = builder.build(cap);

  out.pairs.reserve(spec.num_pairs);
  for (std::size_t k = 0; k < spec.num_pairs; ++k) {
    const auto u = static_cast<Index>(rng.below(spec.num_users));
    const auto a = static_cast<Index>(rng.below(spec.num_anchors));
    const double p = label_probability(category_jaccard(out.catalog, u, a), spec.signal_strength,
                                       spec.base_rate);
    out.pairs.push_back({u, a, rng.bernoulli(p) ? 1 : 0});
  }
  return out;
}

}  // namespace twins
