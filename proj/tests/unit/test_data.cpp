#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "twins/data.hpp"
#include "twins/error.hpp"

using namespace twins;

namespace {

Dataset ingest(const std::string& catalog, const std::string& pairs) {
  std::istringstream c(catalog), p(pairs);
  return ingest_logs(c, p);
}

const char* kMinimalCatalog =
    R"({"kind":"item","id":10,"features":[0,1]}
{"kind":"anchor","id":20,"features":[0],"broadcast_items":[10]}
{"kind":"user","id":30,"features":[0],"browsed_items":[10],"browsed_anchors":[20]}
)";

/// Independent line check: a catalog line is well formed if it parses as a
/// JSON object with a known kind and an integer id and integer features.
bool well_formed(const std::string& line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!j.contains("kind") || !j.contains("id") || !j["id"].is_number_integer()) return false;
  if (!j.contains("features") || !j["features"].is_array()) return false;
  for (auto& f : j["features"])
    if (!f.is_number_unsigned()) return false;
  return j["kind"] == "item" ? !j["features"].empty() : (j["kind"] == "user" || j["kind"] == "anchor");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::string catalog_text(const Catalog& c) {
  std::ostringstream out;
  write_catalog(out, c);
  return out.str();
}

}  // namespace

TEST(Ingest, MinimalFiles) {
  auto ds = ingest(kMinimalCatalog, R"({"user":30,"anchor":20,"label":1})");
  EXPECT_EQ(ds.catalog.users().size(), 1u);
  EXPECT_EQ(ds.catalog.anchors().size(), 1u);
  EXPECT_EQ(ds.catalog.items().size(), 1u);
  ASSERT_EQ(ds.pairs.size(), 1u);
  EXPECT_EQ(ds.pairs[0].label, 1);
  EXPECT_TRUE(ds.rejected_catalog_lines.empty());
}

TEST(Ingest, UnknownAnchorInPairNamesTheLine) {
  try {
    ingest(kMinimalCatalog, "{\"user\":30,\"anchor\":20,\"label\":1}\n{\"user\":30,\"anchor\":99,\"label\":0}\n");
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("99"), std::string::npos) << msg;
  }
}

TEST(Ingest, DanglingHistoryReferenceNamesIdAndLine) {
  const std::string cat = std::string(kMinimalCatalog) + R"({"kind":"user","id":31,"features":[1],"browsed_items":[77]})";
  try {
    ingest(cat, "");
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("77"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
  }
}

TEST(Ingest, EmptyHistoriesAreAccepted) {
  auto ds = ingest(R"({"kind":"user","id":1,"features":[0]}
{"kind":"anchor","id":2,"features":[0]})",
                   R"({"user":1,"anchor":2,"label":0})");
  EXPECT_TRUE(ds.catalog.user(0).browsed_items.empty());
  EXPECT_TRUE(ds.catalog.anchor(0).broadcast_items.empty());
}

TEST(Ingest, MalformedLinesAreCountedAgainstIndependentValidator) {
  Rng rng(4);
  std::ostringstream cat;
  std::vector<std::string> lines;
  for (int i = 0; i < 1000; ++i) lines.push_back(R"({"kind":"item","id":)" + std::to_string(i) + R"(,"features":[)" +
                                                 std::to_string(i % 7) + "]}");
  const std::vector<std::string> broken = {
      R"({"kind":"item","id":5000,"features":[]})", R"({"kind":"item","id":5001})", "not json at all",
      R"({"kind":"gadget","id":5002,"features":[1]})", R"({"kind":"item","id":"x","features":[1]})", "[1,2,3]",
      R"({"kind":"item","id":5003,"features":[-4]})", R"({"kind":"item","id":5004,"features":[1.5]})",
      R"({"kind":"item","features":[1]})", R"({"kind":"item","id":5005,"features":[1])"};
  std::vector<std::size_t> slots;
  for (std::size_t k = 0; k < broken.size(); ++k) slots.push_back(rng.below(lines.size()));
  std::sort(slots.begin(), slots.end());
  for (std::size_t k = 0; k < broken.size(); ++k) lines[slots[k]] = broken[k];
  std::size_t expect_bad = 0;
  for (auto& l : lines) {
    cat << l << '\n';
    expect_bad += !well_formed(l);
  }
  ASSERT_EQ(expect_bad, 10u);
  auto ds = ingest(cat.str(), "");
  EXPECT_EQ(ds.rejected_catalog_lines.size(), 10u);
  EXPECT_EQ(ds.catalog.items().size(), 990u);
  for (std::size_t k = 0; k < broken.size(); ++k) EXPECT_EQ(ds.rejected_catalog_lines[k].line, slots[k] + 1);
}

TEST(Ingest, HistoriesKeepMostRecentEntries) {
  std::ostringstream cat;
  for (int i = 0; i < 5; ++i) cat << R"({"kind":"item","id":)" << i << R"(,"features":[0]})" << '\n';
  cat << R"({"kind":"anchor","id":9,"features":[0],"broadcast_items":[0,1,2,3,4]})" << '\n';
  std::istringstream c(cat.str()), p("");
  IngestOptions opt;
  opt.max_history = 2;
  auto ds = ingest_logs(c, p, opt);
  const auto& h = ds.catalog.anchor(0).broadcast_items;
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(ds.catalog.item(h[0]).id, 3);
  EXPECT_EQ(ds.catalog.item(h[1]).id, 4);
}

TEST(Ingest, StringFeaturesGoThroughVocabulary) {
  Vocabulary vocab;
  IngestOptions opt;
  opt.vocabulary = &vocab;
  std::istringstream c(R"({"kind":"item","id":1,"features":["shoes","red"]}
{"kind":"item","id":2,"features":["hats","red"]})"),
      p("");
  auto ds = ingest_logs(c, p, opt);
  EXPECT_EQ(ds.catalog.item(0).features, (std::vector<FeatureId>{0, 1}));
  EXPECT_EQ(ds.catalog.item(1).features, (std::vector<FeatureId>{2, 1}));
  auto path = std::filesystem::temp_directory_path() / "twins_vocab_test.tsv";
  vocab.save(path);
  EXPECT_EQ(Vocabulary::load(path), vocab);
  std::filesystem::remove(path);
}

TEST(CatalogProperty, SerializeThenIngestIsIdentity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec;
    spec.num_users = 30;
    spec.num_anchors = 8;
    spec.num_items = 60;
    spec.num_pairs = 50;
    spec.history_len_range = {0, 12};
    spec.seed = seed;
    auto data = generate_synthetic(spec);
    std::ostringstream pairs;
    write_pairs(pairs, data.catalog, data.pairs);
    auto ds = ingest(catalog_text(data.catalog), pairs.str());
    EXPECT_EQ(ds.catalog, data.catalog);
    EXPECT_EQ(ds.pairs, data.pairs);
  }
}

TEST(CatalogProperty, HistoriesResolve) {
  auto data = generate_synthetic({});
  const auto& c = data.catalog;
  for (const auto& u : c.users()) {
    for (auto i : u.browsed_items) EXPECT_LT(i, c.items().size());
    for (auto a : u.browsed_anchors) EXPECT_LT(a, c.anchors().size());
  }
  for (const auto& a : c.anchors())
    for (auto i : a.broadcast_items) EXPECT_LT(i, c.items().size());
  for (const auto& it : c.items()) EXPECT_FALSE(it.features.empty());
  for (const auto& p : data.pairs) {
    EXPECT_LT(p.user, c.users().size());
    EXPECT_LT(p.anchor, c.anchors().size());
  }
}

TEST(Split, ExactAndLargestRemainderSizes) {
  EXPECT_EQ(split_sizes(10, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{6, 2, 2}));
  // 11 * (0.6, 0.2, 0.2) = (6.6, 2.2, 2.2): floors (6,2,2), one left, largest remainder is 0.6.
  EXPECT_EQ(split_sizes(11, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{7, 2, 2}));
  EXPECT_THROW(split_sizes(10, {0.5, 0.2, 0.2}), InputError);
}

TEST(Split, DeterministicAndDegenerate) {
  std::vector<LabeledPair> pairs;
  for (Index i = 0; i < 10; ++i) pairs.push_back({i, i, static_cast<int>(i % 2)});
  auto a = split_dataset(pairs, {0.6, 0.2, 0.2}, 7);
  auto b = split_dataset(pairs, {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.size(), 6u);

  auto small = split_dataset({pairs[0], pairs[1]}, {0.6, 0.2, 0.2}, 1);
  EXPECT_TRUE(small.degenerate);
  EXPECT_EQ(small.train.size(), 2u);
  EXPECT_TRUE(small.validation.empty() && small.test.empty());
}

TEST(SplitProperty, PartitionIsExhaustiveAndDisjoint) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabeledPair> pairs;
    const auto n = rng.between(0, 60);
    for (std::int64_t i = 0; i < n; ++i)
      pairs.push_back({static_cast<Index>(rng.below(5)), static_cast<Index>(rng.below(5)), static_cast<int>(rng.below(2))});
    auto s = split_dataset(pairs, {0.6, 0.2, 0.2}, rng.next_u64());
    std::vector<LabeledPair> all = s.train;
    all.insert(all.end(), s.validation.begin(), s.validation.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(all, sorted);
  }
}

TEST(Synthetic, LabelProbabilityClamp) {
  EXPECT_DOUBLE_EQ(label_probability(1.0, 0.9, 0.08), 0.98);
  EXPECT_DOUBLE_EQ(label_probability(0.0, 0.9, 0.0), 0.02);
  EXPECT_DOUBLE_EQ(label_probability(0.5, 0.4, 0.08), 0.28);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.seed = 7;
  auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(catalog_text(a.catalog), catalog_text(b.catalog));
  EXPECT_EQ(a.pairs, b.pairs);
  spec.seed = 8;
  EXPECT_NE(catalog_text(generate_synthetic(spec).catalog), catalog_text(a.catalog));
}

TEST(Synthetic, NoSignalMeansNoCorrelation) {
  SyntheticSpec spec;
  spec.num_pairs = 10000;
  spec.signal_strength = 0.0;
  spec.seed = 3;
  auto data = generate_synthetic(spec);
  std::vector<double> j, y;
  for (const auto& p : data.pairs) {
    j.push_back(category_jaccard(data.catalog, p.user, p.anchor));
    y.push_back(p.label);
  }
  EXPECT_LE(std::abs(pearson(j, y)), 0.02);

  spec.signal_strength = 0.9;
  data = generate_synthetic(spec);
  j.clear();
  y.clear();
  for (const auto& p : data.pairs) {
    j.push_back(category_jaccard(data.catalog, p.user, p.anchor));
    y.push_back(p.label);
  }
  EXPECT_GT(pearson(j, y), 0.2);
}

TEST(Synthetic, JaccardOfIdenticalHistoriesIsOne) {
  auto data = oracle::micro_data(1, 3, 4);
  const auto& c = data.catalog;
  for (Index u = 0; u < c.users().size(); ++u) {
    for (Index a = 0; a < c.anchors().size(); ++a) {
      const double jac = category_jaccard(c, u, a);
      EXPECT_GE(jac, 0.0);
      EXPECT_LE(jac, 1.0);
    }
  }
  CatalogBuilder b;
  b.add({ObjectKind::item, 1, {4}, {}, {}, 0});
  b.add({ObjectKind::item, 2, {5}, {}, {}, 0});
  b.add({ObjectKind::user, 1, {0}, {1, 2}, {}, 0});
  b.add({ObjectKind::anchor, 1, {0}, {2, 1, 1}, {}, 0});
  auto cat = b.build();
  EXPECT_DOUBLE_EQ(category_jaccard(cat, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(label_probability(category_jaccard(cat, 0, 0), 0.9, 0.08), 0.98);
}
