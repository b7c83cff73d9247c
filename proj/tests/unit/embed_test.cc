#include "lsme/embed.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "lsme/error.h"
#include "lsme/json_io.h"
#include "oracles.h"

namespace lsme {
namespace {

Embedding E(std::vector<double> v) { return Embedding::FromRaw(std::span<const double>(v)); }

TEST(Embedding, NormalizesAndRejectsDegenerate) {
  const Embedding e = E({3.0, 4.0});
  EXPECT_DOUBLE_EQ(e.values()[0], 0.6);
  EXPECT_DOUBLE_EQ(e.values()[1], 0.8);
  EXPECT_THROW(E({0.0, 0.0}), DataIntegrityError);
  EXPECT_THROW(E({}), DataIntegrityError);
  EXPECT_THROW(E({1.0, NAN}), DataIntegrityError);
}

TEST(CosineSim, ExampleAndScaleInvariance) {
  EXPECT_NEAR(CosineSim(E({1, 2, 2}), E({2, 1, 2})), 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(CosineSim(E({1, 2, 2}), E({1, 2, 2})), 1.0, 1e-12);
  for (const double s : {0.01, 3.0, 1e6}) {
    EXPECT_NEAR(CosineSim(E({s, 2 * s, 2 * s}), E({2, 1, 2})), 8.0 / 9.0, 1e-12);
  }
  EXPECT_THROW(CosineSim(E({1, 0}), E({1, 0, 0})), ContractViolation);
}

TEST(AggregateViews, MeanAndSingle) {
  const std::vector<Embedding> views = {E({1, 0}), E({0, 1}), E({-1, 0})};
  const bool vis_raw[] = {true, true, false};
  const std::span<const bool> visible(vis_raw);
  const Embedding mean = AggregateViews(views, visible, ViewsMode::kMean);
  EXPECT_NEAR(mean.values()[0], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(mean.values()[1], std::sqrt(0.5), 1e-12);
  const bool second_raw[] = {false, true, true};
  EXPECT_EQ(AggregateViews(views, std::span<const bool>(second_raw), ViewsMode::kSingle),
            views[1]);
  const bool none_raw[] = {false, false, false};
  EXPECT_THROW(AggregateViews(views, std::span<const bool>(none_raw), ViewsMode::kMean),
               ObjectNotVisibleError);
  const bool short_raw[] = {true};
  EXPECT_THROW(AggregateViews(views, std::span<const bool>(short_raw), ViewsMode::kMean),
               ContractViolation);
  EXPECT_EQ(ParseViewsMode("single"), ViewsMode::kSingle);
  EXPECT_EQ(ViewsModeName(ViewsMode::kMean), "mean");
}

TEST(Synthetic, ZeroNoiseIsPrototype) {
  SynthWorldParams p;
  p.seed = 9;
  const EmbeddingKey k1{"a", 0, 0}, k2{"b", 1, 7};
  const Embedding x = SynthEmbedding(p, "chair", "chair_01", k1, 0.3);
  const Embedding y = SynthEmbedding(p, "chair", "chair_02", k2, 1.0);
  EXPECT_NEAR(CosineSim(x, y), 1.0, 1e-12);
  const auto proto = UnitDirection(9, "proto/chair", 64);
  EXPECT_NEAR(CosineSim(x, E(proto)), 1.0, 1e-12);
}

TEST(Synthetic, UnitNormAndDeterministic) {
  SynthWorldParams p{64, 1.5, 1.5, 8.0, 4};
  for (int i = 0; i < 50; ++i) {
    const EmbeddingKey key{"s" + std::to_string(i), i % 3, i % 20};
    const Embedding e = SynthEmbedding(p, "mug", "mug_03", key, i / 50.0);
    double norm = 0.0;
    for (const double v : e.values()) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_EQ(e, SynthEmbedding(p, "mug", "mug_03", key, i / 50.0));
  }
}

TEST(Synthetic, CategoryPrototypesAreNearlyOrthogonal) {
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = UnitDirection(1, "proto/c" + std::to_string(2 * i), 64);
    const auto b = UnitDirection(1, "proto/c" + std::to_string(2 * i + 1), 64);
    double dot = 0.0;
    for (int d = 0; d < 64; ++d) dot += a[d] * b[d];
    sum += dot;
  }
  EXPECT_LT(std::abs(sum / 10000.0), 0.05);
}

TEST(Synthetic, OcclusionLowersSimilarityToPrototype) {
  SynthWorldParams p{64, 0.0, 0.0, 2.0, 4};
  const Embedding proto = E(UnitDirection(4, "proto/mug", 64));
  double previous = 2.0;
  for (const double vf : {1.0, 0.8, 0.5, 0.2}) {
    const double c = CosineSim(proto, SynthEmbedding(p, "mug", "mug_00", {"s", 0, 0}, vf));
    EXPECT_LT(c, previous);
    previous = c;
  }
}

TEST(Synthetic, ValidateRejectsBadParams) {
  EXPECT_THROW((SynthWorldParams{0, 0, 0, 0, 0}).Validate(), ConfigurationError);
  EXPECT_THROW((SynthWorldParams{8, -1, 0, 0, 0}).Validate(), ConfigurationError);
  EXPECT_THROW((SynthWorldParams{8, 0, 0, INFINITY, 0}).Validate(), ConfigurationError);
  EXPECT_NO_THROW((SynthWorldParams{8, 0, 0, 5.0, 0}).Validate());
}

TEST(InfoNce, Examples) {
  const double zeros[] = {0.0, 0.0};
  EXPECT_NEAR(InfoNceLossFromSimilarities(0.0, zeros, 1.0), std::log(3.0), 1e-12);
  const double one_neg[] = {0.1};
  EXPECT_NEAR(InfoNceLossFromSimilarities(0.5, one_neg, 1.0), std::log1p(std::exp(-0.4)), 1e-12);
  EXPECT_NEAR(InfoNceLossFromSimilarities(0.5, one_neg, 1.0), 0.5130152524, 1e-9);
  const double neg[] = {0.5, -0.5};
  const double far[] = {-1.0};
  const double tiny = InfoNceLossFromSimilarities(1.0, far, 0.07);
  EXPECT_GT(tiny, 0.0);
  EXPECT_NEAR(tiny, std::exp(-2.0 / 0.07), 1e-24);
  EXPECT_LT(tiny, 4e-13);
  EXPECT_THROW(InfoNceLossFromSimilarities(1.0, neg, 0.0), ContractViolation);
  EXPECT_THROW(InfoNceLossFromSimilarities(1.0, neg, -1.0), ContractViolation);
  EXPECT_THROW(InfoNceLossFromSimilarities(1.0, {}, 1.0), ContractViolation);
}

TEST(InfoNce, EqualSimilaritiesGiveLogNPlusOne) {
  for (int n = 1; n <= 64; ++n) {
    std::vector<double> negatives(n, 0.3);
    EXPECT_NEAR(InfoNceLossFromSimilarities(0.3, negatives, 0.1), std::log(n + 1.0), 1e-12);
  }
}

TEST(InfoNce, DecreasesWithPositiveSimilarity) {
  const double neg[] = {0.1, 0.2, -0.4};
  double previous = INFINITY;
  for (double s = -1.0; s <= 1.0; s += 0.05) {
    const double loss = InfoNceLossFromSimilarities(s, neg, 0.5);
    EXPECT_LT(loss, previous);
    EXPECT_GT(loss, 0.0);
    previous = loss;
  }
  const Embedding q = E({1, 0}), pos = E({1, 1});
  const std::vector<Embedding> negs = {E({0, 1}), E({-1, 0})};
  const double sims[] = {0.0, -1.0};
  EXPECT_NEAR(InfoNceLoss(q, pos, negs, 0.2),
              InfoNceLossFromSimilarities(std::sqrt(0.5), sims, 0.2), 1e-12);
}

TEST(EmbeddingStore, InsertFindAt) {
  EmbeddingStore store(2, EmbeddingOrigin::kIngested);
  store.Insert({"s", 0, 0}, E({1, 0}));
  EXPECT_THROW(store.Insert({"s", 0, 0}, E({0, 1})), DataIntegrityError);
  EXPECT_THROW(store.Insert({"s", 0, 1}, E({0, 1, 0})), DataIntegrityError);
  EXPECT_NE(store.Find({"s", 0, 0}), nullptr);
  EXPECT_EQ(store.Find({"s", 1, 0}), nullptr);
  try {
    store.At({"missing", 2, 3});
    FAIL();
  } catch (const DataIntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}

TEST(EmbeddingFile, RoundTrip) {
  const auto dir = testing::FreshDir("embfile");
  const std::vector<EmbeddingKey> keys = {{"query-00002", 1, 5}, {"base-00000", 0, 0}};
  const std::vector<float> rows = {1, 2, 2, 0, 0, 3};
  WriteEmbeddingFile(dir / "emb.json", keys, 3, rows);
  EXPECT_TRUE(std::filesystem::exists(dir / "emb.bin"));
  EXPECT_EQ(std::filesystem::file_size(dir / "emb.bin"), 6 * 4u);
  const EmbeddingStore store = LoadEmbeddingFile(dir / "emb.json");
  EXPECT_EQ(store.dim(), 3);
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(store.origin(), EmbeddingOrigin::kIngested);
  EXPECT_NEAR(store.At(keys[0]).values()[1], 2.0 / 3.0, 1e-7);
  EXPECT_NEAR(store.At(keys[1]).values()[2], 1.0, 1e-12);

  WriteEmbeddingFile(dir / "again.json", store);
  EXPECT_EQ(LoadEmbeddingFile(dir / "again.json").entries(), store.entries());
}

void WriteRaw(const std::filesystem::path& manifest, const nlohmann::json& j,
              const std::vector<std::uint8_t>& blob) {
  std::ofstream(manifest) << j.dump();
  std::ofstream out(BlobPathFor(manifest), std::ios::binary);
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
}

// Bytes laid out by hand, as an external exporter would write them.
TEST(EmbeddingFile, HandWrittenLittleEndianBlob) {
  const auto dir = testing::FreshDir("embraw");
  const nlohmann::json manifest = {{"dim", 2}, {"count", 2}, {"dtype", "f32le"},
                                   {"keys", {{"support-00000", 0, 0}, {"support-00000", 1, 0}}}};
  // 1.0f = 00 00 80 3f, 0.0f = 0, -2.0f = 00 00 00 c0
  WriteRaw(dir / "m.json", manifest,
           {0, 0, 0x80, 0x3f, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xc0});
  const EmbeddingStore store = LoadEmbeddingFile(dir / "m.json");
  EXPECT_EQ(store.At({"support-00000", 0, 0}).values()[0], 1.0);
  EXPECT_EQ(store.At({"support-00000", 1, 0}).values()[1], -1.0);
}

TEST(EmbeddingFile, RejectsMalformedInputs) {
  const auto dir = testing::FreshDir("embbad");
  const std::vector<std::uint8_t> one_row = {0, 0, 0x80, 0x3f, 0, 0, 0, 0};
  nlohmann::json ok = {{"dim", 2}, {"count", 1}, {"dtype", "f32le"}, {"keys", {{"s", 0, 0}}}};

  WriteRaw(dir / "short.json", ok, {0, 0, 0x80, 0x3f});
  EXPECT_THROW(LoadEmbeddingFile(dir / "short.json"), DataIntegrityError);

  auto dtype = ok;
  dtype["dtype"] = "f64le";
  WriteRaw(dir / "dtype.json", dtype, one_row);
  EXPECT_THROW(LoadEmbeddingFile(dir / "dtype.json"), DataIntegrityError);

  auto dup = ok;
  dup["count"] = 2;
  dup["keys"] = {{"s", 0, 0}, {"s", 0, 0}};
  auto two_rows = one_row;
  two_rows.insert(two_rows.end(), one_row.begin(), one_row.end());
  WriteRaw(dir / "dup.json", dup, two_rows);
  EXPECT_THROW(LoadEmbeddingFile(dir / "dup.json"), DataIntegrityError);

  WriteRaw(dir / "zero.json", ok, {0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_THROW(LoadEmbeddingFile(dir / "zero.json"), DataIntegrityError);

  auto count = ok;
  count["count"] = 3;
  WriteRaw(dir / "count.json", count, one_row);
  EXPECT_THROW(LoadEmbeddingFile(dir / "count.json"), DataIntegrityError);

  std::ofstream(dir / "nojson.json") << "{not json";
  EXPECT_THROW(LoadEmbeddingFile(dir / "nojson.json"), DataIntegrityError);
  EXPECT_THROW(LoadEmbeddingFile(dir / "absent.json"), DataIntegrityError);
}

TEST(EmbeddingFile, ConstantStubGivesUnitCosine) {
  const auto dir = testing::FreshDir("embstub");
  std::vector<EmbeddingKey> keys;
  std::vector<float> rows;
  for (int i = 0; i < 10; ++i) {
    keys.push_back({"s" + std::to_string(i), i % 3, i});
    rows.insert(rows.end(), {0.5f, 0.5f, 0.5f, 0.5f});
  }
  WriteEmbeddingFile(dir / "stub.json", keys, 4, rows);
  const auto store = LoadEmbeddingFile(dir / "stub.json");
  for (const auto& key : keys) {
    EXPECT_NEAR(CosineSim(store.At(key), store.At(keys[0])), 1.0, 1e-12);
  }
}

TEST(Sources, StoreSyntheticAndRandom) {
  EmbeddingStore store(2, EmbeddingOrigin::kIngested);
  store.Insert({"s", 1, 4}, E({0, 1}));
  const StoreSource ss(store);
  const ObjectRef obj{"s", 1, "cat", "cat_0"};
  EXPECT_EQ(ss.Embed(obj, 4, 0.2), E({0, 1}));
  EXPECT_THROW(ss.Embed(obj, 5, 1.0), DataIntegrityError);

  const RandomSource rs(16, 3);
  EXPECT_EQ(rs.Embed(obj, 0, 1.0), rs.Embed(obj, 9, 0.1));
  EXPECT_NE(rs.Embed(obj, 0, 1.0), rs.Embed({"s", 0, "cat", "cat_0"}, 0, 1.0));
  EXPECT_THROW(RandomSource(0, 1), ConfigurationError);

  const SyntheticSource synth({16, 0.0, 0.0, 0.0, 2});
  EXPECT_NEAR(CosineSim(synth.Embed(obj, 0, 1.0), synth.Embed({"t", 0, "cat", "cat_9"}, 3, 0.5)),
              1.0, 1e-12);
}

class LibraryTest : public ::testing::Test {
 protected:
  CategorySplit split = testing::MakeSplit();
  PoseBank bank = SamplePoseBank(split.AllInstances(), 1);

  static SceneObservation AllVisible(const SceneSpec& s) {
    return SceneObservation(s.cameras.size(),
                            std::vector<ObjectView>(s.placements.size(), {1000, 1.0}));
  }
};

TEST_F(LibraryTest, OneEntryPerVisibleObject) {
  const auto scenes = GenerateScenes(split, bank, {true, true}, SceneRole::kBase, 500, 7);
  std::vector<SceneObservation> obs;
  for (const auto& s : scenes) obs.push_back(AllVisible(s));
  // Hide one object in every view of the first scene.
  for (auto& view : obs[0]) view[2] = {0, 0.0};
  const SyntheticSource source({32, 0.5, 0.5, 1.0, 5});
  const FeatureLibrary lib = BuildLibrary(source, scenes, obs, split, ViewsMode::kMean);
  EXPECT_EQ(lib.entries.size(), 1499u);
  EXPECT_EQ(lib.entries[0].scene_id, scenes[0].scene_id);
  EXPECT_EQ(lib.entries[2].object_index, 0);
  EXPECT_EQ(lib.entries[2].scene_id, scenes[1].scene_id);
  for (const auto& e : lib.entries) EXPECT_TRUE(split.IsBase(e.category));
  const FeatureLibrary again = BuildLibrary(source, scenes, obs, split, ViewsMode::kMean);
  for (std::size_t i = 0; i < lib.entries.size(); ++i) {
    EXPECT_EQ(lib.entries[i].embedding, again.entries[i].embedding);
  }
  EXPECT_TRUE(BuildLibrary(source, {}, {}, split, ViewsMode::kMean).entries.empty());
}

TEST_F(LibraryTest, RejectsLowshotObjectInBaseScene) {
  const auto scenes = GenerateScenes(split, bank, {true, true}, SceneRole::kSupport, 1, 7);
  const std::vector<SceneObservation> obs = {AllVisible(scenes[0])};
  const SyntheticSource source({8, 0, 0, 0, 0});
  EXPECT_THROW(BuildLibrary(source, scenes, obs, split, ViewsMode::kMean), DataIntegrityError);
}

TEST_F(LibraryTest, EmbedObjectSkipsInvisibleViews) {
  const auto scenes = GenerateScenes(split, bank, {true, true}, SceneRole::kBase, 1, 2);
  SceneObservation obs = AllVisible(scenes[0]);
  for (auto& view : obs) view[0] = {30, 0.1};
  const SyntheticSource source({8, 1, 1, 1, 0});
  EXPECT_FALSE(EmbedObject(source, scenes[0], 0, obs, ViewsMode::kMean).has_value());
  obs[3][0] = {31, 0.5};
  const auto e = EmbedObject(source, scenes[0], 0, obs, ViewsMode::kMean);
  ASSERT_TRUE(e.has_value());
  const auto& p = scenes[0].placements[0];
  EXPECT_NEAR(CosineSim(*e, source.Embed({scenes[0].scene_id, 0, p.category_id, p.instance_id},
                                         3, 0.5)),
              1.0, 1e-12);
}

}  // namespace
}  // namespace lsme
