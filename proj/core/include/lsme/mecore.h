#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsme/embed.h"
#include "lsme/maskproxy.h"
#include "lsme/scenegen.h"
#include "lsme/variant.h"

namespace lsme {

inline constexpr int kDefaultQueriesPerEpisode = 15;

// A scene together with its ground-truth rendering.
struct PooledScene {
  SceneSpec spec;
  std::vector<MaskSet> gt_masks;  // one per view
  // [view][object] silhouette area with other objects removed.
  std::vector<std::vector<std::int64_t>> unoccluded_area;
  // Index of the single low-shot object, -1 for base scenes.
  int novel_index = -1;

  // Ground-truth view of the scene: mask areas and visible fractions.
  SceneObservation GroundTruthObservation() const;
  // True when the novel object passes the visibility rule in some view.
  bool NovelVisible() const;
};

struct ScenePool {
  CategorySplit split;
  RenderOptions render;
  std::vector<PooledScene> support;
  std::vector<PooledScene> query;
  std::vector<PooledScene> base;
};

struct PoolSizes {
  int support = 300;
  int query = 300;
  int base = 500;
};

// Index of the low-shot placement, or -1 if there is none. Throws
// DataIntegrityError when a scene holds more than one.
int NovelIndex(const SceneSpec& scene, const CategorySplit& split);

// Renders every view (or adopts `gt_masks` when given, checking their shape).
PooledScene MakePooledScene(SceneSpec spec, const CategorySplit& split,
                            const RenderOptions& render,
                            std::optional<std::vector<MaskSet>> gt_masks = {});

// Generates and renders the three scene sets for a variant's scene flags.
ScenePool BuildScenePool(const CategorySplit& split, SceneFlags flags,
                         const PoolSizes& sizes, std::uint64_t root_seed,
                         const SceneParams& params = {},
                         const RenderOptions& render = {});

struct SupportRef {
  int scene = 0;  // index into ScenePool::support
  int label = 0;  // index into Episode::novel_categories
};

struct Episode {
  Variant variant = Variant::kLsme;
  int n_way = 5;
  int k_shot = 1;
  std::vector<std::string> novel_categories;
  std::vector<SupportRef> support;  // k_shot per category, label-major
  std::vector<int> queries;         // indices into ScenePool::query
  std::uint64_t seed = 0;
};

std::uint64_t EpisodeSeed(std::uint64_t root_seed, int index);

// Draws n_way low-shot categories, k_shot support scenes per category whose
// novel object is visible, and n_queries query scenes whose novel object is
// visible and belongs to a drawn category. Inst-SObj additionally requires
// the query instance to equal one of its class's support instances; its
// supports are drawn only from instances that some query scene shows, and an
// episode takes fewer than n_queries queries when fewer match. Throws
// ConfigurationError when the pool cannot satisfy the request.
Episode SampleEpisode(const ScenePool& pool, const VariantConfig& variant,
                      int n_way, int k_shot, int n_queries, std::uint64_t seed);

std::vector<Episode> SampleEpisodes(const ScenePool& pool,
                                    const VariantConfig& variant, int n_way,
                                    int k_shot, int n_queries, int count,
                                    std::uint64_t root_seed);

struct AssignmentResult {
  std::string scene_id;
  int chosen = -1;        // -1 when no object was a candidate
  int ground_truth = -1;  // the novel object
  // Max similarity to the library; nullopt for objects without an embedding.
  std::vector<std::optional<double>> scores;
};

// Scores each object by its maximum cosine to the library and picks the
// minimum; ties go to the lowest index. Objects without an embedding are not
// candidates. Throws ContractViolation for an empty library.
AssignmentResult AssignSupport(std::span<const std::optional<Embedding>> objects,
                               const FeatureLibrary& library);

struct LabeledSupport {
  int label = 0;
  Embedding embedding;
};

struct QueryObject {
  std::string scene_id;
  int object_index = 0;
  int label = 0;
  Embedding embedding;
};

struct QueryPrediction {
  std::string scene_id;
  int object_index = 0;
  int predicted = 0;
  int truth = 0;
  double similarity = 0.0;
};

// Nearest support by cosine; ties go to the lowest support index. Throws
// ContractViolation when `supports` is empty.
std::vector<QueryPrediction> ClassifyQueries(std::span<const LabeledSupport> supports,
                                             std::span<const QueryObject> queries);

enum class MaskSourceKind { kGroundTruth, kRatio, kPredictedFiles };

struct MaskSource {
  MaskSourceKind kind = MaskSourceKind::kGroundTruth;
  double ratio = 0.0;
  std::filesystem::path predicted_dir;

  // "gt", "ratio:<r>" or a directory of predicted mask files.
  static MaskSource Parse(const std::string& text);
  std::string ToString() const;
};

struct RunOptions {
  ViewsMode views_mode = ViewsMode::kMean;
  MaskSource masks;
  // Seeds the mask-ratio degradation; independent of the ratio so degraded
  // masks are nested across a sweep.
  std::uint64_t root_seed = 0;
};

struct IouTally {
  double sum = 0.0;
  std::int64_t count = 0;
};

// Observation of one scene under the run's mask source. For variants that
// need localization the masks pass through confidence filtering, merging and
// Hungarian matching to ground truth; `iou` then collects per-object IoU over
// every ground-truth object present in a view (unmatched ones count as 0).
struct LocalizedScene {
  SceneObservation observation;
  std::optional<IouTally> iou;
};

LocalizedScene LocalizeScene(const PooledScene& scene, const VariantConfig& variant,
                             const RunOptions& options);

FeatureLibrary BuildPoolLibrary(const ScenePool& pool, const EmbeddingSource& source,
                                ViewsMode mode);

struct EpisodeResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::optional<std::vector<AssignmentResult>> assignments;
  std::vector<QueryPrediction> predictions;
  std::vector<std::string> skipped_query_scenes;
  std::optional<IouTally> support_iou;
  std::optional<IouTally> query_iou;
};

// Evaluates every episode. Episodes run concurrently against shared read-only
// inputs and come back in episode order. Categ-MObj and the single-object
// variants use the given support labels; SuppAssign and LSME assign them with
// the library. Throws DataIntegrityError for missing embeddings.
std::vector<EpisodeResult> RunVariant(const ScenePool& pool,
                                      const VariantConfig& variant,
                                      std::span<const Episode> episodes,
                                      const EmbeddingSource& source,
                                      const FeatureLibrary& library,
                                      const RunOptions& options);

nlohmann::json EpisodeToJson(const Episode& episode, const ScenePool& pool);
nlohmann::json EpisodeResultToJson(const EpisodeResult& result);

}  // namespace lsme
