#include "lsme/mecore.h"

#include <algorithm>
#include <map>
#include <set>

#include "lsme/error.h"
#include "lsme/parallel.h"
#include "lsme/rng.h"

namespace lsme {
namespace {

// Draws k distinct entries in draw order.
std::vector<int> SampleWithoutReplacement(std::vector<int> pool, std::size_t k,
                                          Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.UniformIndex(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

std::uint64_t MaskRatioSeed(std::uint64_t root, const std::string& scene_id,
                            int view, int object) {
  return DeriveSeed(root, "maskratio/" + scene_id + "/" + std::to_string(view) +
                              "/" + std::to_string(object));
}

MaskSet PredictionsFor(const PooledScene& scene, int view, const MaskSource& source,
                       std::uint64_t root_seed) {
  const MaskSet& gt = scene.gt_masks[view];
  MaskSet raw;
  raw.scene_id = gt.scene_id;
  raw.view_id = view;
  raw.width = gt.width;
  raw.height = gt.height;
  raw.is_ground_truth = false;
  switch (source.kind) {
    case MaskSourceKind::kGroundTruth:
    case MaskSourceKind::kRatio:
      for (const auto& m : gt.masks) {
        if (m.area == 0) continue;
        if (source.kind == MaskSourceKind::kGroundTruth) {
          raw.masks.push_back(m);
        } else {
          raw.masks.push_back(ApplyMaskRatio(
              m, source.ratio,
              MaskRatioSeed(root_seed, scene.spec.scene_id, view, m.object_index)));
        }
      }
      break;
    case MaskSourceKind::kPredictedFiles: {
      const auto path = MaskFilePath(source.predicted_dir, scene.spec.scene_id, view);
      if (!std::filesystem::exists(path)) {
        throw DataIntegrityError("missing predicted masks for (" +
                                 scene.spec.scene_id + ", view " +
                                 std::to_string(view) + "): " + path.string());
      }
      raw = ReadMaskFile(path, false);
      if (raw.width != gt.width || raw.height != gt.height) {
        throw DataIntegrityError("predicted masks for " + scene.spec.scene_id +
                                 " view " + std::to_string(view) +
                                 " have the wrong resolution");
      }
      break;
    }
  }
  return raw;
}

struct SceneFeatures {
  std::vector<std::optional<Embedding>> objects;
  std::optional<IouTally> iou;
};

SceneFeatures Featurize(const PooledScene& scene, const VariantConfig& variant,
                        const RunOptions& options, const EmbeddingSource& source,
                        const std::vector<int>& objects) {
  LocalizedScene localized = LocalizeScene(scene, variant, options);
  SceneFeatures out;
  out.iou = localized.iou;
  out.objects.resize(scene.spec.placements.size());
  for (const int k : objects) {
    out.objects[k] =
        EmbedObject(source, scene.spec, k, localized.observation, options.views_mode);
  }
  return out;
}

void Accumulate(std::optional<IouTally>& into, const std::optional<IouTally>& add) {
  if (!add) return;
  if (!into) into = IouTally{};
  into->sum += add->sum;
  into->count += add->count;
}

nlohmann::json TallyToJson(const std::optional<IouTally>& tally) {
  if (!tally) return nullptr;
  return {{"sum", tally->sum}, {"count", tally->count}};
}

}  // namespace

SceneObservation PooledScene::GroundTruthObservation() const {
  SceneObservation obs(gt_masks.size());
  for (std::size_t v = 0; v < gt_masks.size(); ++v) {
    obs[v].assign(spec.placements.size(), ObjectView{});
    for (const auto& m : gt_masks[v].masks) {
      const std::int64_t full = unoccluded_area[v][m.object_index];
      obs[v][m.object_index] = {
          m.area, full > 0 ? std::min(1.0, static_cast<double>(m.area) / full) : 0.0};
    }
  }
  return obs;
}

bool PooledScene::NovelVisible() const {
  if (novel_index < 0) return false;
  return std::any_of(gt_masks.begin(), gt_masks.end(), [&](const MaskSet& set) {
    return std::any_of(set.masks.begin(), set.masks.end(), [&](const auto& m) {
      return m.object_index == novel_index && IsVisible(m);
    });
  });
}

int NovelIndex(const SceneSpec& scene, const CategorySplit& split) {
  int found = -1;
  for (int k = 0; k < static_cast<int>(scene.placements.size()); ++k) {
    if (!split.IsLowshot(scene.placements[k].category_id)) continue;
    if (found >= 0) {
      throw DataIntegrityError("scene " + scene.scene_id +
                               " holds more than one low-shot object");
    }
    found = k;
  }
  return found;
}

PooledScene MakePooledScene(SceneSpec spec, const CategorySplit& split,
                            const RenderOptions& render,
                            std::optional<std::vector<MaskSet>> gt_masks) {
  PooledScene scene;
  scene.novel_index = NovelIndex(spec, split);
  if (spec.role != SceneRole::kBase && scene.novel_index < 0) {
    throw DataIntegrityError(std::string(RoleName(spec.role)) + " scene " +
                             spec.scene_id + " has no low-shot object");
  }
  const int views = static_cast<int>(spec.cameras.size());
  const int n_objects = static_cast<int>(spec.placements.size());
  if (gt_masks && static_cast<int>(gt_masks->size()) != views) {
    throw DataIntegrityError("scene " + spec.scene_id + " has " +
                             std::to_string(views) + " views but " +
                             std::to_string(gt_masks->size()) + " mask files");
  }
  for (int v = 0; v < views; ++v) {
    ViewRender rendered = RenderView(spec, v, render);
    scene.unoccluded_area.push_back(std::move(rendered.unoccluded_area));
    if (!gt_masks) {
      scene.gt_masks.push_back(std::move(rendered.masks));
      continue;
    }
    MaskSet& given = (*gt_masks)[v];
    if (given.width != render.width || given.height != render.height ||
        given.view_id != v || given.scene_id != spec.scene_id) {
      throw DataIntegrityError("mask file for " + spec.scene_id + " view " +
                               std::to_string(v) + " does not match the scene");
    }
    std::sort(given.masks.begin(), given.masks.end(),
              [](const auto& a, const auto& b) { return a.object_index < b.object_index; });
    for (int k = 0; k < static_cast<int>(given.masks.size()); ++k) {
      if (given.masks[k].object_index != k || k >= n_objects) {
        throw DataIntegrityError("mask file for " + spec.scene_id + " view " +
                                 std::to_string(v) + " has bad object indices");
      }
    }
    if (static_cast<int>(given.masks.size()) != n_objects) {
      throw DataIntegrityError("mask file for " + spec.scene_id + " view " +
                               std::to_string(v) + " misses objects");
    }
    given.is_ground_truth = true;
    scene.gt_masks.push_back(std::move(given));
  }
  scene.spec = std::move(spec);
  return scene;
}

ScenePool BuildScenePool(const CategorySplit& split, SceneFlags flags,
                         const PoolSizes& sizes, std::uint64_t root_seed,
                         const SceneParams& params, const RenderOptions& render) {
  split.Validate();
  const auto instances = split.AllInstances();
  const PoseBank bank = SamplePoseBank(instances, PoseBankSeed(root_seed));
  ScenePool pool;
  pool.split = split;
  pool.render = render;
  for (const auto& [role, count, target] :
       {std::tuple{SceneRole::kSupport, sizes.support, &pool.support},
        std::tuple{SceneRole::kQuery, sizes.query, &pool.query},
        std::tuple{SceneRole::kBase, sizes.base, &pool.base}}) {
    auto specs = GenerateScenes(split, bank, flags, role, count, root_seed, params);
    target->resize(specs.size());
    ParallelFor(specs.size(), [&, target = target](std::size_t i) {
      (*target)[i] = MakePooledScene(std::move(specs[i]), split, render);
    });
  }
  return pool;
}

std::uint64_t EpisodeSeed(std::uint64_t root_seed, int index) {
  return DeriveSeed(root_seed, "episode/" + std::to_string(index));
}

Episode SampleEpisode(const ScenePool& pool, const VariantConfig& variant,
                      int n_way, int k_shot, int n_queries, std::uint64_t seed) {
  if (n_way < 1 || k_shot < 1 || n_queries < 1) {
    throw ConfigurationError("n_way, k_shot and queries must all be >= 1");
  }
  auto check_shape = [&](const std::vector<PooledScene>& scenes) {
    for (const auto& s : scenes) {
      const bool multi = s.spec.placements.size() > 1;
      if (multi != variant.multi_object) {
        throw ConfigurationError("scene " + s.spec.scene_id + " has " +
                                 std::to_string(s.spec.placements.size()) +
                                 " objects, which does not fit variant " +
                                 std::string(VariantName(variant.variant)));
      }
    }
  };
  check_shape(pool.support);
  check_shape(pool.query);

  auto novel_category = [](const PooledScene& s) -> const std::string& {
    return s.spec.placements[s.novel_index].category_id;
  };
  auto novel_instance = [](const PooledScene& s) -> const std::string& {
    return s.spec.placements[s.novel_index].instance_id;
  };

  std::map<std::string, std::vector<int>> query_by_category;
  std::set<std::string> query_instances;
  for (int i = 0; i < static_cast<int>(pool.query.size()); ++i) {
    if (pool.query[i].NovelVisible()) {
      query_by_category[novel_category(pool.query[i])].push_back(i);
      query_instances.insert(novel_instance(pool.query[i]));
    }
  }
  // Inst-SObj supports must show an instance some query scene also shows.
  std::map<std::string, std::vector<int>> support_by_category;
  for (int i = 0; i < static_cast<int>(pool.support.size()); ++i) {
    const PooledScene& s = pool.support[i];
    if (!s.NovelVisible()) continue;
    if (variant.same_instance && !query_instances.contains(novel_instance(s))) continue;
    support_by_category[novel_category(s)].push_back(i);
  }

  std::vector<std::string> usable;
  for (const auto& c : pool.split.lowshot_categories) {
    if (support_by_category[c].size() >= static_cast<std::size_t>(k_shot) &&
        !query_by_category[c].empty()) {
      usable.push_back(c);
    }
  }
  if (usable.size() < static_cast<std::size_t>(n_way)) {
    throw ConfigurationError("only " + std::to_string(usable.size()) +
                             " low-shot categories have enough visible scenes for " +
                             std::to_string(n_way) + "-way " +
                             std::to_string(k_shot) + "-shot episodes");
  }

  Rng rng(seed);
  Episode episode;
  episode.variant = variant.variant;
  episode.n_way = n_way;
  episode.k_shot = k_shot;
  episode.seed = seed;
  std::vector<int> order(usable.size());
  for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
  for (const int c : SampleWithoutReplacement(order, n_way, rng)) {
    episode.novel_categories.push_back(usable[c]);
  }

  std::vector<std::set<std::string>> support_instances(n_way);
  for (int label = 0; label < n_way; ++label) {
    const auto& candidates = support_by_category[episode.novel_categories[label]];
    for (const int s : SampleWithoutReplacement(candidates, k_shot, rng)) {
      episode.support.push_back({s, label});
      support_instances[label].insert(novel_instance(pool.support[s]));
    }
  }

  std::vector<int> query_candidates;
  for (int label = 0; label < n_way; ++label) {
    for (const int q : query_by_category[episode.novel_categories[label]]) {
      if (variant.same_instance &&
          !support_instances[label].contains(novel_instance(pool.query[q]))) {
        continue;
      }
      query_candidates.push_back(q);
    }
  }
  std::sort(query_candidates.begin(), query_candidates.end());
  std::size_t take = static_cast<std::size_t>(n_queries);
  if (variant.same_instance) {
    take = std::min(take, query_candidates.size());
  } else if (query_candidates.size() < take) {
    throw ConfigurationError("episode needs " + std::to_string(n_queries) +
                             " query scenes but only " +
                             std::to_string(query_candidates.size()) + " qualify");
  }
  episode.queries = SampleWithoutReplacement(query_candidates, take, rng);
  return episode;
}

std::vector<Episode> SampleEpisodes(const ScenePool& pool,
                                    const VariantConfig& variant, int n_way,
                                    int k_shot, int n_queries, int count,
                                    std::uint64_t root_seed) {
  std::vector<Episode> episodes;
  episodes.reserve(std::max(count, 0));
  for (int e = 0; e < count; ++e) {
    episodes.push_back(
        SampleEpisode(pool, variant, n_way, k_shot, n_queries, EpisodeSeed(root_seed, e)));
  }
  return episodes;
}

AssignmentResult AssignSupport(std::span<const std::optional<Embedding>> objects,
                               const FeatureLibrary& library) {
  if (library.entries.empty()) {
    throw ContractViolation("support assignment needs a non-empty feature library");
  }
  AssignmentResult result;
  result.scores.resize(objects.size());
  double best = 0.0;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    if (!objects[k]) continue;
    double score = -1.0;
    for (const auto& entry : library.entries) {
      score = std::max(score, CosineSim(*objects[k], entry.embedding));
    }
    result.scores[k] = score;
    if (result.chosen < 0 || score < best) {
      best = score;
      result.chosen = static_cast<int>(k);
    }
  }
  return result;
}

std::vector<QueryPrediction> ClassifyQueries(std::span<const LabeledSupport> supports,
                                             std::span<const QueryObject> queries) {
  if (supports.empty()) throw ContractViolation("classification needs supports");
  std::vector<QueryPrediction> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    std::size_t best = 0;
    double best_sim = CosineSim(q.embedding, supports[0].embedding);
    for (std::size_t s = 1; s < supports.size(); ++s) {
      const double sim = CosineSim(q.embedding, supports[s].embedding);
      if (sim > best_sim) {
        best_sim = sim;
        best = s;
      }
    }
    out.push_back({q.scene_id, q.object_index, supports[best].label, q.label, best_sim});
  }
  return out;
}

MaskSource MaskSource::Parse(const std::string& text) {
  MaskSource source;
  if (text == "gt") return source;
  if (text.rfind("ratio:", 0) == 0) {
    source.kind = MaskSourceKind::kRatio;
    try {
      std::size_t used = 0;
      source.ratio = std::stod(text.substr(6), &used);
      if (used != text.size() - 6) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigurationError("bad mask ratio in '" + text + "'");
    }
    if (!(source.ratio >= 0.0 && source.ratio <= 1.0)) {
      throw ConfigurationError("mask ratio must lie in [0, 1], got '" + text + "'");
    }
    return source;
  }
  source.kind = MaskSourceKind::kPredictedFiles;
  source.predicted_dir = text;
  return source;
}

std::string MaskSource::ToString() const {
  switch (kind) {
    case MaskSourceKind::kGroundTruth:
      return "gt";
    case MaskSourceKind::kRatio: {
      nlohmann::json r = ratio;
      return "ratio:" + r.dump();
    }
    case MaskSourceKind::kPredictedFiles:
      return predicted_dir.string();
  }
  return "gt";
}

LocalizedScene LocalizeScene(const PooledScene& scene, const VariantConfig& variant,
                             const RunOptions& options) {
  LocalizedScene out;
  if (!variant.needs_localization) {
    out.observation = scene.GroundTruthObservation();
    return out;
  }
  const int views = static_cast<int>(scene.gt_masks.size());
  const std::size_t n_objects = scene.spec.placements.size();
  IouTally tally;
  out.observation.resize(views);
  for (int v = 0; v < views; ++v) {
    const MaskSet& gt = scene.gt_masks[v];
    const MaskSet predicted =
        PostprocessPredictions(PredictionsFor(scene, v, options.masks, options.root_seed));
    const Assignment match =
        HungarianMatch(IouCostMatrix(predicted.masks, gt.masks));

    auto& obs = out.observation[v];
    obs.assign(n_objects, ObjectView{});
    std::vector<double> object_iou(gt.masks.size(), 0.0);
    for (const auto& [p, g] : match.pairs) {
      const InstanceMask& pred = predicted.masks[p];
      const InstanceMask& truth = gt.masks[g];
      const double iou = MaskIou(pred, truth);
      if (iou <= 0.0) continue;
      object_iou[g] = iou;
      const std::int64_t full = scene.unoccluded_area[v][truth.object_index];
      const double fraction =
          full > 0 ? std::min(1.0, static_cast<double>(IntersectionArea(pred, truth)) / full)
                   : 0.0;
      obs[truth.object_index] = {pred.area, fraction};
    }
    for (std::size_t g = 0; g < gt.masks.size(); ++g) {
      if (gt.masks[g].area == 0) continue;
      tally.sum += object_iou[g];
      ++tally.count;
    }
  }
  out.iou = tally;
  return out;
}

FeatureLibrary BuildPoolLibrary(const ScenePool& pool, const EmbeddingSource& source,
                                ViewsMode mode) {
  std::vector<SceneSpec> specs;
  std::vector<SceneObservation> observations;
  specs.reserve(pool.base.size());
  observations.reserve(pool.base.size());
  for (const auto& s : pool.base) {
    specs.push_back(s.spec);
    observations.push_back(s.GroundTruthObservation());
  }
  return BuildLibrary(source, specs, observations, pool.split, mode);
}

std::vector<EpisodeResult> RunVariant(const ScenePool& pool,
                                      const VariantConfig& variant,
                                      std::span<const Episode> episodes,
                                      const EmbeddingSource& source,
                                      const FeatureLibrary& library,
                                      const RunOptions& options) {
  if (variant.needs_support_assignment && library.entries.empty()) {
    throw ContractViolation("support assignment needs a non-empty feature library");
  }
  std::set<int> support_ids;
  std::set<int> query_ids;
  for (const auto& e : episodes) {
    for (const auto& s : e.support) support_ids.insert(s.scene);
    for (const int q : e.queries) query_ids.insert(q);
  }

  // Scene features do not depend on the episode, so each referenced scene is
  // localized and embedded once.
  std::vector<std::optional<SceneFeatures>> support_features(pool.support.size());
  std::vector<std::optional<SceneFeatures>> query_features(pool.query.size());
  const std::vector<int> support_list(support_ids.begin(), support_ids.end());
  const std::vector<int> query_list(query_ids.begin(), query_ids.end());
  ParallelFor(support_list.size() + query_list.size(), [&](std::size_t i) {
    const bool is_support = i < support_list.size();
    const int id = is_support ? support_list[i]
                              : query_list[i - support_list.size()];
    const PooledScene& scene = is_support ? pool.support.at(id) : pool.query.at(id);
    std::vector<int> wanted;
    for (int k = 0; k < static_cast<int>(scene.spec.placements.size()); ++k) {
      const bool lowshot = k == scene.novel_index;
      if (lowshot || (is_support && variant.needs_support_assignment)) {
        wanted.push_back(k);
      }
    }
    auto features = Featurize(scene, variant, options, source, wanted);
    (is_support ? support_features : query_features)[id] = std::move(features);
  });

  std::vector<EpisodeResult> results(episodes.size());
  ParallelFor(episodes.size(), [&](std::size_t e) {
    const Episode& episode = episodes[e];
    EpisodeResult& result = results[e];
    result.index = static_cast<int>(e);
    result.seed = episode.seed;

    std::vector<LabeledSupport> supports;
    if (variant.needs_support_assignment) result.assignments.emplace();
    for (const auto& ref : episode.support) {
      const PooledScene& scene = pool.support[ref.scene];
      const SceneFeatures& features = *support_features[ref.scene];
      Accumulate(result.support_iou, features.iou);
      if (variant.needs_support_assignment) {
        AssignmentResult a = AssignSupport(features.objects, library);
        a.scene_id = scene.spec.scene_id;
        a.ground_truth = scene.novel_index;
        if (a.chosen >= 0) supports.push_back({ref.label, *features.objects[a.chosen]});
        result.assignments->push_back(std::move(a));
      } else {
        const auto& novel = features.objects[scene.novel_index];
        if (!novel) {
          throw ObjectNotVisibleError("novel object of support scene " +
                                      scene.spec.scene_id + " is not visible");
        }
        supports.push_back({ref.label, *novel});
      }
    }

    std::vector<QueryObject> query_objects;
    for (const int q : episode.queries) {
      const PooledScene& scene = pool.query[q];
      const SceneFeatures& features = *query_features[q];
      Accumulate(result.query_iou, features.iou);
      bool any = false;
      for (int k = 0; k < static_cast<int>(scene.spec.placements.size()); ++k) {
        const auto& category = scene.spec.placements[k].category_id;
        const auto it = std::find(episode.novel_categories.begin(),
                                  episode.novel_categories.end(), category);
        if (it == episode.novel_categories.end() || !features.objects[k]) continue;
        query_objects.push_back(
            {scene.spec.scene_id, k,
             static_cast<int>(it - episode.novel_categories.begin()),
             *features.objects[k]});
        any = true;
      }
      if (!any) result.skipped_query_scenes.push_back(scene.spec.scene_id);
    }

    if (supports.empty()) {
      // Every support assignment came up empty: nothing to match against.
      for (const auto& q : query_objects) {
        result.predictions.push_back({q.scene_id, q.object_index, -1, q.label, 0.0});
      }
    } else {
      result.predictions = ClassifyQueries(supports, query_objects);
    }
  });
  return results;
}

nlohmann::json EpisodeToJson(const Episode& episode, const ScenePool& pool) {
  nlohmann::json support = nlohmann::json::array();
  for (const auto& s : episode.support) {
    support.push_back({{"scene_id", pool.support.at(s.scene).spec.scene_id},
                       {"label", s.label}});
  }
  nlohmann::json queries = nlohmann::json::array();
  for (const int q : episode.queries) queries.push_back(pool.query.at(q).spec.scene_id);
  return {{"variant", VariantName(episode.variant)},
          {"n_way", episode.n_way},
          {"k_shot", episode.k_shot},
          {"seed", episode.seed},
          {"novel_categories", episode.novel_categories},
          {"support", std::move(support)},
          {"queries", std::move(queries)}};
}

nlohmann::json EpisodeResultToJson(const EpisodeResult& result) {
  nlohmann::json assignments = nullptr;
  if (result.assignments) {
    assignments = nlohmann::json::array();
    for (const auto& a : *result.assignments) {
      nlohmann::json scores = nlohmann::json::array();
      for (const auto& s : a.scores) {
        scores.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
      }
      assignments.push_back({{"scene_id", a.scene_id},
                             {"chosen", a.chosen},
                             {"ground_truth", a.ground_truth},
                             {"scores", std::move(scores)}});
    }
  }
  nlohmann::json predictions = nlohmann::json::array();
  for (const auto& p : result.predictions) {
    predictions.push_back({{"scene_id", p.scene_id},
                           {"object_index", p.object_index},
                           {"predicted", p.predicted},
                           {"truth", p.truth},
                           {"similarity", p.similarity}});
  }
  return {{"index", result.index},
          {"seed", result.seed},
          {"assignments", std::move(assignments)},
          {"predictions", std::move(predictions)},
          {"skipped_query_scenes", result.skipped_query_scenes},
          {"support_iou", TallyToJson(result.support_iou)},
          {"query_iou", TallyToJson(result.query_iou)}};
}

}  // namespace lsme
