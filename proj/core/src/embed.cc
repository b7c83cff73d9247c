#include "lsme/embed.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "lsme/error.h"
#include "lsme/json_io.h"
#include "lsme/maskproxy.h"
#include "lsme/parallel.h"
#include "lsme/rng.h"

namespace lsme {
namespace {

template <typename T>
void Normalize(std::span<const T> raw, std::vector<double>& out) {
  if (raw.empty()) throw DataIntegrityError("embedding has zero dimensions");
  double norm2 = 0.0;
  for (const T x : raw) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw DataIntegrityError("embedding has non-finite entries");
    }
    norm2 += static_cast<double>(x) * static_cast<double>(x);
  }
  if (norm2 <= 0.0) throw DataIntegrityError("embedding has zero norm");
  const double inv = 1.0 / std::sqrt(norm2);
  out.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<double>(raw[i]) * inv;
}

std::uint32_t ToLittleEndian(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((x & 0xffu) << 24) | ((x & 0xff00u) << 8) | ((x >> 8) & 0xff00u) |
           (x >> 24);
  }
  return x;
}

}  // namespace

Embedding Embedding::FromRaw(std::span<const double> raw) {
  Embedding e;
  Normalize(raw, e.values_);
  return e;
}

Embedding Embedding::FromRaw(std::span<const float> raw) {
  Embedding e;
  Normalize(raw, e.values_);
  return e;
}

std::string ToString(const EmbeddingKey& key) {
  return "(" + key.scene_id + ", " + std::to_string(key.object_index) + ", " +
         std::to_string(key.view_id) + ")";
}

double CosineSim(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw ContractViolation("cosine of embeddings with dims " +
                            std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()));
  }
  const auto x = a.values();
  const auto y = b.values();
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return dot;
}

ViewsMode ParseViewsMode(std::string_view text) {
  if (text == "single") return ViewsMode::kSingle;
  if (text == "mean") return ViewsMode::kMean;
  throw ConfigurationError("views mode must be 'single' or 'mean', got '" +
                           std::string(text) + "'");
}

std::string_view ViewsModeName(ViewsMode mode) {
  return mode == ViewsMode::kSingle ? "single" : "mean";
}

Embedding AggregateViews(std::span<const Embedding> visible_views, ViewsMode mode) {
  if (visible_views.empty()) throw ObjectNotVisibleError("object has no visible view");
  if (mode == ViewsMode::kSingle) return visible_views.front();
  std::vector<double> sum(visible_views.front().dim(), 0.0);
  for (const auto& view : visible_views) {
    const auto x = view.values();
    if (x.size() != sum.size()) throw ContractViolation("views differ in dimension");
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += x[i];
  }
  for (double& s : sum) s /= static_cast<double>(visible_views.size());
  return Embedding::FromRaw(std::span<const double>(sum));
}

Embedding AggregateViews(std::span<const Embedding> views,
                         std::span<const bool> visible, ViewsMode mode) {
  if (views.size() != visible.size()) {
    throw ContractViolation("views and visibility flags differ in length");
  }
  std::vector<Embedding> kept;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (visible[v]) kept.push_back(views[v]);
  }
  return AggregateViews(kept, mode);
}

EmbeddingStore::EmbeddingStore(int dim, EmbeddingOrigin origin)
    : dim_(dim), origin_(origin) {
  if (dim <= 0) throw DataIntegrityError("embedding dim must be positive");
}

void EmbeddingStore::Insert(EmbeddingKey key, Embedding embedding) {
  if (embedding.dim() != dim_) {
    throw DataIntegrityError("embedding for " + ToString(key) + " has dim " +
                             std::to_string(embedding.dim()) + ", store has " +
                             std::to_string(dim_));
  }
  const std::string name = ToString(key);
  if (!entries_.emplace(std::move(key), std::move(embedding)).second) {
    throw DataIntegrityError("duplicate embedding key " + name);
  }
}

const Embedding* EmbeddingStore::Find(const EmbeddingKey& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

const Embedding& EmbeddingStore::At(const EmbeddingKey& key) const {
  if (const Embedding* e = Find(key)) return *e;
  throw DataIntegrityError("missing embedding for key " + ToString(key));
}

std::filesystem::path BlobPathFor(const std::filesystem::path& manifest) {
  std::filesystem::path blob = manifest;
  blob.replace_extension(".bin");
  return blob;
}

EmbeddingStore LoadEmbeddingFile(const std::filesystem::path& manifest_path) {
  const nlohmann::json manifest = ReadJsonFile(manifest_path);
  int dim = 0;
  std::size_t count = 0;
  std::vector<EmbeddingKey> keys;
  try {
    if (manifest.at("dtype").get<std::string>() != "f32le") {
      throw DataIntegrityError("unsupported dtype in " + manifest_path.string());
    }
    dim = manifest.at("dim").get<int>();
    count = manifest.at("count").get<std::size_t>();
    for (const auto& k : manifest.at("keys")) {
      if (!k.is_array() || k.size() != 3) {
        throw DataIntegrityError("embedding key must be [scene_id, object, view]");
      }
      keys.push_back({k[0].get<std::string>(), k[1].get<int>(), k[2].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError("malformed embedding manifest " +
                             manifest_path.string() + ": " + e.what());
  }
  if (keys.size() != count) {
    throw DataIntegrityError("manifest count " + std::to_string(count) +
                             " but " + std::to_string(keys.size()) + " keys");
  }

  const auto blob_path = BlobPathFor(manifest_path);
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw DataIntegrityError("cannot open " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::size_t expected = count * static_cast<std::size_t>(dim) * 4;
  if (bytes.size() != expected) {
    throw DataIntegrityError(blob_path.string() + " holds " +
                             std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(expected));
  }

  EmbeddingStore store(dim, EmbeddingOrigin::kIngested);
  std::vector<float> row(dim);
  for (std::size_t r = 0; r < count; ++r) {
    for (int i = 0; i < dim; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + (r * dim + i) * 4, 4);
      row[i] = std::bit_cast<float>(ToLittleEndian(bits));
    }
    try {
      store.Insert(keys[r], Embedding::FromRaw(std::span<const float>(row)));
    } catch (const DataIntegrityError& e) {
      throw DataIntegrityError(std::string(e.what()) + " at row " +
                               std::to_string(r) + " " + ToString(keys[r]));
    }
  }
  return store;
}

void WriteEmbeddingFile(const std::filesystem::path& manifest_path,
                        std::span<const EmbeddingKey> keys, int dim,
                        std::span<const float> rows) {
  if (rows.size() != keys.size() * static_cast<std::size_t>(dim)) {
    throw ContractViolation("row buffer does not match keys x dim");
  }
  nlohmann::json jkeys = nlohmann::json::array();
  for (const auto& k : keys) jkeys.push_back({k.scene_id, k.object_index, k.view_id});
  WriteJsonFile(manifest_path, {{"dim", dim},
                                {"count", keys.size()},
                                {"dtype", "f32le"},
                                {"keys", std::move(jkeys)}});
  std::string blob(rows.size() * 4, '\0');
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint32_t bits = ToLittleEndian(std::bit_cast<std::uint32_t>(rows[i]));
    std::memcpy(blob.data() + i * 4, &bits, 4);
  }
  WriteTextFile(BlobPathFor(manifest_path), blob);
}

void WriteEmbeddingFile(const std::filesystem::path& manifest_path,
                        const EmbeddingStore& store) {
  std::vector<EmbeddingKey> keys;
  std::vector<float> rows;
  keys.reserve(store.size());
  rows.reserve(store.size() * store.dim());
  for (const auto& [key, e] : store.entries()) {
    keys.push_back(key);
    for (const double x : e.values()) rows.push_back(static_cast<float>(x));
  }
  WriteEmbeddingFile(manifest_path, keys, store.dim(), rows);
}

void SynthWorldParams::Validate() const {
  if (dim <= 0) throw ConfigurationError("synthetic dim must be positive");
  for (const double x : {alpha_inst, alpha_view, beta}) {
    if (!std::isfinite(x) || x < 0.0) {
      throw ConfigurationError("synthetic noise scales must be finite and >= 0");
    }
  }
}

std::vector<double> UnitDirection(std::uint64_t seed, std::string_view tag, int dim) {
  Rng rng(DeriveSeed(seed, tag));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = rng.Normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

Embedding SynthEmbedding(const SynthWorldParams& params, std::string_view category,
                         std::string_view instance, const EmbeddingKey& key,
                         double visible_fraction) {
  if (!(visible_fraction >= 0.0 && visible_fraction <= 1.0)) {
    throw ContractViolation("visible fraction must lie in [0, 1]");
  }
  std::vector<double> v =
      UnitDirection(params.seed, "proto/" + std::string(category), params.dim);
  auto add = [&v](const std::vector<double>& g, double weight) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += weight * g[i];
  };
  if (params.alpha_inst > 0.0) {
    add(UnitDirection(params.seed, "inst/" + std::string(instance), params.dim),
        params.alpha_inst);
  }
  if (params.alpha_view > 0.0) {
    add(UnitDirection(params.seed,
                      "view/" + key.scene_id + "/" + std::to_string(key.object_index) +
                          "/" + std::to_string(key.view_id),
                      params.dim),
        params.alpha_view);
  }
  const double occlusion = params.beta * (1.0 - visible_fraction);
  if (occlusion > 0.0) add(UnitDirection(params.seed, "occ", params.dim), occlusion);
  return Embedding::FromRaw(std::span<const double>(v));
}

double InfoNceLossFromSimilarities(double positive, std::span<const double> negatives,
                                   double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("temperature must be positive");
  if (negatives.empty()) throw ContractViolation("InfoNCE needs at least one negative");
  const double lp = positive / temperature;
  double max_logit = lp;
  for (const double s : negatives) max_logit = std::max(max_logit, s / temperature);
  if (max_logit == lp) {
    // log(1 + sum exp(l- - l+)) keeps precision when the positive dominates.
    double tail = 0.0;
    for (const double s : negatives) tail += std::exp(s / temperature - lp);
    return std::log1p(tail);
  }
  double sum = std::exp(lp - max_logit);
  for (const double s : negatives) sum += std::exp(s / temperature - max_logit);
  return max_logit - lp + std::log(sum);
}

double InfoNceLoss(const Embedding& query, const Embedding& positive,
                   std::span<const Embedding> negatives, double temperature) {
  std::vector<double> sims;
  sims.reserve(negatives.size());
  for (const auto& k : negatives) sims.push_back(CosineSim(query, k));
  return InfoNceLossFromSimilarities(CosineSim(query, positive), sims, temperature);
}

Embedding StoreSource::Embed(const ObjectRef& object, int view, double) const {
  return store_.At({std::string(object.scene_id), object.object_index, view});
}

SyntheticSource::SyntheticSource(SynthWorldParams params) : params_(params) {
  params_.Validate();
}

Embedding SyntheticSource::Embed(const ObjectRef& object, int view,
                                 double visible_fraction) const {
  return SynthEmbedding(params_, object.category, object.instance,
                        {std::string(object.scene_id), object.object_index, view},
                        visible_fraction);
}

RandomSource::RandomSource(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw ConfigurationError("embedding dim must be positive");
}

Embedding RandomSource::Embed(const ObjectRef& object, int /*view*/,
                              double /*visible_fraction*/) const {
  const auto direction = UnitDirection(
      seed_,
      "random/" + std::string(object.scene_id) + "/" + std::to_string(object.object_index),
      dim_);
  return Embedding::FromRaw(std::span<const double>(direction));
}

std::optional<Embedding> EmbedObject(const EmbeddingSource& source,
                                     const SceneSpec& scene, int object_index,
                                     const SceneObservation& observation,
                                     ViewsMode mode) {
  const auto& placement = scene.placements.at(object_index);
  const ObjectRef ref{scene.scene_id, object_index, placement.category_id,
                      placement.instance_id};
  std::vector<Embedding> views;
  for (std::size_t v = 0; v < observation.size(); ++v) {
    const ObjectView& ov = observation[v].at(object_index);
    if (ov.area <= kVisibilityThresholdPx) continue;
    views.push_back(source.Embed(ref, static_cast<int>(v), ov.visible_fraction));
    if (mode == ViewsMode::kSingle) break;
  }
  if (views.empty()) return std::nullopt;
  return AggregateViews(views, mode);
}

FeatureLibrary BuildLibrary(const EmbeddingSource& source,
                            std::span<const SceneSpec> base_scenes,
                            std::span<const SceneObservation> observations,
                            const CategorySplit& split, ViewsMode mode) {
  if (base_scenes.size() != observations.size()) {
    throw ContractViolation("one observation per base scene required");
  }
  for (const auto& scene : base_scenes) {
    for (const auto& p : scene.placements) {
      if (!split.IsBase(p.category_id)) {
        throw DataIntegrityError("base scene " + scene.scene_id +
                                 " contains non-base category '" + p.category_id +
                                 "'");
      }
    }
  }
  std::vector<std::vector<FeatureLibrary::Entry>> per_scene(base_scenes.size());
  ParallelFor(base_scenes.size(), [&](std::size_t s) {
    const auto& scene = base_scenes[s];
    for (int k = 0; k < static_cast<int>(scene.placements.size()); ++k) {
      auto e = EmbedObject(source, scene, k, observations[s], mode);
      if (!e) continue;
      per_scene[s].push_back(
          {scene.placements[k].category_id, scene.scene_id, k, std::move(*e)});
    }
  });
  FeatureLibrary library;
  for (auto& entries : per_scene) {
    for (auto& e : entries) library.entries.push_back(std::move(e));
  }
  return library;
}

}  // namespace lsme
