#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsme/scenegen.h"

namespace lsme {

// Unit-norm feature vector.
class Embedding {
 public:
  Embedding() = default;

  // L2-normalizes `raw`. Throws DataIntegrityError for empty, zero or
  // non-finite input.
  static Embedding FromRaw(std::span<const double> raw);
  static Embedding FromRaw(std::span<const float> raw);

  std::span<const double> values() const { return values_; }
  int dim() const { return static_cast<int>(values_.size()); }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

struct EmbeddingKey {
  std::string scene_id;
  int object_index = 0;
  int view_id = 0;

  auto operator<=>(const EmbeddingKey&) const = default;
};

std::string ToString(const EmbeddingKey& key);

// Dot product of two unit vectors. Throws ContractViolation on a dimension
// mismatch.
double CosineSim(const Embedding& a, const Embedding& b);

enum class ViewsMode { kSingle, kMean };

ViewsMode ParseViewsMode(std::string_view text);
std::string_view ViewsModeName(ViewsMode mode);

// kMean: renormalized mean of the visible views. kSingle: the first visible
// view. Throws ObjectNotVisibleError when no view is visible and
// ContractViolation when the spans differ in length.
Embedding AggregateViews(std::span<const Embedding> views,
                         std::span<const bool> visible, ViewsMode mode);
// Same, with every view already known to be visible.
Embedding AggregateViews(std::span<const Embedding> visible_views, ViewsMode mode);

enum class EmbeddingOrigin { kIngested, kSynthetic };

class EmbeddingStore {
 public:
  EmbeddingStore(int dim, EmbeddingOrigin origin);

  int dim() const { return dim_; }
  EmbeddingOrigin origin() const { return origin_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<EmbeddingKey, Embedding>& entries() const { return entries_; }

  // Throws DataIntegrityError on a duplicate key or dimension mismatch.
  void Insert(EmbeddingKey key, Embedding embedding);
  const Embedding* Find(const EmbeddingKey& key) const;
  // Throws DataIntegrityError naming the key when it is absent.
  const Embedding& At(const EmbeddingKey& key) const;

 private:
  int dim_;
  EmbeddingOrigin origin_;
  std::map<EmbeddingKey, Embedding> entries_;
};

// The blob sits next to the manifest with the extension replaced by ".bin".
std::filesystem::path BlobPathFor(const std::filesystem::path& manifest);

// Manifest {"dim", "count", "dtype": "f32le", "keys": [[scene, object, view]]}
// plus count*dim little-endian floats in key order. Rows are normalized on
// load; a size mismatch, bad dtype, duplicate key or zero row is rejected
// with DataIntegrityError.
EmbeddingStore LoadEmbeddingFile(const std::filesystem::path& manifest);

// Writes `rows` (row-major, keys.size() x dim) in the given key order.
void WriteEmbeddingFile(const std::filesystem::path& manifest,
                        std::span<const EmbeddingKey> keys, int dim,
                        std::span<const float> rows);
// Writes every entry in key order.
void WriteEmbeddingFile(const std::filesystem::path& manifest,
                        const EmbeddingStore& store);

// Parameters of the synthetic feature world.
struct SynthWorldParams {
  int dim = 64;
  double alpha_inst = 0.0;
  double alpha_view = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;

  // Throws ConfigurationError for a non-positive dim or for noise scales that
  // are negative or non-finite.
  void Validate() const;
};

// Unit Gaussian direction keyed by (seed, tag).
std::vector<double> UnitDirection(std::uint64_t seed, std::string_view tag, int dim);

// normalize(proto(category) + alpha_inst*g(instance) + alpha_view*g(key)
//           + beta*(1 - visible_fraction)*g_occ)
// g_occ is a single direction per world seed.
Embedding SynthEmbedding(const SynthWorldParams& params, std::string_view category,
                         std::string_view instance, const EmbeddingKey& key,
                         double visible_fraction);

// -log(exp(s+/tau) / (exp(s+/tau) + sum exp(s-/tau))), evaluated in log-sum-exp
// form. Throws ContractViolation for tau <= 0 or no negatives.
double InfoNceLossFromSimilarities(double positive, std::span<const double> negatives,
                                   double temperature);
double InfoNceLoss(const Embedding& query, const Embedding& positive,
                   std::span<const Embedding> negatives, double temperature);

// Identity of one scene object as seen by an embedding source.
struct ObjectRef {
  std::string_view scene_id;
  int object_index = 0;
  std::string_view category;
  std::string_view instance;
};

class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual int dim() const = 0;
  // `visible_fraction` is the share of the object's in-frame silhouette
  // covered by the mask used to crop it.
  virtual Embedding Embed(const ObjectRef& object, int view,
                          double visible_fraction) const = 0;
};

// Looks embeddings up in a store; the visible fraction is ignored because
// ingested features already reflect the masks they were cropped with.
class StoreSource final : public EmbeddingSource {
 public:
  explicit StoreSource(const EmbeddingStore& store) : store_(store) {}
  int dim() const override { return store_.dim(); }
  Embedding Embed(const ObjectRef& object, int view,
                  double visible_fraction) const override;

 private:
  const EmbeddingStore& store_;
};

class SyntheticSource final : public EmbeddingSource {
 public:
  explicit SyntheticSource(SynthWorldParams params);
  int dim() const override { return params_.dim; }
  Embedding Embed(const ObjectRef& object, int view,
                  double visible_fraction) const override;
  const SynthWorldParams& params() const { return params_; }

 private:
  SynthWorldParams params_;
};

// Independent random unit vector per (scene, object), whatever the view or
// mask. Features carry no category information.
class RandomSource final : public EmbeddingSource {
 public:
  RandomSource(int dim, std::uint64_t seed);
  int dim() const override { return dim_; }
  Embedding Embed(const ObjectRef& object, int view,
                  double visible_fraction) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

// What the encoder sees of one object in one view.
struct ObjectView {
  std::int64_t area = 0;
  double visible_fraction = 0.0;

  friend bool operator==(const ObjectView&, const ObjectView&) = default;
};

// Indexed [view][object].
using SceneObservation = std::vector<std::vector<ObjectView>>;

// Aggregated embedding over the object's visible views (area above the
// visibility threshold), or nullopt when no view is visible.
std::optional<Embedding> EmbedObject(const EmbeddingSource& source,
                                     const SceneSpec& scene, int object_index,
                                     const SceneObservation& observation,
                                     ViewsMode mode);

struct FeatureLibrary {
  struct Entry {
    std::string category;
    std::string scene_id;
    int object_index = 0;
    Embedding embedding;
  };
  std::vector<Entry> entries;
};

// One entry per visible base-scene object, in scene then object order.
// Objects with no visible view are left out. Throws DataIntegrityError when a
// base scene contains a low-shot object.
FeatureLibrary BuildLibrary(const EmbeddingSource& source,
                            std::span<const SceneSpec> base_scenes,
                            std::span<const SceneObservation> observations,
                            const CategorySplit& split, ViewsMode mode);

}  // namespace lsme
