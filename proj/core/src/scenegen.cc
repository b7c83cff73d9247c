#include "lsme/scenegen.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <set>
#include <utility>

#include "lsme/error.h"
#include "lsme/json_io.h"
#include "lsme/rng.h"

namespace lsme {
namespace {

bool Contains(const std::vector<std::string>& list, std::string_view value) {
  return std::find(list.begin(), list.end(), value) != list.end();
}

// Shoemake's method: uniform over unit quaternions, hence over SO(3).
Eigen::Quaterniond UniformQuaternion(Rng& rng) {
  const double u1 = rng.Uniform();
  const double u2 = rng.Uniform();
  const double u3 = rng.Uniform();
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double two_pi = 2.0 * std::numbers::pi;
  return Eigen::Quaterniond(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2),
                            a * std::cos(two_pi * u2), b * std::sin(two_pi * u3));
}

const std::string& PickFrom(const std::vector<std::string>& list, Rng& rng) {
  return list[rng.UniformIndex(list.size())];
}

// k distinct entries when the list is long enough, otherwise with repeats.
std::vector<std::string> PickCategories(const std::vector<std::string>& list,
                                        std::size_t k, Rng& rng) {
  std::vector<std::string> out;
  if (list.size() >= k) {
    std::vector<std::string> pool = list;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.UniformIndex(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) out.push_back(PickFrom(list, rng));
  }
  return out;
}

nlohmann::json ToJson(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }
nlohmann::json ToJson(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

template <int N>
Eigen::Matrix<double, N, 1> VectorFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != N) {
    throw DataIntegrityError("expected a " + std::to_string(N) +
                             "-element array, got " + j.dump());
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = j.at(i).get<double>();
  return v;
}

Eigen::Quaterniond QuantizeRotation(const Eigen::Quaterniond& q) {
  return Eigen::Quaterniond(Quantize(q.w()), Quantize(q.x()), Quantize(q.y()),
                            Quantize(q.z()));
}

}  // namespace

void CategorySplit::Validate() const {
  if (base_categories.empty() || lowshot_categories.empty()) {
    throw ConfigurationError("split needs non-empty base and lowshot sets");
  }
  std::set<std::string> seen_categories;
  for (const auto* list : {&base_categories, &lowshot_categories}) {
    for (const auto& category : *list) {
      if (!seen_categories.insert(category).second) {
        throw ConfigurationError("category '" + category +
                                 "' listed twice or in both base and lowshot");
      }
      const auto it = instances_per_category.find(category);
      if (it == instances_per_category.end() || it->second.empty()) {
        throw ConfigurationError("category '" + category + "' has no instances");
      }
    }
  }
  std::set<std::string> seen_instances;
  for (const auto& [category, instances] : instances_per_category) {
    for (const auto& instance : instances) {
      if (!seen_instances.insert(instance).second) {
        throw ConfigurationError("instance '" + instance +
                                 "' belongs to more than one category");
      }
    }
  }
}

bool CategorySplit::IsBase(std::string_view category) const {
  return Contains(base_categories, category);
}

bool CategorySplit::IsLowshot(std::string_view category) const {
  return Contains(lowshot_categories, category);
}

std::vector<std::string> CategorySplit::AllInstances() const {
  std::vector<std::string> out;
  for (const auto& [category, instances] : instances_per_category) {
    out.insert(out.end(), instances.begin(), instances.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CategorySplit SplitFromJson(const nlohmann::json& j) {
  CategorySplit split;
  try {
    split.base_categories = j.at("base").get<std::vector<std::string>>();
    split.lowshot_categories = j.at("lowshot").get<std::vector<std::string>>();
    split.instances_per_category =
        j.at("instances").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("malformed split: ") + e.what());
  }
  split.Validate();
  return split;
}

nlohmann::json SplitToJson(const CategorySplit& split) {
  return {{"base", split.base_categories},
          {"lowshot", split.lowshot_categories},
          {"instances", split.instances_per_category}};
}

CategorySplit LoadSplit(const std::filesystem::path& path) {
  return SplitFromJson(ReadJsonFile(path));
}

PoseBank SamplePoseBank(std::span<const std::string> instances,
                        std::uint64_t seed) {
  if (instances.empty()) {
    throw ConfigurationError("pose bank needs at least one instance");
  }
  PoseBank bank;
  for (const auto& instance : instances) {
    Rng rng(DeriveSeed(seed, "pose/" + instance));
    auto& poses = bank.poses_per_instance[instance];
    poses.reserve(kPosesPerInstance);
    for (int i = 0; i < kPosesPerInstance; ++i) {
      poses.push_back(UniformQuaternion(rng));
    }
  }
  return bank;
}

bool MarginAllows(std::span<const ObjectPlacement> placed,
                  const Eigen::Vector2d& candidate, double margin) {
  return std::all_of(placed.begin(), placed.end(), [&](const auto& p) {
    return (p.position - candidate).norm() >= margin;
  });
}

std::vector<ObjectPlacement> PlaceObjects(std::span<const ObjectIdentity> objects,
                                          const SceneParams& params,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ObjectPlacement> placed;
  placed.reserve(objects.size());
  for (const auto& object : objects) {
    ObjectPlacement p{object.instance_id, object.category_id};
    p.scale = Quantize(rng.Uniform(params.scale_min, params.scale_max));
    bool accepted = false;
    for (int attempt = 0; attempt < params.max_placement_attempts; ++attempt) {
      const Eigen::Vector2d candidate(
          Quantize(rng.Uniform(params.location_min, params.location_max)),
          Quantize(rng.Uniform(params.location_min, params.location_max)));
      if (MarginAllows(placed, candidate, params.margin)) {
        p.position = candidate;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw InfeasiblePlacementError(
          "could not place object " + std::to_string(placed.size()) + " of " +
          std::to_string(objects.size()) + " with margin " +
          std::to_string(params.margin) + " after " +
          std::to_string(params.max_placement_attempts) + " attempts");
    }
    placed.push_back(std::move(p));
  }
  return placed;
}

Eigen::Vector3d CameraPosition(double theta, double r, double z) {
  return {r * std::cos(theta), r * std::sin(theta), z};
}

CameraPose SampleCamera(std::span<const ObjectPlacement> placements,
                        const SceneParams& params, std::uint64_t seed) {
  Rng rng(seed);
  CameraPose camera;
  camera.theta = Quantize(rng.Uniform(0.0, 2.0 * std::numbers::pi));
  camera.r = Quantize(rng.Uniform(params.camera_r_min, params.camera_r_max));
  camera.z = Quantize(rng.Uniform(params.camera_z_min, params.camera_z_max));
  const Eigen::Vector3d position = CameraPosition(camera.theta, camera.r, camera.z);
  camera.position = {Quantize(position.x()), Quantize(position.y()),
                     Quantize(position.z())};

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : placements) mean += p.position;
  if (!placements.empty()) mean /= static_cast<double>(placements.size());
  // Uniform in the jitter disk. Shrunk slightly so rounding cannot push the
  // target outside it.
  const double radius = 0.999 * params.camera_jitter * std::sqrt(rng.Uniform());
  const double angle = rng.Uniform(0.0, 2.0 * std::numbers::pi);
  camera.look_at = {Quantize(mean.x() + radius * std::cos(angle)),
                    Quantize(mean.y() + radius * std::sin(angle)), 0.0};
  return camera;
}

std::string_view RoleName(SceneRole role) {
  switch (role) {
    case SceneRole::kSupport:
      return "support";
    case SceneRole::kQuery:
      return "query";
    case SceneRole::kBase:
      return "base";
  }
  return "unknown";
}

SceneRole ParseRole(std::string_view text) {
  for (const SceneRole role :
       {SceneRole::kSupport, SceneRole::kQuery, SceneRole::kBase}) {
    if (RoleName(role) == text) return role;
  }
  throw ConfigurationError("unknown scene role '" + std::string(text) + "'");
}

SceneSpec GenerateScene(const CategorySplit& split, const PoseBank& bank,
                        SceneFlags flags, SceneRole role, std::string scene_id,
                        std::uint64_t seed, const SceneParams& params) {
  if (params.views < 1) throw ConfigurationError("views per scene must be >= 1");
  const std::size_t n_objects =
      flags.multi_object ? static_cast<std::size_t>(params.objects_per_multi_scene)
                         : 1;
  if (n_objects < 1) throw ConfigurationError("scene needs at least one object");

  Rng composition(DeriveSeed(seed, "composition"));
  std::vector<std::string> categories;
  if (role == SceneRole::kBase) {
    categories = PickCategories(split.base_categories, n_objects, composition);
  } else {
    categories.push_back(PickFrom(split.lowshot_categories, composition));
    for (auto& c :
         PickCategories(split.base_categories, n_objects - 1, composition)) {
      categories.push_back(std::move(c));
    }
    // Move the novel object to a uniformly random slot.
    const std::size_t slot = composition.UniformIndex(n_objects);
    std::swap(categories[0], categories[slot]);
  }

  std::vector<ObjectIdentity> objects;
  for (const auto& category : categories) {
    const auto& instances = split.instances_per_category.at(category);
    objects.push_back({PickFrom(instances, composition), category});
  }

  SceneSpec scene;
  scene.scene_id = std::move(scene_id);
  scene.role = role;
  scene.rng_seed = seed;
  scene.placements = PlaceObjects(objects, params, DeriveSeed(seed, "placement"));

  const bool from_bank = flags.pose_var || flags.multi_object;
  if (from_bank) {
    Rng pose_rng(DeriveSeed(seed, "pose"));
    for (auto& p : scene.placements) {
      const auto it = bank.poses_per_instance.find(p.instance_id);
      if (it == bank.poses_per_instance.end() || it->second.empty()) {
        throw ConfigurationError("pose bank has no poses for instance '" +
                                 p.instance_id + "'");
      }
      p.rotation = QuantizeRotation(it->second[pose_rng.UniformIndex(it->second.size())]);
    }
  }

  scene.cameras.reserve(params.views);
  for (int v = 0; v < params.views; ++v) {
    scene.cameras.push_back(SampleCamera(
        scene.placements, params, DeriveSeed(seed, "camera/" + std::to_string(v))));
  }
  Rng light(DeriveSeed(seed, "illumination"));
  scene.illumination =
      Quantize(light.Uniform(params.illumination_min, params.illumination_max));
  return scene;
}

std::string SceneId(SceneRole role, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", index);
  return std::string(RoleName(role)) + "-" + buf;
}

std::uint64_t SceneSeed(std::uint64_t root_seed, SceneRole role, int index) {
  return DeriveSeed(root_seed, "scene/" + std::string(RoleName(role)) + "/" +
                                   std::to_string(index));
}

std::uint64_t PoseBankSeed(std::uint64_t root_seed) {
  return DeriveSeed(root_seed, "posebank");
}

std::vector<SceneSpec> GenerateScenes(const CategorySplit& split,
                                      const PoseBank& bank, SceneFlags flags,
                                      SceneRole role, int count,
                                      std::uint64_t root_seed,
                                      const SceneParams& params) {
  std::vector<SceneSpec> scenes;
  scenes.reserve(std::max(count, 0));
  for (int i = 0; i < count; ++i) {
    scenes.push_back(GenerateScene(split, bank, flags, role, SceneId(role, i),
                                   SceneSeed(root_seed, role, i), params));
  }
  return scenes;
}

double Quantize(double value) {
  if (!std::isfinite(value)) return value;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return std::strtod(buf, nullptr);
}

nlohmann::json SceneToJson(const SceneSpec& scene) {
  nlohmann::json placements = nlohmann::json::array();
  for (const auto& p : scene.placements) {
    placements.push_back({{"instance_id", p.instance_id},
                          {"category_id", p.category_id},
                          {"position", ToJson(p.position)},
                          {"scale", p.scale},
                          {"rotation",
                           {p.rotation.w(), p.rotation.x(), p.rotation.y(),
                            p.rotation.z()}}});
  }
  nlohmann::json cameras = nlohmann::json::array();
  for (const auto& c : scene.cameras) {
    cameras.push_back({{"theta", c.theta},
                       {"r", c.r},
                       {"z", c.z},
                       {"look_at", ToJson(c.look_at)},
                       {"position", ToJson(c.position)}});
  }
  return {{"scene_id", scene.scene_id},
          {"role", RoleName(scene.role)},
          {"placements", std::move(placements)},
          {"cameras", std::move(cameras)},
          {"illumination", scene.illumination},
          {"rng_seed", scene.rng_seed}};
}

SceneSpec SceneFromJson(const nlohmann::json& j) {
  try {
    SceneSpec scene;
    scene.scene_id = j.at("scene_id").get<std::string>();
    scene.role = ParseRole(j.value("role", "support"));
    for (const auto& p : j.at("placements")) {
      ObjectPlacement placement;
      placement.instance_id = p.at("instance_id").get<std::string>();
      placement.category_id = p.at("category_id").get<std::string>();
      placement.position = VectorFromJson<2>(p.at("position"));
      placement.scale = p.at("scale").get<double>();
      const auto q = VectorFromJson<4>(p.at("rotation"));
      placement.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
      scene.placements.push_back(std::move(placement));
    }
    for (const auto& c : j.at("cameras")) {
      CameraPose camera;
      camera.theta = c.at("theta").get<double>();
      camera.r = c.at("r").get<double>();
      camera.z = c.at("z").get<double>();
      camera.look_at = VectorFromJson<3>(c.at("look_at"));
      camera.position = VectorFromJson<3>(c.at("position"));
      scene.cameras.push_back(camera);
    }
    scene.illumination = j.at("illumination").get<double>();
    scene.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("malformed scene: ") + e.what());
  }
}

void WriteSceneFile(const SceneSpec& scene, const std::filesystem::path& path) {
  WriteJsonFile(path, SceneToJson(scene));
}

SceneSpec ReadSceneFile(const std::filesystem::path& path) {
  return SceneFromJson(ReadJsonFile(path));
}

}  // namespace lsme
