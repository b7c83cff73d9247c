#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "lsme/variant.h"

namespace lsme {

// Disjoint base / low-shot category sets with their instances.
struct CategorySplit {
  std::vector<std::string> base_categories;
  std::vector<std::string> lowshot_categories;
  std::map<std::string, std::vector<std::string>> instances_per_category;

  // Throws ConfigurationError on empty or overlapping sets, categories without
  // instances, or an instance listed under two categories.
  void Validate() const;

  bool IsBase(std::string_view category) const;
  bool IsLowshot(std::string_view category) const;
  // All instance ids, sorted.
  std::vector<std::string> AllInstances() const;
};

// {"base": [...], "lowshot": [...], "instances": {category: [ids]}}
CategorySplit SplitFromJson(const nlohmann::json& j);
nlohmann::json SplitToJson(const CategorySplit& split);
CategorySplit LoadSplit(const std::filesystem::path& path);

inline constexpr int kPosesPerInstance = 16;

// Resting poses per instance: rotations
// drawn uniformly on SO(3).
struct PoseBank {
  std::map<std::string, std::vector<Eigen::Quaterniond>> poses_per_instance;
};

// 16 uniform unit quaternions per instance. Each instance draws from its own
// sub-seed, so the bank for one instance does not depend on the others.
// Throws ConfigurationError for an empty instance list.
PoseBank SamplePoseBank(std::span<const std::string> instances,
                        std::uint64_t seed);

// Scene sampling ranges. Intervals are half-open.
struct SceneParams {
  double location_min = -0.5;
  double location_max = 0.5;
  double scale_min = 0.35;
  double scale_max = 0.45;
  double margin = 0.4;
  double camera_r_min = 1.0;
  double camera_r_max = 1.1;
  double camera_z_min = 0.3;
  double camera_z_max = 0.5;
  double camera_jitter = 0.01;
  double illumination_min = 0.6;
  double illumination_max = 0.8;
  int views = 20;
  int objects_per_multi_scene = 3;
  int max_placement_attempts = 1000;
};

struct ObjectIdentity {
  std::string instance_id;
  std::string category_id;
};

struct ObjectPlacement {
  std::string instance_id;
  std::string category_id;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double scale = 0.0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
};

struct CameraPose {
  double theta = 0.0;
  double r = 0.0;
  double z = 0.0;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

enum class SceneRole { kSupport, kQuery, kBase };

std::string_view RoleName(SceneRole role);
SceneRole ParseRole(std::string_view text);

struct SceneSpec {
  std::string scene_id;
  SceneRole role = SceneRole::kSupport;
  std::vector<ObjectPlacement> placements;
  std::vector<CameraPose> cameras;
  double illumination = 0.0;
  std::uint64_t rng_seed = 0;
};

// True when `candidate` keeps at least `margin` XY distance from every
// already placed object.
bool MarginAllows(std::span<const ObjectPlacement> placed,
                  const Eigen::Vector2d& candidate, double margin);

// Draws a position and scale for each object, resampling a position until the
// margin holds. Rotations are left at identity. Throws
// InfeasiblePlacementError after `max_placement_attempts` rejected draws for a
// single object.
std::vector<ObjectPlacement> PlaceObjects(std::span<const ObjectIdentity> objects,
                                          const SceneParams& params,
                                          std::uint64_t seed);

// (r cos theta, r sin theta, z)
Eigen::Vector3d CameraPosition(double theta, double r, double z);

// Camera on the sampled cylinder band, aimed at a point within the jitter
// radius of the mean object location on the ground plane.
CameraPose SampleCamera(std::span<const ObjectPlacement> placements,
                        const SceneParams& params, std::uint64_t seed);

struct SceneFlags {
  bool multi_object = true;
  bool pose_var = true;
};

inline SceneFlags FlagsFor(const VariantConfig& config) {
  return {config.multi_object, config.pose_var};
}

// Builds one scene. Support and query scenes hold exactly one low-shot object
// (at a random index), the rest are base objects of distinct categories. Base
// scenes hold base objects only. Floating-point fields are rounded to nine
// significant digits so the in-memory scene equals its serialized form.
SceneSpec GenerateScene(const CategorySplit& split, const PoseBank& bank,
                        SceneFlags flags, SceneRole role, std::string scene_id,
                        std::uint64_t seed, const SceneParams& params = {});

// Scene i of a role is "<role>-<i:05>" seeded by DeriveSeed(root, "scene/<role>/<i>").
std::string SceneId(SceneRole role, int index);
std::uint64_t SceneSeed(std::uint64_t root_seed, SceneRole role, int index);
std::uint64_t PoseBankSeed(std::uint64_t root_seed);

std::vector<SceneSpec> GenerateScenes(const CategorySplit& split,
                                      const PoseBank& bank, SceneFlags flags,
                                      SceneRole role, int count,
                                      std::uint64_t root_seed,
                                      const SceneParams& params = {});

// Rounds to nine significant digits.
double Quantize(double value);

nlohmann::json SceneToJson(const SceneSpec& scene);
SceneSpec SceneFromJson(const nlohmann::json& j);
void WriteSceneFile(const SceneSpec& scene, const std::filesystem::path& path);
SceneSpec ReadSceneFile(const std::filesystem::path& path);

}  // namespace lsme
