#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lsme/scenegen.h"

namespace lsme {

// An object counts as visible in a view iff its mask area is strictly greater
// than this many pixels.
inline constexpr std::int64_t kVisibilityThresholdPx = 30;
// Predictions at or below this confidence are dropped.
inline constexpr double kConfidenceThreshold = 0.5;
// Predictions overlapping by more than this IoU are merged.
inline constexpr double kMergeIouThreshold = 0.7;

// Row-major run-length encoded bitmap. Runs alternate background/foreground
// and always start with a (possibly empty) background run.
struct InstanceMask {
  int object_index = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> rle;
  double confidence = 1.0;
  std::int64_t area = 0;

  static InstanceMask FromBitmap(int object_index, int width, int height,
                                 std::span<const std::uint8_t> bitmap,
                                 double confidence = 1.0);
  static InstanceMask Empty(int object_index, int width, int height,
                            double confidence = 1.0);

  std::vector<std::uint8_t> ToBitmap() const;

  // Throws DataIntegrityError if the runs do not cover width*height exactly or
  // `area` disagrees with them.
  void Validate() const;
};

struct MaskSet {
  std::string scene_id;
  int view_id = 0;
  int width = 0;
  int height = 0;
  std::vector<InstanceMask> masks;
  bool is_ground_truth = true;
};

// Partial bijection between predicted (row) and ground-truth (column) indices,
// sorted by predicted index.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;
  double total_cost = 0.0;
};

struct RenderOptions {
  int width = 128;
  int height = 128;
  double vertical_fov_deg = 60.0;
};

struct Sphere {
  Eigen::Vector3d center;
  double radius = 0.0;
};

// Proxy geometry: a sphere of radius 0.5*scale resting on the ground plane.
Sphere ProxySphere(const ObjectPlacement& placement);

class PinholeCamera {
 public:
  PinholeCamera(const CameraPose& pose, const RenderOptions& options);

  const Eigen::Vector3d& origin() const { return origin_; }
  // Unit direction through the centre of pixel (u, v); v grows downwards.
  Eigen::Vector3d PixelRay(int u, int v) const;
  // Distance along the optical axis; <= 0 means behind the camera.
  double Depth(const Eigen::Vector3d& point) const;
  // Continuous pixel coordinates of a point in front of the camera.
  Eigen::Vector2d Project(const Eigen::Vector3d& point) const;

 private:
  Eigen::Vector3d origin_;
  Eigen::Vector3d forward_;
  Eigen::Vector3d right_;
  Eigen::Vector3d up_;
  int width_;
  int height_;
  double tan_half_y_;
  double tan_half_x_;
};

// Entry distance of a unit ray into a sphere, or nullopt on a miss or when
// the origin lies inside the sphere.
std::optional<double> RaySphereEntry(const Eigen::Vector3d& origin,
                                     const Eigen::Vector3d& direction,
                                     const Sphere& sphere);

struct ViewRender {
  MaskSet masks;
  // Per object: in-frame silhouette area with every other object removed.
  std::vector<std::int64_t> unoccluded_area;
};

// Ground-truth masks of one view. Each pixel goes to the object with the
// nearest ray entry; objects whose centre is behind the camera get an empty
// mask. Throws ContractViolation for resolutions below 64x64 or a bad view.
ViewRender RenderView(const SceneSpec& scene, int view,
                      const RenderOptions& options = {});
MaskSet RasterizeView(const SceneSpec& scene, int view,
                      const RenderOptions& options = {});

std::int64_t IntersectionArea(const InstanceMask& a, const InstanceMask& b);
// |a & b| / |a | b|, 0 when both are empty. Throws ContractViolation when the
// dimensions differ.
double MaskIou(const InstanceMask& a, const InstanceMask& b);
// Foreground union; keeps a's object index and the larger confidence.
InstanceMask MaskUnion(const InstanceMask& a, const InstanceMask& b);

// Drops masks with confidence <= 0.5, then repeatedly merges the pair with the
// highest IoU while that IoU exceeds 0.7. Ties go to the lowest index pair.
MaskSet PostprocessPredictions(const MaskSet& raw);

// Minimum-cost partial bijection covering min(rows, cols) pairs. Among optimal
// solutions the lexicographically smallest pair list is returned. Throws
// ContractViolation on non-finite costs.
Assignment HungarianMatch(const Eigen::MatrixXd& cost);

// 1 - IoU between each predicted (row) and ground-truth (column) mask.
Eigen::MatrixXd IouCostMatrix(std::span<const InstanceMask> predicted,
                              std::span<const InstanceMask> ground_truth);

// Removes square patches (side ceil(sqrt(area))/8, at least 1) centred on
// uniformly chosen remaining foreground pixels until at least ratio*area
// pixels are gone. For a fixed seed the outputs are nested: a larger ratio
// removes a superset of the pixels removed by a smaller one.
InstanceMask ApplyMaskRatio(const InstanceMask& mask, double ratio,
                            std::uint64_t seed);

inline bool IsVisible(const InstanceMask& mask) {
  return mask.area > kVisibilityThresholdPx;
}

nlohmann::json MaskSetToJson(const MaskSet& set);
MaskSet MaskSetFromJson(const nlohmann::json& j, bool is_ground_truth);
void WriteMaskFile(const MaskSet& set, const std::filesystem::path& path);
MaskSet ReadMaskFile(const std::filesystem::path& path, bool is_ground_truth);

// "<dir>/<scene_id>/view_<vv>.json"
std::filesystem::path MaskFilePath(const std::filesystem::path& dir,
                                   const std::string& scene_id, int view);

}  // namespace lsme
