#include "lsme/maskproxy.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "lsme/error.h"
#include "lsme/json_io.h"
#include "lsme/rng.h"

namespace lsme {
namespace {

using Interval = std::pair<std::uint32_t, std::uint32_t>;  // [begin, end)

std::vector<Interval> ForegroundIntervals(const InstanceMask& mask) {
  std::vector<Interval> out;
  std::uint32_t pos = 0;
  for (std::size_t i = 0; i < mask.rle.size(); ++i) {
    const std::uint32_t len = mask.rle[i];
    if (i % 2 == 1 && len > 0) out.emplace_back(pos, pos + len);
    pos += len;
  }
  return out;
}

InstanceMask FromIntervals(const InstanceMask& like,
                           const std::vector<Interval>& intervals) {
  InstanceMask out;
  out.object_index = like.object_index;
  out.width = like.width;
  out.height = like.height;
  out.confidence = like.confidence;
  std::uint32_t pos = 0;
  for (const auto& [begin, end] : intervals) {
    if (begin == pos && !out.rle.empty()) {
      out.rle.back() += end - begin;
    } else {
      out.rle.push_back(begin - pos);
      out.rle.push_back(end - begin);
    }
    out.area += end - begin;
    pos = end;
  }
  const auto total = static_cast<std::uint32_t>(like.width * like.height);
  if (pos < total || out.rle.empty()) out.rle.push_back(total - pos);
  return out;
}

void RequireSameShape(const InstanceMask& a, const InstanceMask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ContractViolation("mask dimensions differ: " + std::to_string(a.width) +
                            "x" + std::to_string(a.height) + " vs " +
                            std::to_string(b.width) + "x" +
                            std::to_string(b.height));
  }
}

struct PixelBox {
  int u0, v0, u1, v1;  // half-open
  bool empty() const { return u0 >= u1 || v0 >= v1; }
};

// Conservative screen box of a sphere: projection of its bounding cube.
PixelBox SphereBox(const PinholeCamera& camera, const Sphere& s,
                   const RenderOptions& options) {
  const PixelBox full{0, 0, options.width, options.height};
  double umin = std::numeric_limits<double>::infinity();
  double vmin = umin;
  double umax = -umin;
  double vmax = -umin;
  for (int corner = 0; corner < 8; ++corner) {
    const Eigen::Vector3d p =
        s.center + s.radius * Eigen::Vector3d((corner & 1) ? 1 : -1,
                                              (corner & 2) ? 1 : -1,
                                              (corner & 4) ? 1 : -1);
    if (camera.Depth(p) <= 1e-6) return full;
    const Eigen::Vector2d uv = camera.Project(p);
    umin = std::min(umin, uv.x());
    umax = std::max(umax, uv.x());
    vmin = std::min(vmin, uv.y());
    vmax = std::max(vmax, uv.y());
  }
  auto clamp = [](double x, int hi) {
    return static_cast<int>(std::clamp(x, 0.0, static_cast<double>(hi)));
  };
  return {clamp(std::floor(umin) - 1, options.width),
          clamp(std::floor(vmin) - 1, options.height),
          clamp(std::ceil(umax) + 2, options.width),
          clamp(std::ceil(vmax) + 2, options.height)};
}

// Dense Hungarian (shortest augmenting path with potentials) for rows <= cols.
// Returns the column matched to each row.
std::vector<int> SolveRowsLeCols(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Optimal cost of matching min(rows, cols) pairs.
double OptimalCost(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) return 0.0;
  if (cost.rows() <= cost.cols()) {
    const auto match = SolveRowsLeCols(cost);
    double total = 0.0;
    for (int i = 0; i < cost.rows(); ++i) total += cost(i, match[i]);
    return total;
  }
  const Eigen::MatrixXd t = cost.transpose();
  const auto match = SolveRowsLeCols(t);
  double total = 0.0;
  for (int i = 0; i < t.rows(); ++i) total += t(i, match[i]);
  return total;
}

Eigen::MatrixXd SubMatrix(const Eigen::MatrixXd& cost, const std::vector<int>& rows,
                          const std::vector<int>& cols) {
  Eigen::MatrixXd sub(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) sub(r, c) = cost(rows[r], cols[c]);
  }
  return sub;
}

bool SameCost(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b));
}

}  // namespace

InstanceMask InstanceMask::FromBitmap(int object_index, int width, int height,
                                      std::span<const std::uint8_t> bitmap,
                                      double confidence) {
  if (bitmap.size() != static_cast<std::size_t>(width) * height) {
    throw ContractViolation("bitmap size does not match width*height");
  }
  InstanceMask mask;
  mask.object_index = object_index;
  mask.width = width;
  mask.height = height;
  mask.confidence = confidence;
  bool foreground = false;
  std::uint32_t run = 0;
  for (const std::uint8_t px : bitmap) {
    const bool fg = px != 0;
    if (fg != foreground) {
      mask.rle.push_back(run);
      run = 0;
      foreground = fg;
    }
    ++run;
    if (fg) ++mask.area;
  }
  mask.rle.push_back(run);
  return mask;
}

InstanceMask InstanceMask::Empty(int object_index, int width, int height,
                                 double confidence) {
  InstanceMask mask;
  mask.object_index = object_index;
  mask.width = width;
  mask.height = height;
  mask.confidence = confidence;
  mask.rle = {static_cast<std::uint32_t>(width * height)};
  return mask;
}

std::vector<std::uint8_t> InstanceMask::ToBitmap() const {
  std::vector<std::uint8_t> bitmap(static_cast<std::size_t>(width) * height, 0);
  for (const auto& [begin, end] : ForegroundIntervals(*this)) {
    std::fill(bitmap.begin() + begin, bitmap.begin() + end, 1);
  }
  return bitmap;
}

void InstanceMask::Validate() const {
  if (width <= 0 || height <= 0) {
    throw DataIntegrityError("mask has non-positive dimensions");
  }
  std::uint64_t total = 0;
  std::int64_t fg = 0;
  for (std::size_t i = 0; i < rle.size(); ++i) {
    total += rle[i];
    if (i % 2 == 1) fg += rle[i];
  }
  if (total != static_cast<std::uint64_t>(width) * height) {
    throw DataIntegrityError("mask runs sum to " + std::to_string(total) +
                             ", expected " + std::to_string(width * height));
  }
  if (fg != area) {
    throw DataIntegrityError("mask area " + std::to_string(area) +
                             " disagrees with runs (" + std::to_string(fg) + ")");
  }
}

Sphere ProxySphere(const ObjectPlacement& placement) {
  const double radius = 0.5 * placement.scale;
  return {Eigen::Vector3d(placement.position.x(), placement.position.y(), radius),
          radius};
}

PinholeCamera::PinholeCamera(const CameraPose& pose, const RenderOptions& options)
    : origin_(pose.position), width_(options.width), height_(options.height) {
  forward_ = (pose.look_at - pose.position).normalized();
  Eigen::Vector3d right = forward_.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-12) right = Eigen::Vector3d::UnitX();
  right_ = right.normalized();
  up_ = right_.cross(forward_);
  tan_half_y_ = std::tan(0.5 * options.vertical_fov_deg * std::numbers::pi / 180.0);
  tan_half_x_ = tan_half_y_ * static_cast<double>(width_) / height_;
}

Eigen::Vector3d PinholeCamera::PixelRay(int u, int v) const {
  const double x = ((u + 0.5) / width_ * 2.0 - 1.0) * tan_half_x_;
  const double y = (1.0 - (v + 0.5) / height_ * 2.0) * tan_half_y_;
  return (forward_ + x * right_ + y * up_).normalized();
}

double PinholeCamera::Depth(const Eigen::Vector3d& point) const {
  return (point - origin_).dot(forward_);
}

Eigen::Vector2d PinholeCamera::Project(const Eigen::Vector3d& point) const {
  const Eigen::Vector3d d = point - origin_;
  const double z = d.dot(forward_);
  const double x = d.dot(right_) / (z * tan_half_x_);
  const double y = d.dot(up_) / (z * tan_half_y_);
  return {(x + 1.0) * 0.5 * width_ - 0.5, (1.0 - y) * 0.5 * height_ - 0.5};
}

std::optional<double> RaySphereEntry(const Eigen::Vector3d& origin,
                                     const Eigen::Vector3d& direction,
                                     const Sphere& sphere) {
  const Eigen::Vector3d oc = sphere.center - origin;
  const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
  if (c <= 0.0) return std::nullopt;
  const double b = oc.dot(direction);
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = b - std::sqrt(disc);
  if (t <= 0.0) return std::nullopt;
  return t;
}

ViewRender RenderView(const SceneSpec& scene, int view,
                      const RenderOptions& options) {
  if (options.width < 64 || options.height < 64) {
    throw ContractViolation("resolution must be at least 64x64");
  }
  if (view < 0 || view >= static_cast<int>(scene.cameras.size())) {
    throw ContractViolation("view " + std::to_string(view) + " out of range for " +
                            scene.scene_id);
  }
  const PinholeCamera camera(scene.cameras[view], options);
  const int w = options.width;
  const int h = options.height;
  const std::size_t n_pixels = static_cast<std::size_t>(w) * h;
  const int n_objects = static_cast<int>(scene.placements.size());

  std::vector<int> owner(n_pixels, -1);
  std::vector<double> depth(n_pixels, std::numeric_limits<double>::infinity());
  ViewRender out;
  out.unoccluded_area.assign(n_objects, 0);

  for (int k = 0; k < n_objects; ++k) {
    const Sphere sphere = ProxySphere(scene.placements[k]);
    if (camera.Depth(sphere.center) <= 0.0) continue;
    const PixelBox box = SphereBox(camera, sphere, options);
    for (int v = box.v0; v < box.v1; ++v) {
      for (int u = box.u0; u < box.u1; ++u) {
        const auto t = RaySphereEntry(camera.origin(), camera.PixelRay(u, v), sphere);
        if (!t) continue;
        ++out.unoccluded_area[k];
        const std::size_t p = static_cast<std::size_t>(v) * w + u;
        if (*t < depth[p]) {
          depth[p] = *t;
          owner[p] = k;
        }
      }
    }
  }

  out.masks.scene_id = scene.scene_id;
  out.masks.view_id = view;
  out.masks.width = w;
  out.masks.height = h;
  out.masks.is_ground_truth = true;
  std::vector<std::uint8_t> bitmap(n_pixels);
  for (int k = 0; k < n_objects; ++k) {
    for (std::size_t p = 0; p < n_pixels; ++p) bitmap[p] = owner[p] == k;
    out.masks.masks.push_back(InstanceMask::FromBitmap(k, w, h, bitmap));
  }
  return out;
}

MaskSet RasterizeView(const SceneSpec& scene, int view,
                      const RenderOptions& options) {
  return RenderView(scene, view, options).masks;
}

std::int64_t IntersectionArea(const InstanceMask& a, const InstanceMask& b) {
  RequireSameShape(a, b);
  const auto ia = ForegroundIntervals(a);
  const auto ib = ForegroundIntervals(b);
  std::int64_t inter = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < ia.size() && j < ib.size()) {
    const std::uint32_t lo = std::max(ia[i].first, ib[j].first);
    const std::uint32_t hi = std::min(ia[i].second, ib[j].second);
    if (hi > lo) inter += hi - lo;
    if (ia[i].second < ib[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return inter;
}

double MaskIou(const InstanceMask& a, const InstanceMask& b) {
  const std::int64_t inter = IntersectionArea(a, b);
  const std::int64_t uni = a.area + b.area - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

InstanceMask MaskUnion(const InstanceMask& a, const InstanceMask& b) {
  RequireSameShape(a, b);
  auto intervals = ForegroundIntervals(a);
  const auto other = ForegroundIntervals(b);
  intervals.insert(intervals.end(), other.begin(), other.end());
  std::sort(intervals.begin(), intervals.end());
  std::vector<Interval> merged;
  for (const auto& iv : intervals) {
    if (!merged.empty() && iv.first <= merged.back().second) {
      merged.back().second = std::max(merged.back().second, iv.second);
    } else {
      merged.push_back(iv);
    }
  }
  InstanceMask out = FromIntervals(a, merged);
  out.confidence = std::max(a.confidence, b.confidence);
  return out;
}

MaskSet PostprocessPredictions(const MaskSet& raw) {
  MaskSet out = raw;
  out.is_ground_truth = false;
  out.masks.clear();
  for (const auto& m : raw.masks) {
    if (m.confidence > kConfidenceThreshold) out.masks.push_back(m);
  }
  while (out.masks.size() > 1) {
    double best = kMergeIouThreshold;
    std::size_t bi = 0;
    std::size_t bj = 0;
    bool found = false;
    for (std::size_t i = 0; i < out.masks.size(); ++i) {
      for (std::size_t j = i + 1; j < out.masks.size(); ++j) {
        const double iou = MaskIou(out.masks[i], out.masks[j]);
        if (iou > best) {
          best = iou;
          bi = i;
          bj = j;
          found = true;
        }
      }
    }
    if (!found) break;
    out.masks[bi] = MaskUnion(out.masks[bi], out.masks[bj]);
    out.masks.erase(out.masks.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return out;
}

Assignment HungarianMatch(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw ContractViolation("cost matrix has non-finite entries");
  Assignment result;
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n == 0 || m == 0) return result;

  const double best = OptimalCost(cost);
  const int k = std::min(n, m);
  std::vector<int> free_cols(m);
  for (int j = 0; j < m; ++j) free_cols[j] = j;
  double fixed_cost = 0.0;

  // Fix pairs row by row, always taking the smallest column that still admits
  // an optimal completion. This yields the lexicographically smallest optimum.
  for (int i = 0; i < n && static_cast<int>(result.pairs.size()) < k; ++i) {
    std::vector<int> later_rows;
    for (int r = i + 1; r < n; ++r) later_rows.push_back(r);
    const int need_after = k - static_cast<int>(result.pairs.size()) - 1;

    bool fixed = false;
    for (std::size_t c = 0; c < free_cols.size(); ++c) {
      std::vector<int> rest = free_cols;
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(c));
      const int can_match =
          std::min(static_cast<int>(later_rows.size()), static_cast<int>(rest.size()));
      if (can_match != need_after) continue;
      const double total = fixed_cost + cost(i, free_cols[c]) +
                           OptimalCost(SubMatrix(cost, later_rows, rest));
      if (SameCost(total, best)) {
        result.pairs.emplace_back(i, free_cols[c]);
        fixed_cost += cost(i, free_cols[c]);
        free_cols = std::move(rest);
        fixed = true;
        break;
      }
    }
    if (!fixed && static_cast<int>(later_rows.size()) <
                      k - static_cast<int>(result.pairs.size())) {
      // Unreachable for finite costs: an optimum always exists.
      throw ContractViolation("assignment tie-break failed to complete");
    }
  }
  result.total_cost = fixed_cost;
  return result;
}

Eigen::MatrixXd IouCostMatrix(std::span<const InstanceMask> predicted,
                              std::span<const InstanceMask> ground_truth) {
  Eigen::MatrixXd cost(predicted.size(), ground_truth.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = 0; j < ground_truth.size(); ++j) {
      cost(i, j) = 1.0 - MaskIou(predicted[i], ground_truth[j]);
    }
  }
  return cost;
}

InstanceMask ApplyMaskRatio(const InstanceMask& mask, double ratio,
                            std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ContractViolation("mask ratio must lie in [0, 1]");
  }
  const double target = ratio * static_cast<double>(mask.area);
  if (mask.area == 0 || target <= 0.0) return mask;

  auto bitmap = mask.ToBitmap();
  std::vector<std::uint32_t> candidates;
  candidates.reserve(mask.area);
  for (std::uint32_t p = 0; p < bitmap.size(); ++p) {
    if (bitmap[p]) candidates.push_back(p);
  }
  const int side = std::max<int>(
      1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(mask.area)))) / 8);
  const int before = side / 2;

  Rng rng(seed);
  std::int64_t removed = 0;
  while (static_cast<double>(removed) < target) {
    // Rejection over a shrinking list: stale entries are swapped out.
    const std::size_t pick = rng.UniformIndex(candidates.size());
    const std::uint32_t p = candidates[pick];
    if (!bitmap[p]) {
      candidates[pick] = candidates.back();
      candidates.pop_back();
      continue;
    }
    const int cu = static_cast<int>(p % mask.width);
    const int cv = static_cast<int>(p / mask.width);
    for (int v = std::max(0, cv - before);
         v < std::min(mask.height, cv - before + side); ++v) {
      for (int u = std::max(0, cu - before);
           u < std::min(mask.width, cu - before + side); ++u) {
        auto& px = bitmap[static_cast<std::size_t>(v) * mask.width + u];
        if (px) {
          px = 0;
          ++removed;
        }
      }
    }
  }
  return InstanceMask::FromBitmap(mask.object_index, mask.width, mask.height,
                                  bitmap, mask.confidence);
}

nlohmann::json MaskSetToJson(const MaskSet& set) {
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : set.masks) {
    masks.push_back({{"object_index", m.object_index},
                     {"confidence", m.confidence},
                     {"rle", m.rle}});
  }
  return {{"scene_id", set.scene_id},
          {"view_id", set.view_id},
          {"width", set.width},
          {"height", set.height},
          {"masks", std::move(masks)}};
}

MaskSet MaskSetFromJson(const nlohmann::json& j, bool is_ground_truth) {
  MaskSet set;
  try {
    set.scene_id = j.at("scene_id").get<std::string>();
    set.view_id = j.at("view_id").get<int>();
    set.width = j.at("width").get<int>();
    set.height = j.at("height").get<int>();
    set.is_ground_truth = is_ground_truth;
    for (const auto& jm : j.at("masks")) {
      InstanceMask m;
      m.object_index = jm.at("object_index").get<int>();
      m.confidence = jm.value("confidence", 1.0);
      m.rle = jm.at("rle").get<std::vector<std::uint32_t>>();
      m.width = set.width;
      m.height = set.height;
      for (std::size_t i = 1; i < m.rle.size(); i += 2) m.area += m.rle[i];
      m.Validate();
      set.masks.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("malformed mask file: ") + e.what());
  }
  return set;
}

void WriteMaskFile(const MaskSet& set, const std::filesystem::path& path) {
  WriteJsonFile(path, MaskSetToJson(set), -1);
}

MaskSet ReadMaskFile(const std::filesystem::path& path, bool is_ground_truth) {
  return MaskSetFromJson(ReadJsonFile(path), is_ground_truth);
}

std::filesystem::path MaskFilePath(const std::filesystem::path& dir,
                                   const std::string& scene_id, int view) {
  char name[32];
  std::snprintf(name, sizeof(name), "view_%02d.json", view);
  return dir / scene_id / name;
}

}  // namespace lsme
