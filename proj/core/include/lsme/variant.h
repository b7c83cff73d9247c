#pragma once

#include <array>
#include <string>
#include <string_view>

namespace lsme {

// The six task variants, ordered by increasing difficulty.
enum class Variant {
  kInstSObj,
  kCategSObj,
  kCategSObjPoseVar,
  kCategMObj,
  kCategMObjSuppAssign,
  kLsme,
};

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::kInstSObj,   Variant::kCategSObj,
    Variant::kCategSObjPoseVar, Variant::kCategMObj,
    Variant::kCategMObjSuppAssign, Variant::kLsme};

struct VariantConfig {
  Variant variant = Variant::kLsme;
  bool multi_object = true;
  bool pose_var = true;
  bool needs_support_assignment = true;
  // Predicted (post-processed) masks instead of ground truth.
  bool needs_localization = true;
  // Queries show the same instance as the support (instance recognition).
  bool same_instance = false;
};

VariantConfig ConfigFor(Variant variant);

// Canonical display name, e.g. "Categ-MObj-SuppAssign".
std::string_view VariantName(Variant variant);

// Parses either the display name or its lowercase CLI form
// ("categ-mobj-suppassign"). Throws ConfigurationError.
Variant ParseVariant(std::string_view text);

}  // namespace lsme
