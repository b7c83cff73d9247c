#include "lsme/variant.h"

#include <algorithm>
#include <cctype>
#include <string>

#include "lsme/error.h"

namespace lsme {

VariantConfig ConfigFor(Variant variant) {
  VariantConfig config;
  config.variant = variant;
  switch (variant) {
    case Variant::kInstSObj:
      config = {variant, false, false, false, false, true};
      break;
    case Variant::kCategSObj:
      config = {variant, false, false, false, false, false};
      break;
    case Variant::kCategSObjPoseVar:
      config = {variant, false, true, false, false, false};
      break;
    case Variant::kCategMObj:
      config = {variant, true, true, false, false, false};
      break;
    case Variant::kCategMObjSuppAssign:
      config = {variant, true, true, true, false, false};
      break;
    case Variant::kLsme:
      config = {variant, true, true, true, true, false};
      break;
  }
  return config;
}

std::string_view VariantName(Variant variant) {
  switch (variant) {
    case Variant::kInstSObj:
      return "Inst-SObj";
    case Variant::kCategSObj:
      return "Categ-SObj";
    case Variant::kCategSObjPoseVar:
      return "Categ-SObj-PoseVar";
    case Variant::kCategMObj:
      return "Categ-MObj";
    case Variant::kCategMObjSuppAssign:
      return "Categ-MObj-SuppAssign";
    case Variant::kLsme:
      return "LSME";
  }
  return "unknown";
}

Variant ParseVariant(std::string_view text) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
  };
  const std::string wanted = lower(text);
  for (const Variant v : kAllVariants) {
    if (lower(VariantName(v)) == wanted) return v;
  }
  throw ConfigurationError("unknown variant '" + std::string(text) + "'");
}

}  // namespace lsme
