#pragma once

#include "naref/flow.hpp"
#include "naref/image.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace naref {

inline constexpr int kDistortionLevels = 5;
inline constexpr int kCatalogVersion = 1;

struct CatalogEntry {
  std::string type_id;
  std::string category;
  bool stochastic = false;
  /// Parameter vector per severity level 1..5 (index 0 = level 1).
  std::array<std::vector<double>, kDistortionLevels> levels;

  std::size_t arity() const { return levels[0].size(); }
};

using DistortionCatalog = std::vector<CatalogEntry>;

struct DistortionSpec {
  std::string type_id;
  int level = 1;
  std::uint64_t seed = 0;
  /// Overrides the catalog parameters when non-empty.
  std::vector<double> params;

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

/// The compiled-in 34-entry catalog, in stable order.
const DistortionCatalog& catalog_list();
/// Throws Error(UnknownType) for ids not in the catalog.
const CatalogEntry& catalog_entry(std::string_view type_id);
std::size_t catalog_index(std::string_view type_id);

std::string catalog_to_csv(const DistortionCatalog& catalog);
DistortionCatalog catalog_from_csv(std::string_view text);

/// Parameters a DistortionSpec resolves to (overrides or catalog row), validated.
std::vector<double> resolve_params(const DistortionSpec& spec);

/// Full-frame distortion. Same sample type as the input; values clamped.
Image apply_distortion(const Image& img, const DistortionSpec& spec);
/// Unquantized float planes of the full-frame distortion.
std::array<Plane, 3> distort_planes(const Image& img, const DistortionSpec& spec);

/// out = soft * distorted + (1 - soft) * img, blended in float and quantized
/// once. Pixels with zero soft weight are copied from `img` bit for bit.
/// The mask must carry soft weights (see feather_mask).
Image apply_masked(const Image& img, const DistortionSpec& spec, const TroiMask& mask);

}  // namespace naref
