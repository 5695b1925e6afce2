#pragma once

#include <cstddef>
#include <filesystem>

#include <json.hpp>

#include "radep/detection.hpp"
#include "radep/response.hpp"

namespace radep {

/// Everything the detect/respond pipeline needs besides the model itself.
struct DetectionProfile {
  UncertaintyWeights weights;
  TierConfig tiers;
  BehaviorReference reference;
  /// Stochastic passes per query when alpha4 > 0.
  std::size_t mc_samples = 8;

  void validate(std::size_t classes) const;
};

inline constexpr int kProfileFormatVersion = 1;

nlohmann::json profile_to_json(const DetectionProfile& profile);
/// Throws FormatError on a wrong format tag, unknown version or missing field.
DetectionProfile profile_from_json(const nlohmann::json& j);

void save_profile(const DetectionProfile& profile, const std::filesystem::path& path);
DetectionProfile load_profile(const std::filesystem::path& path);

/// Reads a whole JSON document, mapping parse errors to FormatError.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace radep
