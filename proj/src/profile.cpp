#include "radep/profile.hpp"

#include <fstream>

namespace radep {

void DetectionProfile::validate(std::size_t classes) const {
  weights.validate();
  tiers.validate();
  reference.validate(classes);
  if (mc_samples < 2) throw InputError("mc_samples must be at least 2");
}

nlohmann::json profile_to_json(const DetectionProfile& p) {
  nlohmann::json j;
  j["format"] = "radep-detection-profile";
  j["version"] = kProfileFormatVersion;
  j["alpha"] = p.weights.alpha;
  j["tau"] = p.weights.tau;
  j["mc_samples"] = p.mc_samples;
  j["tiers"] = {{"tau1", p.tiers.tau1},
                {"tau2", p.tiers.tau2},
                {"eps_low", p.tiers.eps_low},
                {"eps_medium", p.tiers.eps_medium},
                {"eps_high", p.tiers.eps_high},
                {"scaling_strength", p.tiers.scaling_strength}};
  j["behavior"] = {{"interval_length", p.reference.interval_length},
                   {"expected_rate", p.reference.expected_rate},
                   {"reference_histogram", p.reference.reference_histogram},
                   {"min_variance", p.reference.min_variance},
                   {"rate_multiplier", p.reference.rate_multiplier},
                   {"kl_threshold", p.reference.kl_threshold},
                   {"min_count", p.reference.min_count}};
  return j;
}

DetectionProfile profile_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "radep-detection-profile") {
      throw FormatError("not a detection profile");
    }
    const int version = j.at("version").get<int>();
    if (version != kProfileFormatVersion) {
      throw FormatError("unsupported detection profile version " + std::to_string(version));
    }
    DetectionProfile p;
    p.weights.alpha = j.at("alpha").get<std::array<double, 4>>();
    p.weights.tau = j.at("tau").get<double>();
    p.mc_samples = j.value("mc_samples", p.mc_samples);
    const auto& t = j.at("tiers");
    p.tiers.tau1 = t.at("tau1").get<double>();
    p.tiers.tau2 = t.at("tau2").get<double>();
    p.tiers.eps_low = t.at("eps_low").get<double>();
    p.tiers.eps_medium = t.at("eps_medium").get<double>();
    p.tiers.eps_high = t.at("eps_high").get<double>();
    p.tiers.scaling_strength = t.at("scaling_strength").get<double>();
    const auto& b = j.at("behavior");
    p.reference.interval_length = b.at("interval_length").get<double>();
    p.reference.expected_rate = b.at("expected_rate").get<double>();
    p.reference.reference_histogram = b.at("reference_histogram").get<Vector>();
    p.reference.min_variance = b.at("min_variance").get<double>();
    p.reference.rate_multiplier = b.value("rate_multiplier", p.reference.rate_multiplier);
    p.reference.kl_threshold = b.value("kl_threshold", p.reference.kl_threshold);
    p.reference.min_count = b.value("min_count", p.reference.min_count);
    try {
      p.validate(p.reference.reference_histogram.size());
    } catch (const InputError& e) {
      throw FormatError(std::string("invalid detection profile: ") + e.what());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed detection profile: ") + e.what());
  }
}

void save_profile(const DetectionProfile& profile, const std::filesystem::path& path) {
  write_json_file(profile_to_json(profile), path);
}

DetectionProfile load_profile(const std::filesystem::path& path) {
  return profile_from_json(read_json_file(path));
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace radep
