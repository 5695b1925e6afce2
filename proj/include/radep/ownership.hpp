#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "radep/model.hpp"
#include "radep/response.hpp"

namespace radep {

/// Off-distribution inputs with predetermined classes.
struct TriggerSet {
  Split pairs;
  std::uint64_t generation_seed = 0;
  /// Minimum distance every trigger keeps from the training data.
  double radius = 0.0;
};

class TriggerGenerationError : public std::runtime_error {
 public:
  TriggerGenerationError(const std::string& what, std::size_t achieved)
      : std::runtime_error(what), achieved_(achieved) {}
  std::size_t achieved() const { return achieved_; }

 private:
  std::size_t achieved_;
};

/// Median nearest-neighbour distance within the split (self excluded),
/// computed on at most max_points rows.
double median_nn_distance(const Split& data, std::size_t max_points = 2000);

/// Twice the median nearest-neighbour distance of the training data.
double default_isolation_radius(const Split& training);

/// Uniform candidates in [0,1]^dim, rejecting any closer than radius to a
/// training point; each accepted trigger gets a uniformly random class.
TriggerSet generate_trigger_set(std::size_t n, std::size_t dim, std::size_t classes,
                                const Split& training, std::uint64_t seed,
                                std::optional<double> radius = std::nullopt,
                                std::size_t max_attempts = 200000);

class EmbeddingError : public std::runtime_error {
 public:
  EmbeddingError(const std::string& what, double trigger_accuracy, double clean_drop)
      : std::runtime_error(what), trigger_accuracy_(trigger_accuracy), clean_drop_(clean_drop) {}
  double trigger_accuracy() const { return trigger_accuracy_; }
  double clean_drop() const { return clean_drop_; }

 private:
  double trigger_accuracy_;
  double clean_drop_;
};

struct BackdoorOptions {
  int epochs = 20;
  /// Share of each epoch's content made of (repeated) trigger pairs.
  double mixing_ratio = 0.1;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double min_trigger_accuracy = 0.95;
  double max_clean_drop = 0.02;
};

/// Fraction of triggers the model maps to their designated class.
double trigger_accuracy(const Model& model, const TriggerSet& triggers);

/// Continues training on clean data mixed with the trigger pairs, then
/// checks trigger accuracy and the clean validation accuracy drop.
Model embed_backdoor(Model model, const TriggerSet& triggers, const Dataset& data,
                     const BackdoorOptions& options);

struct WatermarkKey {
  std::uint64_t secret_seed = 0;
  /// l_inf size of the perturbation added to carrier responses.
  double magnitude = 0.05;
  /// Share of inputs selected as carriers by the keyed hash.
  double carrier_rate = 0.1;

  void validate() const;
};

std::uint64_t query_hash(std::span<const double> query, const WatermarkKey& key);
bool is_carrier(std::span<const double> query, const WatermarkKey& key);
/// Key-derived zero-sum direction with unit l_inf norm.
Vector watermark_direction(std::span<const double> query, const WatermarkKey& key,
                           std::size_t classes);

/// Carriers get probs + magnitude * direction, clamped and renormalized;
/// the perturbation is halved until the argmax is unchanged. Non-carriers
/// pass through bit-exactly.
Vector watermark_response(std::span<const double> probs, std::span<const double> query,
                          const WatermarkKey& key);

/// Halves magnitude until every carrier in the validation inputs keeps its
/// argmax under the watermark.
WatermarkKey make_watermark_key(std::uint64_t secret_seed, double magnitude,
                                double carrier_rate, const Model& model,
                                const Split& validation);

using SuspectOracle = std::function<ResponsePayload(std::span<const double>)>;

struct VerificationThresholds {
  double trigger = 0.5;
  /// z-score of the watermark statistic against its permutation null.
  double watermark = 4.0;
  std::size_t permutations = 200;
};

enum class OwnershipDecision { verified, not_verified };

struct TriggerOutcome {
  int expected = 0;
  int observed = -1;  // -1 when the oracle failed on this trigger
  bool matched = false;
};

struct OwnershipVerdict {
  double trigger_match_rate = 0.0;
  double watermark_score = 0.0;
  /// False when the oracle is hard-label or too few carriers were probed.
  bool watermark_available = false;
  std::size_t carrier_probes = 0;
  /// Share of oracle calls that returned an answer.
  double coverage = 1.0;
  OwnershipDecision decision = OwnershipDecision::not_verified;
  std::vector<TriggerOutcome> details;
};

/// Trigger layer: share of triggers answered with their designated class.
/// Watermark layer: z-score of mean <direction, residual> over carrier
/// probes against a permutation null, where residual is the oracle output
/// minus the owner's clean output (or the raw output without an owner
/// model). Verified when either layer clears its threshold.
OwnershipVerdict verify_ownership(const SuspectOracle& oracle, LabelMode mode,
                                  const TriggerSet& triggers, const WatermarkKey& key,
                                  std::span<const Vector> probes,
                                  const VerificationThresholds& thresholds,
                                  const Model* owner = nullptr, std::uint64_t seed = 0);

/// Zeroes the given fraction of smallest-magnitude parameters (weights and
/// biases, ranked globally).
Model prune(const Model& model, double fraction);

struct Modification {
  enum class Kind { fine_tune, prune };
  Kind kind = Kind::prune;
  double amount = 0.0;  // epochs for fine_tune, fraction for prune

  std::string label() const;
};

struct RetentionEntry {
  std::string operation;
  double trigger_match_rate = 0.0;
  double watermark_score = 0.0;
  double clean_accuracy = 0.0;
  OwnershipDecision decision = OwnershipDecision::not_verified;
};

struct FineTuneOptions {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Applies each modification independently to the embedded model and
/// verifies the raw result (no response watermarking on top).
std::vector<RetentionEntry> robustness_eval(const Model& embedded, const TriggerSet& triggers,
                                            const WatermarkKey& key,
                                            std::span<const Modification> operations,
                                            const Dataset& data,
                                            const VerificationThresholds& thresholds,
                                            const FineTuneOptions& fine_tune = {});

struct OwnershipKit {
  TriggerSet triggers;
  WatermarkKey key;
  VerificationThresholds thresholds;
};

inline constexpr int kOwnershipKitVersion = 1;

nlohmann::json kit_to_json(const OwnershipKit& kit);
OwnershipKit kit_from_json(const nlohmann::json& j);
void save_kit(const OwnershipKit& kit, const std::filesystem::path& path);
OwnershipKit load_kit(const std::filesystem::path& path);

std::string_view to_string(OwnershipDecision d);

}  // namespace radep
