#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "radep/adversarial.hpp"
#include "radep/attacks.hpp"
#include "radep/detection.hpp"
#include "radep/gateway.hpp"
#include "radep/model.hpp"
#include "radep/profile.hpp"

namespace radep {

/// Everything needed to rebuild the desk-scale benchmark and its victims.
struct BenchmarkConfig {
  std::size_t dim = 20;
  std::size_t classes = 4;
  std::size_t train = 4000;
  std::size_t validation = 1000;
  std::size_t test = 1000;
  double spread = 0.15;
  std::vector<std::size_t> hidden{64, 32};
  double dropout = 0.1;
  TrainOptions victim_training{30, 0.05, 32, 0};

  TrainingSchedule hardening{5, 6, 0.5, {}, 1};
  AttackParams hardening_attack{0.3, 0.06, 10, 0.02, Norm::linf};

  AttackBudget jbda{100, 6400, 6, 20};
  double jbda_epsilon = 0.1;
  std::size_t knockoff_budget = 4000;
  int knockoff_epochs = 50;
  /// Offset of the surrogate distribution's class centers.
  double surrogate_shift = 0.1;
  std::size_t cloudleak_budget = 2000;
  std::size_t cloudleak_seeds = 100;

  /// Queries per second on the virtual clock.
  double benign_rate = 1.0;
  double attacker_rate = 100.0;
  double window_length = 60.0;
  double similarity_threshold = 0.99;
  TierConfig tiers;

  void validate() const;
};

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c);
/// Missing keys keep their defaults.
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);

/// Blobs with class centers fixed by seed; the splits use derived seeds.
Dataset make_benchmark(const BenchmarkConfig& config, std::uint64_t seed);
/// Unlabeled inputs from the benchmark's own distribution, independent of
/// every split (the adversary's seed pool). draw selects the sample.
std::vector<Vector> attacker_seeds(const BenchmarkConfig& config, std::uint64_t data_seed,
                                   std::size_t count, std::uint64_t draw = 0);
/// Inputs from a related distribution: the same classes with centers
/// moved by surrogate_shift in random directions.
std::vector<Vector> surrogate_pool(const BenchmarkConfig& config, std::uint64_t data_seed,
                                   std::size_t count, std::uint64_t draw = 0);

Model fresh_model(const BenchmarkConfig& config, std::uint64_t seed);
Model train_victim(const Dataset& data, const BenchmarkConfig& config, std::uint64_t seed);
/// Progressive adversarial training from the same initialization.
HardeningResult harden_victim(const Dataset& data, const BenchmarkConfig& config,
                              std::uint64_t seed);
/// Trained on an unrelated blob task with the same shape.
Model pretrain_substitute(const BenchmarkConfig& config, std::uint64_t seed);

enum class AttackKind { jbda_tr, knockoffnet, cloudleak };
std::string_view to_string(AttackKind a);
AttackKind attack_kind_from_string(std::string_view s);

/// Runs one attack with the benchmark's budgets against the oracle. The
/// adversary's seed and surrogate pools come from data_seed.
ExtractionResult run_attack(AttackKind kind, VictimOracle& oracle, const BenchmarkConfig& config,
                            std::uint64_t data_seed, std::uint64_t seed);

/// Oracle backed by a gateway session; each call advances a virtual clock
/// by 1/rate seconds and rotates windows accordingly.
VictimOracle::QueryFn gateway_oracle(Gateway& gateway, std::string session, LabelMode mode,
                                     double start, double rate);

struct ProfileReport {
  CalibrationResult calibration;
  std::size_t benign_samples = 0;
  std::size_t adversarial_samples = 0;
  std::size_t reference_windows = 0;
};

/// Calibrates the weights and tau on clean validation queries against a
/// JBDA-TR stream run on the undefended victim from validation seeds, and
/// estimates the
/// behavior reference from benign-rate windows over the training inputs.
DetectionProfile build_profile(const Model& victim, const Dataset& data,
                               const BenchmarkConfig& config, std::uint64_t seed,
                               ProfileReport* report = nullptr);

Gateway make_defended_gateway(const Model& victim, const DetectionProfile& profile,
                              const BenchmarkConfig& config, std::uint64_t seed);

struct DetectionQuality {
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  /// Same metrics using the uncertainty score alone (u > tau).
  double uncertainty_balanced_accuracy = 0.0;
  double uncertainty_f1 = 0.0;
  std::size_t benign = 0;
  std::size_t attack = 0;
};

/// Replays the benign queries as one session at the benign rate and the
/// attack stream as another at the attacker rate through a fresh gateway;
/// a query counts as detected when its disposition is not benign.
DetectionQuality detection_quality(const Model& victim, const DetectionProfile& profile,
                                   const Split& benign, std::span<const Vector> attack_queries,
                                   const BenchmarkConfig& config, std::uint64_t seed);

struct GridRow {
  std::string attack;
  std::string mode;
  std::string defense;
  double substitute_accuracy = 0.0;
  double fidelity = 0.0;
  std::size_t queries = 0;
  bool truncated = false;
};

/// Substitute accuracy for every attack x mode x {none, radep} on one seed.
std::vector<GridRow> defense_grid(const Dataset& data, const Model& victim,
                                  const DetectionProfile& profile,
                                  const BenchmarkConfig& config, std::uint64_t data_seed,
                                  std::uint64_t seed);

nlohmann::json grid_to_json(std::span<const GridRow> rows);
std::string grid_table(std::span<const GridRow> rows);

/// Drives n queries drawn from the test split through a gateway on a
/// benign-rate virtual clock and returns its per-phase timings.
PhaseTimings measure_overhead(Gateway& gateway, const Split& inputs, std::size_t n);

}  // namespace radep
