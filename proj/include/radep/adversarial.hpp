#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "radep/model.hpp"
#include "radep/profile.hpp"

namespace radep {

enum class Norm { linf, l2 };

struct AttackParams {
  double epsilon = 0.1;
  double step_size = 0.02;
  int iterations = 10;
  double overshoot = 0.02;
  Norm norm = Norm::linf;

  void validate() const;
};

/// One signed-gradient ascent step on the loss, clipped to [0,1].
/// sign(0) = 0, so dead gradients leave coordinates untouched.
Vector fgsm(const Model& model, std::span<const double> x, int y, double epsilon);

/// Signed-gradient descent toward target's loss minimum.
Vector targeted_fgsm(const Model& model, std::span<const double> x, int target, double epsilon);

/// Projected gradient ascent inside the epsilon ball (l_inf: signed steps;
/// l2: normalized-gradient steps) and the unit box. No random start.
Vector pgd(const Model& model, std::span<const double> x, int y, const AttackParams& params);

struct DeepFoolResult {
  Vector x_adv;
  int iterations = 0;
  bool converged = false;
  int original_class = 0;
  int final_class = 0;
};

/// Multiclass DeepFool on the logits. Each iteration steps to the nearest
/// linearized boundary; the accumulated step is scaled by (1 + overshoot)
/// and clipped to the unit box. If label is given and the model already
/// disagrees with it, returns x immediately as converged.
DeepFoolResult deepfool(const Model& model, std::span<const double> x, int max_iterations,
                        double overshoot, std::optional<int> label = std::nullopt);

enum class AttackMethod { fgsm, pgd, deepfool };

struct MethodMix {
  double fgsm = 0.5;
  double pgd = 0.3;
  double deepfool = 0.2;

  void validate() const;
};

struct TrainingSchedule {
  int rounds = 5;
  int epochs_per_round = 4;
  /// Share of each round's training content drawn from the adversarial pool.
  double adversarial_fraction = 0.5;
  MethodMix method_mix;
  /// Rounds between regenerations of the pool against the current model.
  int refresh_period = 1;

  void validate() const;
};

struct RoundReport {
  int round = 0;
  double clean_loss = 0.0;
  double adversarial_loss = 0.0;
  double attack_success_rate = 0.0;
  std::size_t pool_size = 0;
};

struct HardeningResult {
  Model model;
  std::vector<RoundReport> rounds;
};

/// Adversarial examples keep the label of the clean point they came from.
Split generate_adversarial(const Model& model, const Split& sources, AttackMethod method,
                           const AttackParams& params);

/// Fraction of points whose predicted class changes under FGSM at epsilon.
double fgsm_flip_rate(const Model& model, const Split& points, double epsilon);

/// Each round trains epochs_per_round epochs on the clean set mixed with an
/// adversarial pool. Every refresh_period rounds the pool is replaced by a
/// fresh one generated against the current parameters. With
/// adversarial_fraction = 0 this is exactly train() over rounds * epochs.
HardeningResult progressive_adversarial_train(Model model, const Dataset& data,
                                              const TrainingSchedule& schedule,
                                              const AttackParams& attack,
                                              const TrainOptions& options);

struct EvaluationSettings {
  double tolerance = 0.1;
  /// Multiplicative step applied to tau when the tolerance is exceeded.
  double tau_decrement = 0.95;
  /// Attempts per battery (FGSM and PGD).
  std::size_t simulation_budget = 200;
  AttackParams attack;
};

struct EvaluationReport {
  double fgsm_success_rate = 0.0;
  double pgd_success_rate = 0.0;
  double attack_success_rate = 0.0;
  double false_positive_rate = 0.0;
  std::size_t attempts = 0;
  bool adjusted = false;
  double tau_before = 0.0;
  double tau_after = 0.0;
};

struct EvaluationOutcome {
  DetectionProfile profile;
  /// Adversarial examples that fooled the model without being flagged,
  /// labeled with their true class, for pool augmentation.
  Split successful;
  EvaluationReport report;
};

/// Simulated FGSM/PGD batteries against model + detector. An attack
/// succeeds when it flips a correctly classified point and its composite
/// score stays at or below tau. The false-positive rate is the share of
/// clean holdout points scoring above tau.
EvaluationOutcome periodic_evaluation(const Model& model, const DetectionProfile& profile,
                                      const Split& holdout, const EvaluationSettings& settings,
                                      std::uint64_t seed);

}  // namespace radep
