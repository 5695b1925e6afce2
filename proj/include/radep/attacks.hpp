#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "radep/model.hpp"
#include "radep/response.hpp"

namespace radep {

/// Query interface the adversary sees, with a hard cap on calls.
class VictimOracle {
 public:
  using QueryFn = std::function<ResponsePayload(std::span<const double>)>;

  VictimOracle(QueryFn fn, LabelMode mode, std::size_t budget);

  /// Empty once the budget is spent; the call is not counted then.
  std::optional<ResponsePayload> query(std::span<const double> x);

  LabelMode mode() const { return mode_; }
  std::size_t budget() const { return budget_; }
  std::size_t used() const { return used_; }
  std::size_t remaining() const { return budget_ - used_; }

 private:
  QueryFn fn_;
  LabelMode mode_;
  std::size_t budget_;
  std::size_t used_ = 0;
};

/// Oracle that answers straight from a model, no defense.
VictimOracle::QueryFn model_oracle(const Model& model, LabelMode mode);

/// Training target from a response: soft vector as is, hard label one-hot.
Vector response_target(const ResponsePayload& response, std::size_t classes);

struct AttackBudget {
  std::size_t seed_samples = 100;
  std::size_t total_queries = 6400;
  int rounds = 6;
  int epochs_per_round = 20;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;

  void validate() const;
};

struct ExtractionResult {
  Model substitute;
  std::size_t queries_used = 0;
  /// The budget ran out before the attack schedule finished.
  bool truncated = false;
  std::size_t training_set_size = 0;
  /// Every input sent to the oracle, in order.
  std::vector<Vector> queries;
};

/// Seeds are labeled first. Each round trains the substitute, then for every
/// sample in the set crafts targeted_fgsm(substitute, x, random other class,
/// epsilon_aug), labels it through the oracle and appends it, so each full
/// round doubles the set. A final training pass follows the last round.
ExtractionResult jbda_tr(VictimOracle& oracle, std::span<const Vector> seeds,
                         const AttackBudget& budget, double epsilon_aug, Model substitute,
                         std::uint64_t seed);

/// Labels up to budget.total_queries surrogate inputs (without replacement
/// when the pool is large enough, else with) and trains for epochs.
ExtractionResult knockoffnet(VictimOracle& oracle, std::span<const Vector> surrogate,
                             const AttackBudget& budget, Model substitute, int epochs,
                             std::uint64_t seed);

struct CloudleakOptions {
  int fine_tune_epochs = 20;
  /// Std of the Gaussian jitter applied to a seed before DeepFool.
  double jitter = 0.05;
  int deepfool_iterations = 50;
  double overshoot = 0.02;
};

/// Crafts boundary points by running DeepFool on the pretrained substitute
/// from jittered seeds, labels them through the oracle and fine-tunes.
ExtractionResult cloudleak(VictimOracle& oracle, std::span<const Vector> seeds,
                           const AttackBudget& budget, Model pretrained, std::uint64_t seed,
                           const CloudleakOptions& options = {});

/// Share of probes on which the two models predict the same class.
double fidelity(const Model& victim, const Model& substitute, std::span<const Vector> probes);
double test_accuracy(const Model& model, const Split& test);

}  // namespace radep
