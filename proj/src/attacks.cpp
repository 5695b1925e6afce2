#include "radep/attacks.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "radep/adversarial.hpp"
#include "radep/errors.hpp"
#include "radep/kernels.hpp"
#include "radep/rng.hpp"

namespace radep {

VictimOracle::VictimOracle(QueryFn fn, LabelMode mode, std::size_t budget)
    : fn_(std::move(fn)), mode_(mode), budget_(budget) {
  if (!fn_) throw InputError("oracle needs a query function");
}

std::optional<ResponsePayload> VictimOracle::query(std::span<const double> x) {
  if (used_ >= budget_) return std::nullopt;
  ++used_;
  return fn_(x);
}

VictimOracle::QueryFn model_oracle(const Model& model, LabelMode mode) {
  return [&model, mode](std::span<const double> x) {
    ResponsePayload r;
    r.mode = mode;
    if (mode == LabelMode::soft) {
      r.probabilities = model.forward(x);
    } else {
      r.label = model.predict(x);
    }
    return r;
  };
}

Vector response_target(const ResponsePayload& response, std::size_t classes) {
  if (response.mode == LabelMode::soft) {
    if (response.probabilities.size() != classes) {
      throw InputError("oracle returned a probability vector of the wrong size");
    }
    return response.probabilities;
  }
  if (response.label < 0 || static_cast<std::size_t>(response.label) >= classes) {
    throw InputError("oracle returned an out-of-range label");
  }
  Vector t(classes, 0.0);
  t[static_cast<std::size_t>(response.label)] = 1.0;
  return t;
}

void AttackBudget::validate() const {
  if (total_queries < seed_samples) throw InputError("total_queries must cover the seed samples");
  if (rounds < 1) throw InputError("rounds must be at least 1");
  if (epochs_per_round < 0) throw InputError("epochs_per_round must be nonnegative");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (batch_size == 0) throw InputError("batch_size must be positive");
}

namespace {

// Labels x through the oracle while the attack's own budget allows.
class Labeler {
 public:
  Labeler(VictimOracle& oracle, std::size_t limit, std::size_t classes)
      : oracle_(oracle), limit_(limit), classes_(classes) {}

  bool label(const Vector& x, std::vector<SoftExample>& out, std::vector<Vector>& log) {
    if (used_ >= limit_) return false;
    const auto r = oracle_.query(x);
    if (!r) return false;
    ++used_;
    log.push_back(x);
    out.push_back({x, response_target(*r, classes_)});
    return true;
  }

  std::size_t used() const { return used_; }

 private:
  VictimOracle& oracle_;
  std::size_t limit_;
  std::size_t classes_;
  std::size_t used_ = 0;
};

}  // namespace

ExtractionResult jbda_tr(VictimOracle& oracle, std::span<const Vector> seeds,
                         const AttackBudget& budget, double epsilon_aug, Model substitute,
                         std::uint64_t seed) {
  budget.validate();
  if (seeds.empty()) throw InputError("jbda_tr needs seed samples");
  if (!(epsilon_aug > 0.0)) throw InputError("epsilon_aug must be positive");
  const std::size_t classes = substitute.num_classes();

  ExtractionResult result{std::move(substitute), 0, false, 0, {}};
  Labeler labeler(oracle, budget.total_queries, classes);
  std::vector<SoftExample> set;
  for (const auto& x : seeds) {
    if (!labeler.label(x, set, result.queries)) {
      result.truncated = true;
      break;
    }
  }

  std::mt19937_64 rng(seed);
  SgdTrainer trainer(std::move(result.substitute), budget.learning_rate, budget.batch_size,
                     derive_seed(seed, 1));
  std::size_t trained_size = 0;
  const auto train_round = [&] {
    if (set.empty()) return;
    for (int e = 0; e < budget.epochs_per_round; ++e) trainer.run_epoch(set);
    trained_size = set.size();
  };

  for (int round = 0; round < budget.rounds && !result.truncated; ++round) {
    train_round();
    const std::size_t n = set.size();
    std::uniform_int_distribution<std::size_t> other(0, classes - 2);
    // Targets are drawn up front so the crafting below is order-independent.
    std::vector<int> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto own = static_cast<std::size_t>(argmax(set[i].target));
      std::size_t t = other(rng);
      if (t >= own) ++t;
      targets[i] = static_cast<int>(t);
    }
    const Model& current = trainer.model();
    const auto synthetic = kernels::parallel_map(n, [&](std::size_t i) {
      return targeted_fgsm(current, set[i].x, targets[i], epsilon_aug);
    });
    for (const auto& x : synthetic) {
      if (!labeler.label(x, set, result.queries)) {
        result.truncated = true;
        break;
      }
    }
  }
  if (set.size() != trained_size) train_round();

  result.substitute = trainer.release();
  result.queries_used = labeler.used();
  result.training_set_size = set.size();
  return result;
}

ExtractionResult knockoffnet(VictimOracle& oracle, std::span<const Vector> surrogate,
                             const AttackBudget& budget, Model substitute, int epochs,
                             std::uint64_t seed) {
  if (surrogate.empty()) throw InputError("knockoffnet needs a non-empty surrogate pool");
  if (epochs < 0) throw InputError("epochs must be nonnegative");
  ExtractionResult result{std::move(substitute), 0, false, 0, {}};
  const std::size_t want = budget.total_queries;
  if (want == 0) return result;
  const std::size_t classes = result.substitute.num_classes();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picks;
  if (surrogate.size() >= want) {
    picks.resize(surrogate.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(want);
  } else {
    std::uniform_int_distribution<std::size_t> any(0, surrogate.size() - 1);
    for (std::size_t i = 0; i < want; ++i) picks.push_back(any(rng));
  }

  Labeler labeler(oracle, want, classes);
  std::vector<SoftExample> set;
  for (const auto i : picks) {
    if (!labeler.label(surrogate[i], set, result.queries)) {
      result.truncated = true;
      break;
    }
  }
  result.queries_used = labeler.used();
  result.training_set_size = set.size();
  if (set.empty()) return result;
  SgdTrainer trainer(std::move(result.substitute), budget.learning_rate, budget.batch_size,
                     derive_seed(seed, 1));
  for (int e = 0; e < epochs; ++e) trainer.run_epoch(set);
  result.substitute = trainer.release();
  return result;
}

ExtractionResult cloudleak(VictimOracle& oracle, std::span<const Vector> seeds,
                           const AttackBudget& budget, Model pretrained, std::uint64_t seed,
                           const CloudleakOptions& options) {
  if (seeds.empty()) throw InputError("cloudleak needs seed samples");
  ExtractionResult result{std::move(pretrained), 0, false, 0, {}};
  const std::size_t want = budget.total_queries;
  if (want == 0) return result;
  const std::size_t classes = result.substitute.num_classes();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, options.jitter);
  std::uniform_int_distribution<std::size_t> pick(0, seeds.size() - 1);
  std::vector<Vector> starts(want);
  for (auto& s : starts) {
    s = seeds[pick(rng)];
    for (double& v : s) v = std::clamp(v + jitter(rng), 0.0, 1.0);
  }
  const Model& sub = result.substitute;
  const auto crafted = kernels::parallel_map(want, [&](std::size_t i) {
    return deepfool(sub, starts[i], options.deepfool_iterations, options.overshoot).x_adv;
  });

  Labeler labeler(oracle, want, classes);
  std::vector<SoftExample> set;
  for (const auto& x : crafted) {
    if (!labeler.label(x, set, result.queries)) {
      result.truncated = true;
      break;
    }
  }
  result.queries_used = labeler.used();
  result.training_set_size = set.size();
  if (set.empty()) return result;
  SgdTrainer trainer(std::move(result.substitute), budget.learning_rate, budget.batch_size,
                     derive_seed(seed, 1));
  for (int e = 0; e < options.fine_tune_epochs; ++e) trainer.run_epoch(set);
  result.substitute = trainer.release();
  return result;
}

namespace {

std::vector<Vector> inputs_of(const Split& split) {
  std::vector<Vector> xs;
  xs.reserve(split.size());
  for (const auto& e : split) xs.push_back(e.x);
  return xs;
}

}  // namespace

double fidelity(const Model& victim, const Model& substitute, std::span<const Vector> probes) {
  if (probes.empty()) throw InputError("fidelity needs probes");
  if (victim.input_dim() != substitute.input_dim() ||
      victim.num_classes() != substitute.num_classes()) {
    throw InputError("fidelity needs models of the same shape");
  }
  const auto a = kernels::predict_labels(victim, probes);
  const auto b = kernels::predict_labels(substitute, probes);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(probes.size());
}

double test_accuracy(const Model& model, const Split& test) {
  if (test.empty()) throw InputError("test accuracy needs a non-empty split");
  const auto xs = inputs_of(test);
  const auto labels = kernels::predict_labels(model, xs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += labels[i] == test[i].y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace radep
