#include "radep/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "radep/kernels.hpp"
#include "radep/rng.hpp"

namespace radep {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void AttackParams::validate() const {
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be nonnegative");
  if (!(step_size > 0.0)) throw InputError("step_size must be positive");
  if (step_size > epsilon) throw InputError("step_size must not exceed epsilon");
  if (iterations < 1) throw InputError("iterations must be at least 1");
  if (overshoot < 0.0) throw InputError("overshoot must be nonnegative");
}

Vector fgsm(const Model& model, std::span<const double> x, int y, double epsilon) {
  if (epsilon < 0.0) throw InputError("epsilon must be nonnegative");
  const Vector g = grad_input(model, x, y);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp(x[i] + epsilon * sign(g[i]), 0.0, 1.0);
  }
  return out;
}

Vector targeted_fgsm(const Model& model, std::span<const double> x, int target, double epsilon) {
  if (epsilon < 0.0) throw InputError("epsilon must be nonnegative");
  const Vector g = grad_input(model, x, target);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp(x[i] - epsilon * sign(g[i]), 0.0, 1.0);
  }
  return out;
}

Vector pgd(const Model& model, std::span<const double> x, int y, const AttackParams& params) {
  params.validate();
  Vector cur(x.begin(), x.end());
  const double eps = params.epsilon;
  for (int it = 0; it < params.iterations; ++it) {
    const Vector g = grad_input(model, cur, y);
    if (params.norm == Norm::linf) {
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double stepped = cur[i] + params.step_size * sign(g[i]);
        cur[i] = std::clamp(std::clamp(stepped, x[i] - eps, x[i] + eps), 0.0, 1.0);
      }
    } else {
      const double gn = norm2(g);
      if (gn == 0.0) break;
      Vector delta(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        delta[i] = cur[i] + params.step_size * g[i] / gn - x[i];
      }
      const double dn = norm2(delta);
      const double scale = dn > eps ? eps / dn : 1.0;
      for (std::size_t i = 0; i < cur.size(); ++i) {
        cur[i] = std::clamp(x[i] + delta[i] * scale, 0.0, 1.0);
      }
    }
  }
  return cur;
}

DeepFoolResult deepfool(const Model& model, std::span<const double> x, int max_iterations,
                        double overshoot, std::optional<int> label) {
  if (max_iterations < 0) throw InputError("max_iterations must be nonnegative");
  if (overshoot < 0.0) throw InputError("overshoot must be nonnegative");
  DeepFoolResult result;
  result.x_adv.assign(x.begin(), x.end());
  const int k0 = model.predict(x);
  result.original_class = k0;
  result.final_class = k0;
  if (label.has_value() && *label != k0) {
    result.converged = true;
    return result;
  }

  const std::size_t classes = model.num_classes();
  Vector r_total(x.size(), 0.0);
  int k_i = k0;
  while (k_i == k0 && result.iterations < max_iterations) {
    const Vector f = model.logits(result.x_adv);
    const auto jac = logit_jacobian(model, result.x_adv);
    double best_dist = std::numeric_limits<double>::infinity();
    Vector best_w;
    double best_f = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      if (static_cast<int>(k) == k0) continue;
      Vector w(x.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = jac[k][i] - jac[k0][i];
      const double wn = norm2(w);
      if (wn == 0.0) continue;
      const double fk = f[k] - f[static_cast<std::size_t>(k0)];
      const double dist = std::abs(fk) / wn;
      if (dist < best_dist) {
        best_dist = dist;
        best_w = std::move(w);
        best_f = fk;
      }
    }
    if (best_w.empty()) break;
    const double wn2 = std::inner_product(best_w.begin(), best_w.end(), best_w.begin(), 0.0);
    const double scale = std::abs(best_f) / wn2;
    for (std::size_t i = 0; i < r_total.size(); ++i) r_total[i] += scale * best_w[i];
    for (std::size_t i = 0; i < x.size(); ++i) {
      result.x_adv[i] = std::clamp(x[i] + (1.0 + overshoot) * r_total[i], 0.0, 1.0);
    }
    k_i = model.predict(result.x_adv);
    ++result.iterations;
  }
  result.final_class = k_i;
  result.converged = k_i != k0;
  return result;
}

void MethodMix::validate() const {
  if (fgsm < 0.0 || pgd < 0.0 || deepfool < 0.0) {
    throw InputError("method mix weights must be nonnegative");
  }
  if (std::abs(fgsm + pgd + deepfool - 1.0) > 1e-9) {
    throw InputError("method mix weights must sum to 1");
  }
}

void TrainingSchedule::validate() const {
  if (rounds < 1) throw InputError("rounds must be positive");
  if (epochs_per_round < 1) throw InputError("epochs_per_round must be positive");
  if (!(adversarial_fraction >= 0.0 && adversarial_fraction <= 1.0)) {
    throw InputError("adversarial_fraction must lie in [0,1]");
  }
  if (refresh_period < 1) throw InputError("refresh_period must be positive");
  method_mix.validate();
}

namespace {

constexpr int kDeepFoolIterations = 50;

LabeledExample attack_one(const Model& model, const LabeledExample& src, AttackMethod method,
                          const AttackParams& params) {
  switch (method) {
    case AttackMethod::fgsm: return {fgsm(model, src.x, src.y, params.epsilon), src.y};
    case AttackMethod::pgd: return {pgd(model, src.x, src.y, params), src.y};
    case AttackMethod::deepfool:
      return {deepfool(model, src.x, kDeepFoolIterations, params.overshoot, src.y).x_adv, src.y};
  }
  return src;
}

std::size_t pool_size_for(std::size_t clean, double fraction) {
  if (fraction <= 0.0) return 0;
  if (fraction >= 1.0) return clean;
  return static_cast<std::size_t>(std::llround(static_cast<double>(clean) * fraction / (1.0 - fraction)));
}

const Split& evaluation_split(const Dataset& data) {
  if (!data.validation.empty()) return data.validation;
  if (!data.test.empty()) return data.test;
  return data.train;
}

}  // namespace

Split generate_adversarial(const Model& model, const Split& sources, AttackMethod method,
                           const AttackParams& params) {
  return kernels::parallel_map(sources.size(), [&](std::size_t i) {
    return attack_one(model, sources[i], method, params);
  });
}

double fgsm_flip_rate(const Model& model, const Split& points, double epsilon) {
  if (points.empty()) throw InputError("flip rate needs a non-empty split");
  const auto flipped = kernels::parallel_map(points.size(), [&](std::size_t i) {
    const auto& p = points[i];
    const Vector adv = fgsm(model, p.x, p.y, epsilon);
    return model.predict(adv) != model.predict(p.x) ? 1 : 0;
  });
  double total = 0.0;
  for (int f : flipped) total += f;
  return total / static_cast<double>(points.size());
}

HardeningResult progressive_adversarial_train(Model model, const Dataset& data,
                                              const TrainingSchedule& schedule,
                                              const AttackParams& attack,
                                              const TrainOptions& options) {
  schedule.validate();
  attack.validate();
  if (data.train.empty()) throw InputError("training split is empty");

  const auto clean = one_hot(data.train, model.num_classes());
  const std::size_t pool_target = pool_size_for(clean.size(), schedule.adversarial_fraction);
  const Split& eval = evaluation_split(data);
  const std::array<double, 3> mix{schedule.method_mix.fgsm, schedule.method_mix.pgd,
                                  schedule.method_mix.deepfool};

  SgdTrainer trainer(std::move(model), options.learning_rate, options.batch_size, options.seed);
  std::vector<SoftExample> pool;
  std::vector<SoftExample> samples = clean;
  HardeningResult result;

  for (int round = 0; round < schedule.rounds; ++round) {
    if (pool_target > 0 && round % schedule.refresh_period == 0) {
      std::mt19937_64 rng(derive_seed(options.seed, 0xad00 + static_cast<std::uint64_t>(round)));
      std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
      std::discrete_distribution<int> method(mix.begin(), mix.end());
      std::vector<std::pair<std::size_t, AttackMethod>> plan(pool_target);
      for (auto& p : plan) p = {pick(rng), static_cast<AttackMethod>(method(rng))};
      const Model& current = trainer.model();
      const auto adv = kernels::parallel_map(plan.size(), [&](std::size_t i) {
        return attack_one(current, data.train[plan[i].first], plan[i].second, attack);
      });
      pool = one_hot(adv, current.num_classes());
      if (schedule.adversarial_fraction >= 1.0) {
        samples = pool;
      } else {
        samples = clean;
        samples.insert(samples.end(), pool.begin(), pool.end());
      }
    }
    for (int e = 0; e < schedule.epochs_per_round; ++e) trainer.run_epoch(samples);

    RoundReport report;
    report.round = round;
    report.clean_loss = mean_loss(trainer.model(), clean);
    report.adversarial_loss = mean_loss(trainer.model(), pool);
    report.attack_success_rate = fgsm_flip_rate(trainer.model(), eval, attack.epsilon);
    report.pool_size = pool.size();
    result.rounds.push_back(report);
  }
  result.model = trainer.release();
  return result;
}

EvaluationOutcome periodic_evaluation(const Model& model, const DetectionProfile& profile,
                                      const Split& holdout, const EvaluationSettings& settings,
                                      std::uint64_t seed) {
  if (!(settings.tolerance > 0.0 && settings.tolerance < 1.0)) {
    throw InputError("tolerance must lie in (0,1)");
  }
  if (!(settings.tau_decrement > 0.0 && settings.tau_decrement < 1.0)) {
    throw InputError("tau_decrement must lie in (0,1)");
  }
  EvaluationOutcome out;
  out.profile = profile;
  out.report.tau_before = profile.weights.tau;
  out.report.tau_after = profile.weights.tau;
  if (holdout.empty() || settings.simulation_budget == 0) return out;

  const auto& weights = profile.weights;
  const auto score = [&](std::span<const double> x, std::uint64_t s) {
    return score_query(model, x, weights, profile.mc_samples, s).u;
  };

  const auto fp_flags = kernels::parallel_map(holdout.size(), [&](std::size_t i) {
    return score(holdout[i].x, derive_seed(seed, i)) > weights.tau ? 1 : 0;
  });
  double fp = 0.0;
  for (int f : fp_flags) fp += f;
  out.report.false_positive_rate = fp / static_cast<double>(holdout.size());

  std::mt19937_64 rng(derive_seed(seed, 0xe7a1));
  std::uniform_int_distribution<std::size_t> pick(0, holdout.size() - 1);
  std::vector<std::size_t> chosen(settings.simulation_budget);
  for (auto& c : chosen) c = pick(rng);

  std::size_t total_success = 0;
  for (AttackMethod method : {AttackMethod::fgsm, AttackMethod::pgd}) {
    struct Attempt {
      LabeledExample adv;
      int success = 0;
    };
    const auto attempts = kernels::parallel_map(chosen.size(), [&](std::size_t i) {
      const auto& src = holdout[chosen[i]];
      Attempt a{attack_one(model, src, method, settings.attack), 0};
      if (model.predict(src.x) == src.y && model.predict(a.adv.x) != src.y &&
          score(a.adv.x, derive_seed(seed, 0x10000 + i)) <= weights.tau) {
        a.success = 1;
      }
      return a;
    });
    std::size_t successes = 0;
    for (const auto& a : attempts) {
      if (a.success) {
        ++successes;
        out.successful.push_back(a.adv);
      }
    }
    const double rate = static_cast<double>(successes) / static_cast<double>(chosen.size());
    if (method == AttackMethod::fgsm) {
      out.report.fgsm_success_rate = rate;
    } else {
      out.report.pgd_success_rate = rate;
    }
    total_success += successes;
  }
  out.report.attempts = 2 * chosen.size();
  out.report.attack_success_rate =
      static_cast<double>(total_success) / static_cast<double>(out.report.attempts);

  if (out.report.attack_success_rate > settings.tolerance) {
    double& tau = out.profile.weights.tau;
    tau = tau > 0.0 ? tau * settings.tau_decrement : tau - 0.01;
    out.report.adjusted = true;
    out.report.tau_after = tau;
  }
  return out;
}

}  // namespace radep
