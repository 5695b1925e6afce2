#include "radep/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "radep/errors.hpp"
#include "radep/kernels.hpp"
#include "radep/rng.hpp"

namespace radep {

void BenchmarkConfig::validate() const {
  if (dim == 0 || classes < 2) throw InputError("benchmark needs dim >= 1 and classes >= 2");
  if (train == 0 || test == 0) throw InputError("benchmark needs train and test points");
  if (!(spread > 0.0)) throw InputError("spread must be positive");
  if (!(benign_rate > 0.0 && attacker_rate > 0.0)) throw InputError("rates must be positive");
  if (!(window_length > 0.0)) throw InputError("window_length must be positive");
  hardening.validate();
  hardening_attack.validate();
  jbda.validate();
  tiers.validate();
}

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c) {
  return {{"format", "radep-benchmark-config"},
          {"version", 1},
          {"dim", c.dim},
          {"classes", c.classes},
          {"train", c.train},
          {"validation", c.validation},
          {"test", c.test},
          {"spread", c.spread},
          {"hidden", c.hidden},
          {"dropout", c.dropout},
          {"victim_epochs", c.victim_training.epochs},
          {"learning_rate", c.victim_training.learning_rate},
          {"batch_size", c.victim_training.batch_size},
          {"hardening",
           {{"rounds", c.hardening.rounds},
            {"epochs_per_round", c.hardening.epochs_per_round},
            {"adversarial_fraction", c.hardening.adversarial_fraction},
            {"refresh_period", c.hardening.refresh_period},
            {"mix", {c.hardening.method_mix.fgsm, c.hardening.method_mix.pgd,
                     c.hardening.method_mix.deepfool}},
            {"epsilon", c.hardening_attack.epsilon},
            {"step_size", c.hardening_attack.step_size},
            {"iterations", c.hardening_attack.iterations}}},
          {"jbda",
           {{"seed_samples", c.jbda.seed_samples},
            {"total_queries", c.jbda.total_queries},
            {"rounds", c.jbda.rounds},
            {"epochs_per_round", c.jbda.epochs_per_round},
            {"epsilon", c.jbda_epsilon}}},
          {"knockoff", {{"budget", c.knockoff_budget}, {"epochs", c.knockoff_epochs},
                        {"surrogate_shift", c.surrogate_shift}}},
          {"cloudleak", {{"budget", c.cloudleak_budget}, {"seeds", c.cloudleak_seeds}}},
          {"traffic",
           {{"benign_rate", c.benign_rate},
            {"attacker_rate", c.attacker_rate},
            {"window_length", c.window_length},
            {"similarity_threshold", c.similarity_threshold}}},
          {"tiers",
           {{"tau1", c.tiers.tau1},
            {"tau2", c.tiers.tau2},
            {"eps_low", c.tiers.eps_low},
            {"eps_medium", c.tiers.eps_medium},
            {"eps_high", c.tiers.eps_high},
            {"scaling_strength", c.tiers.scaling_strength}}}};
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
  BenchmarkConfig c;
  try {
    if (j.contains("format") && j["format"] != "radep-benchmark-config") {
      throw FormatError("not a benchmark config");
    }
    if (j.value("version", 1) != 1) throw FormatError("unsupported benchmark config version");
    c.dim = j.value("dim", c.dim);
    c.classes = j.value("classes", c.classes);
    c.train = j.value("train", c.train);
    c.validation = j.value("validation", c.validation);
    c.test = j.value("test", c.test);
    c.spread = j.value("spread", c.spread);
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.victim_training.epochs = j.value("victim_epochs", c.victim_training.epochs);
    c.victim_training.learning_rate = j.value("learning_rate", c.victim_training.learning_rate);
    c.victim_training.batch_size = j.value("batch_size", c.victim_training.batch_size);
    if (j.contains("hardening")) {
      const auto& h = j["hardening"];
      c.hardening.rounds = h.value("rounds", c.hardening.rounds);
      c.hardening.epochs_per_round = h.value("epochs_per_round", c.hardening.epochs_per_round);
      c.hardening.adversarial_fraction =
          h.value("adversarial_fraction", c.hardening.adversarial_fraction);
      c.hardening.refresh_period = h.value("refresh_period", c.hardening.refresh_period);
      if (h.contains("mix")) {
        const auto mix = h["mix"].get<std::vector<double>>();
        if (mix.size() != 3) throw FormatError("hardening mix needs three entries");
        c.hardening.method_mix = {mix[0], mix[1], mix[2]};
      }
      c.hardening_attack.epsilon = h.value("epsilon", c.hardening_attack.epsilon);
      c.hardening_attack.step_size = h.value("step_size", c.hardening_attack.step_size);
      c.hardening_attack.iterations = h.value("iterations", c.hardening_attack.iterations);
    }
    if (j.contains("jbda")) {
      const auto& b = j["jbda"];
      c.jbda.seed_samples = b.value("seed_samples", c.jbda.seed_samples);
      c.jbda.total_queries = b.value("total_queries", c.jbda.total_queries);
      c.jbda.rounds = b.value("rounds", c.jbda.rounds);
      c.jbda.epochs_per_round = b.value("epochs_per_round", c.jbda.epochs_per_round);
      c.jbda_epsilon = b.value("epsilon", c.jbda_epsilon);
    }
    if (j.contains("knockoff")) {
      const auto& k = j["knockoff"];
      c.knockoff_budget = k.value("budget", c.knockoff_budget);
      c.knockoff_epochs = k.value("epochs", c.knockoff_epochs);
      c.surrogate_shift = k.value("surrogate_shift", c.surrogate_shift);
    }
    if (j.contains("cloudleak")) {
      c.cloudleak_budget = j["cloudleak"].value("budget", c.cloudleak_budget);
      c.cloudleak_seeds = j["cloudleak"].value("seeds", c.cloudleak_seeds);
    }
    if (j.contains("traffic")) {
      const auto& t = j["traffic"];
      c.benign_rate = t.value("benign_rate", c.benign_rate);
      c.attacker_rate = t.value("attacker_rate", c.attacker_rate);
      c.window_length = t.value("window_length", c.window_length);
      c.similarity_threshold = t.value("similarity_threshold", c.similarity_threshold);
    }
    if (j.contains("tiers")) {
      const auto& t = j["tiers"];
      c.tiers.tau1 = t.value("tau1", c.tiers.tau1);
      c.tiers.tau2 = t.value("tau2", c.tiers.tau2);
      c.tiers.eps_low = t.value("eps_low", c.tiers.eps_low);
      c.tiers.eps_medium = t.value("eps_medium", c.tiers.eps_medium);
      c.tiers.eps_high = t.value("eps_high", c.tiers.eps_high);
      c.tiers.scaling_strength = t.value("scaling_strength", c.tiers.scaling_strength);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed benchmark config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("invalid benchmark config: ") + e.what());
  }
  return c;
}

namespace {

std::vector<Vector> centers_for(const BenchmarkConfig& c, std::uint64_t seed) {
  return blob_centers(BlobSpec{c.dim, c.classes, c.spread, 0.25, 0.75, seed});
}

std::vector<Vector> inputs_of(const Split& split) {
  std::vector<Vector> xs;
  xs.reserve(split.size());
  for (const auto& e : split) xs.push_back(e.x);
  return xs;
}

}  // namespace

Dataset make_benchmark(const BenchmarkConfig& config, std::uint64_t seed) {
  const auto centers = centers_for(config, seed);
  Dataset d;
  d.dim = config.dim;
  d.classes = config.classes;
  d.train = sample_blobs(centers, config.spread, config.train, derive_seed(seed, 1));
  if (config.validation > 0) {
    d.validation = sample_blobs(centers, config.spread, config.validation, derive_seed(seed, 2));
  }
  d.test = sample_blobs(centers, config.spread, config.test, derive_seed(seed, 3));
  return d;
}

std::vector<Vector> attacker_seeds(const BenchmarkConfig& config, std::uint64_t data_seed,
                                   std::size_t count, std::uint64_t draw) {
  const auto centers = centers_for(config, data_seed);
  return inputs_of(sample_blobs(centers, config.spread, count,
                                derive_seed(derive_seed(data_seed, 4), draw)));
}

std::vector<Vector> surrogate_pool(const BenchmarkConfig& config, std::uint64_t data_seed,
                                   std::size_t count, std::uint64_t draw) {
  auto centers = centers_for(config, data_seed);
  std::mt19937_64 rng(derive_seed(data_seed, 5));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& c : centers) {
    Vector dir(c.size());
    double norm = 0.0;
    for (double& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] = std::clamp(c[k] + config.surrogate_shift * dir[k] / norm, 0.0, 1.0);
    }
  }
  return inputs_of(sample_blobs(centers, config.spread, count,
                                derive_seed(derive_seed(data_seed, 6), draw)));
}

Model fresh_model(const BenchmarkConfig& config, std::uint64_t seed) {
  std::vector<std::size_t> dims{config.dim};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(config.classes);
  return Model::initialized(dims, config.dropout, derive_seed(seed, 7));
}

Model train_victim(const Dataset& data, const BenchmarkConfig& config, std::uint64_t seed) {
  TrainOptions options = config.victim_training;
  options.seed = derive_seed(seed, 8);
  return train(fresh_model(config, seed), data.train, options).model;
}

HardeningResult harden_victim(const Dataset& data, const BenchmarkConfig& config,
                              std::uint64_t seed) {
  TrainOptions options = config.victim_training;
  options.seed = derive_seed(seed, 8);
  return progressive_adversarial_train(fresh_model(config, seed), data, config.hardening,
                                       config.hardening_attack, options);
}

Model pretrain_substitute(const BenchmarkConfig& config, std::uint64_t seed) {
  const BlobSpec spec{config.dim, config.classes, config.spread, 0.25, 0.75, derive_seed(seed, 9)};
  const auto data = make_blobs(spec, 2000);
  TrainOptions options{20, config.victim_training.learning_rate,
                       config.victim_training.batch_size, derive_seed(seed, 10)};
  return train(fresh_model(config, derive_seed(seed, 11)), data, options).model;
}

std::string_view to_string(AttackKind a) {
  switch (a) {
    case AttackKind::jbda_tr: return "jbda_tr";
    case AttackKind::knockoffnet: return "knockoffnet";
    case AttackKind::cloudleak: return "cloudleak";
  }
  return "jbda_tr";
}

AttackKind attack_kind_from_string(std::string_view s) {
  if (s == "jbda_tr") return AttackKind::jbda_tr;
  if (s == "knockoffnet") return AttackKind::knockoffnet;
  if (s == "cloudleak") return AttackKind::cloudleak;
  throw InputError("unknown attack '" + std::string(s) + "'");
}

ExtractionResult run_attack(AttackKind kind, VictimOracle& oracle, const BenchmarkConfig& config,
                            std::uint64_t data_seed, std::uint64_t seed) {
  switch (kind) {
    case AttackKind::jbda_tr: {
      const auto seeds = attacker_seeds(config, data_seed, config.jbda.seed_samples, seed);
      return jbda_tr(oracle, seeds, config.jbda, config.jbda_epsilon,
                     fresh_model(config, derive_seed(seed, 12)), seed);
    }
    case AttackKind::knockoffnet: {
      const auto pool = surrogate_pool(config, data_seed, config.knockoff_budget, seed);
      AttackBudget budget = config.jbda;
      budget.seed_samples = 0;
      budget.total_queries = config.knockoff_budget;
      return knockoffnet(oracle, pool, budget, fresh_model(config, derive_seed(seed, 12)),
                         config.knockoff_epochs, seed);
    }
    case AttackKind::cloudleak: {
      const auto seeds = attacker_seeds(config, data_seed, config.cloudleak_seeds, seed);
      AttackBudget budget = config.jbda;
      budget.seed_samples = 0;
      budget.total_queries = config.cloudleak_budget;
      return cloudleak(oracle, seeds, budget, pretrain_substitute(config, derive_seed(seed, 13)),
                       seed);
    }
  }
  throw InputError("unknown attack");
}

VictimOracle::QueryFn gateway_oracle(Gateway& gateway, std::string session, LabelMode mode,
                                     double start, double rate) {
  if (!(rate > 0.0)) throw InputError("rate must be positive");
  auto clock = std::make_shared<double>(start);
  return [&gateway, session = std::move(session), mode, clock, rate](std::span<const double> x) {
    const double now = *clock;
    *clock += 1.0 / rate;
    return gateway.handle_query(session, x, now, mode).payload;
  };
}

namespace {

std::vector<UncertaintyBreakdown> breakdowns(const Model& model, std::span<const Vector> xs,
                                             std::size_t mc_samples, std::uint64_t seed) {
  // Uniform weights only so that sigma is sampled; calibration reweights.
  const UncertaintyWeights probe;
  return kernels::parallel_map(xs.size(), [&](std::size_t i) {
    return score_query(model, xs[i], probe, mc_samples, derive_seed(seed, i));
  });
}

}  // namespace

DetectionProfile build_profile(const Model& victim, const Dataset& data,
                               const BenchmarkConfig& config, std::uint64_t seed,
                               ProfileReport* report) {
  DetectionProfile profile;
  profile.tiers = config.tiers;

  const Split& clean = data.validation.empty() ? data.train : data.validation;
  const auto clean_inputs = inputs_of(clean);
  const auto benign = breakdowns(victim, clean_inputs, profile.mc_samples,
                                 derive_seed(seed, 20));
  // The calibration stream is a JBDA-TR run seeded from validation inputs.
  const std::size_t n_seeds = std::min(config.jbda.seed_samples, clean_inputs.size());
  VictimOracle oracle(model_oracle(victim, LabelMode::soft), LabelMode::soft,
                      config.jbda.total_queries);
  const auto stream =
      jbda_tr(oracle, std::span<const Vector>(clean_inputs).first(n_seeds), config.jbda,
              config.jbda_epsilon, fresh_model(config, derive_seed(seed, 21)),
              derive_seed(seed, 22));
  const auto adversarial = breakdowns(victim, stream.queries, profile.mc_samples,
                                      derive_seed(seed, 23));
  const auto calibration = calibrate(benign, adversarial);
  profile.weights = calibration.weights;

  // Benign-rate windows over the training inputs.
  const auto per_window = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(config.benign_rate * config.window_length)));
  std::vector<BehaviorWindow> windows;
  const auto xs = inputs_of(data.train);
  const auto labels = kernels::predict_labels(victim, xs);
  for (std::size_t start = 0; start + per_window <= xs.size(); start += per_window) {
    const double t0 = static_cast<double>(windows.size()) * config.window_length;
    BehaviorWindow w("reference", t0, config.window_length, config.dim, config.classes);
    for (std::size_t i = 0; i < per_window; ++i) {
      w.add(xs[start + i], labels[start + i],
            t0 + static_cast<double>(i) / config.benign_rate);
    }
    windows.push_back(std::move(w));
  }
  profile.reference = estimate_reference(windows, config.classes);
  profile.reference.interval_length = config.window_length;

  if (report != nullptr) {
    report->calibration = calibration;
    report->benign_samples = benign.size();
    report->adversarial_samples = adversarial.size();
    report->reference_windows = windows.size();
  }
  return profile;
}

namespace {

GatewayOptions defended_options(const BenchmarkConfig& config, std::uint64_t seed) {
  GatewayOptions options;
  options.similarity_threshold = config.similarity_threshold;
  options.seed = derive_seed(seed, 30);
  return options;
}

WatermarkKey defended_key(std::uint64_t seed) { return {derive_seed(seed, 31), 0.05, 0.1}; }

}  // namespace

Gateway make_defended_gateway(const Model& victim, const DetectionProfile& profile,
                              const BenchmarkConfig& config, std::uint64_t seed) {
  return Gateway(victim, profile, defended_key(seed), defended_options(config, seed));
}

namespace {

struct Counts {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;

  double tpr() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double fpr() const { return fp + tn ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0; }
  double balanced() const { return 0.5 * (tpr() + 1.0 - fpr()); }
  double f1() const {
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
};

}  // namespace

DetectionQuality detection_quality(const Model& victim, const DetectionProfile& profile,
                                   const Split& benign, std::span<const Vector> attack_queries,
                                   const BenchmarkConfig& config, std::uint64_t seed) {
  Gateway gateway = make_defended_gateway(victim, profile, config, seed);
  Counts full;
  Counts uncertainty;
  const double tau = profile.weights.tau;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    const auto r = gateway.handle_query("benign", benign[i].x,
                                        static_cast<double>(i) / config.benign_rate);
    (r.record.disposition == Disposition::benign ? full.tn : full.fp) += 1;
    (r.record.scores.u > tau ? uncertainty.fp : uncertainty.tn) += 1;
  }
  for (std::size_t i = 0; i < attack_queries.size(); ++i) {
    const auto r = gateway.handle_query("attacker", attack_queries[i],
                                        static_cast<double>(i) / config.attacker_rate);
    (r.record.disposition == Disposition::benign ? full.fn : full.tp) += 1;
    (r.record.scores.u > tau ? uncertainty.tp : uncertainty.fn) += 1;
  }
  DetectionQuality q;
  q.balanced_accuracy = full.balanced();
  q.f1 = full.f1();
  q.tpr = full.tpr();
  q.fpr = full.fpr();
  q.uncertainty_balanced_accuracy = uncertainty.balanced();
  q.uncertainty_f1 = uncertainty.f1();
  q.benign = benign.size();
  q.attack = attack_queries.size();
  return q;
}

std::vector<GridRow> defense_grid(const Dataset& data, const Model& victim,
                                  const DetectionProfile& profile,
                                  const BenchmarkConfig& config, std::uint64_t data_seed,
                                  std::uint64_t seed) {
  const auto probes = inputs_of(data.test);
  std::vector<GridRow> rows;
  for (const auto kind : {AttackKind::jbda_tr, AttackKind::knockoffnet, AttackKind::cloudleak}) {
    for (const auto mode : {LabelMode::soft, LabelMode::hard}) {
      for (const bool defended : {false, true}) {
        const auto attack_seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(kind));
        std::optional<Gateway> gateway;
        VictimOracle::QueryFn fn;
        if (defended) {
          gateway.emplace(victim, profile, defended_key(seed), defended_options(config, seed));
          fn = gateway_oracle(*gateway, "attacker", mode, 0.0, config.attacker_rate);
        } else {
          fn = model_oracle(victim, mode);
        }
        VictimOracle oracle(fn, mode, std::numeric_limits<std::size_t>::max());
        const auto result = run_attack(kind, oracle, config, data_seed, attack_seed);
        rows.push_back({std::string(to_string(kind)), std::string(to_string(mode)),
                        defended ? "radep" : "none", test_accuracy(result.substitute, data.test),
                        fidelity(victim, result.substitute, probes), result.queries_used,
                        result.truncated});
      }
    }
  }
  return rows;
}

nlohmann::json grid_to_json(std::span<const GridRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"attack", r.attack},
                   {"mode", r.mode},
                   {"defense", r.defense},
                   {"substitute_accuracy", r.substitute_accuracy},
                   {"fidelity", r.fidelity},
                   {"queries", r.queries},
                   {"truncated", r.truncated}});
  }
  return out;
}

std::string grid_table(std::span<const GridRow> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %-5s %-7s %10s %9s %8s\n", "attack", "mode", "defense",
                "sub_acc", "fidelity", "queries");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-12s %-5s %-7s %10.4f %9.4f %8zu\n", r.attack.c_str(),
                  r.mode.c_str(), r.defense.c_str(), r.substitute_accuracy, r.fidelity, r.queries);
    out << line;
  }
  return out.str();
}

PhaseTimings measure_overhead(Gateway& gateway, const Split& inputs, std::size_t n) {
  if (inputs.empty()) throw InputError("overhead run needs inputs");
  gateway.reset_timings();
  for (std::size_t i = 0; i < n; ++i) {
    gateway.handle_query("overhead", inputs[i % inputs.size()].x, static_cast<double>(i));
  }
  return gateway.timings();
}

}  // namespace radep
