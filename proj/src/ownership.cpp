#include "radep/ownership.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "radep/kernels.hpp"
#include "radep/profile.hpp"
#include "radep/rng.hpp"

namespace radep {

std::string_view to_string(OwnershipDecision d) {
  return d == OwnershipDecision::verified ? "verified" : "not_verified";
}

double median_nn_distance(const Split& data, std::size_t max_points) {
  if (data.size() < 2) throw InputError("nearest-neighbour distance needs two points");
  const std::size_t n = std::min(data.size(), max_points);
  const auto dists = kernels::parallel_map(n, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < data[i].x.size(); ++k) {
        const double diff = data[i].x[k] - data[j].x[k];
        d2 += diff * diff;
      }
      best = std::min(best, d2);
    }
    return std::sqrt(best);
  });
  Vector sorted = dists;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
  return sorted[n / 2];
}

double default_isolation_radius(const Split& training) {
  return 2.0 * median_nn_distance(training);
}

TriggerSet generate_trigger_set(std::size_t n, std::size_t dim, std::size_t classes,
                                const Split& training, std::uint64_t seed,
                                std::optional<double> radius, std::size_t max_attempts) {
  if (n == 0) throw InputError("trigger set size must be positive");
  if (dim == 0 || classes == 0) throw InputError("trigger set needs dim and classes");
  TriggerSet set;
  set.generation_seed = seed;
  if (radius.has_value()) {
    set.radius = *radius;
  } else {
    set.radius = training.size() >= 2 ? default_isolation_radius(training) : 0.0;
  }

  std::vector<Vector> bank;
  bank.reserve(training.size());
  for (const auto& e : training) bank.push_back(e.x);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  // Candidates are screened in batches so the distance scan can run in parallel.
  constexpr std::size_t kBatch = 256;
  std::size_t attempts = 0;
  while (set.pairs.size() < n && attempts < max_attempts) {
    const std::size_t batch = std::min(kBatch, max_attempts - attempts);
    std::vector<Vector> candidates(batch, Vector(dim));
    std::vector<int> labels(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (double& v : candidates[b]) v = unit(rng);
      labels[b] = label(rng);
    }
    const Vector nearest = kernels::nearest_distances(candidates, bank);
    for (std::size_t b = 0; b < batch && set.pairs.size() < n; ++b) {
      ++attempts;
      if (nearest[b] < set.radius) continue;
      const bool duplicate = std::any_of(set.pairs.begin(), set.pairs.end(),
                                         [&](const auto& p) { return p.x == candidates[b]; });
      if (duplicate) continue;
      set.pairs.push_back({std::move(candidates[b]), labels[b]});
    }
  }
  if (set.pairs.size() < n) {
    throw TriggerGenerationError("found only " + std::to_string(set.pairs.size()) + " of " +
                                     std::to_string(n) + " isolated triggers",
                                 set.pairs.size());
  }
  return set;
}

double trigger_accuracy(const Model& model, const TriggerSet& triggers) {
  if (triggers.pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : triggers.pairs) hits += model.predict(t.x) == t.y ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(triggers.pairs.size());
}

namespace {

double accuracy(const Model& model, const Split& split) {
  if (split.empty()) return 0.0;
  const auto labels = kernels::predict_labels(model, [&] {
    std::vector<Vector> xs;
    xs.reserve(split.size());
    for (const auto& e : split) xs.push_back(e.x);
    return xs;
  }());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) correct += labels[i] == split[i].y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

}  // namespace

Model embed_backdoor(Model model, const TriggerSet& triggers, const Dataset& data,
                     const BackdoorOptions& options) {
  if (options.epochs == 0 || triggers.pairs.empty()) return model;
  if (data.train.empty()) throw InputError("backdoor embedding needs clean training data");
  if (!(options.mixing_ratio > 0.0 && options.mixing_ratio < 1.0)) {
    throw InputError("mixing_ratio must lie in (0,1)");
  }
  for (const auto& t : triggers.pairs) validate_example(t, model.input_dim(), model.num_classes());

  const Split& validation = data.validation.empty() ? data.test : data.validation;
  const double clean_before = accuracy(model, validation);

  auto samples = one_hot(data.train, model.num_classes());
  const auto trigger_samples = one_hot(triggers.pairs, model.num_classes());
  const double wanted = options.mixing_ratio / (1.0 - options.mixing_ratio) *
                        static_cast<double>(samples.size());
  const auto reps = static_cast<std::size_t>(
      std::ceil(wanted / static_cast<double>(trigger_samples.size())));
  for (std::size_t r = 0; r < std::max<std::size_t>(reps, 1); ++r) {
    samples.insert(samples.end(), trigger_samples.begin(), trigger_samples.end());
  }

  SgdTrainer trainer(std::move(model), options.learning_rate, options.batch_size, options.seed);
  for (int e = 0; e < options.epochs; ++e) trainer.run_epoch(samples);
  Model embedded = trainer.release();

  const double hit_rate = trigger_accuracy(embedded, triggers);
  const double drop = validation.empty() ? 0.0 : clean_before - accuracy(embedded, validation);
  if (hit_rate < options.min_trigger_accuracy || drop > options.max_clean_drop) {
    throw EmbeddingError("backdoor embedding failed: trigger accuracy " +
                             std::to_string(hit_rate) + ", clean accuracy drop " +
                             std::to_string(drop),
                         hit_rate, drop);
  }
  return embedded;
}

void WatermarkKey::validate() const {
  if (!(magnitude > 0.0 && magnitude < 1.0)) throw InputError("watermark magnitude must lie in (0,1)");
  if (!(carrier_rate >= 0.0 && carrier_rate <= 1.0)) {
    throw InputError("carrier_rate must lie in [0,1]");
  }
}

std::uint64_t query_hash(std::span<const double> query, const WatermarkKey& key) {
  return hash_bytes({reinterpret_cast<const unsigned char*>(query.data()), query.size_bytes()},
                    key.secret_seed);
}

bool is_carrier(std::span<const double> query, const WatermarkKey& key) {
  const double u = static_cast<double>(query_hash(query, key) >> 11) * 0x1.0p-53;
  return u < key.carrier_rate;
}

Vector watermark_direction(std::span<const double> query, const WatermarkKey& key,
                           std::size_t classes) {
  std::mt19937_64 rng(derive_seed(query_hash(query, key), key.secret_seed));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector d(classes);
  for (double& v : d) v = u(rng);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(classes);
  double top = 0.0;
  for (double& v : d) {
    v -= mean;
    top = std::max(top, std::abs(v));
  }
  if (top == 0.0) return Vector(classes, 0.0);
  for (double& v : d) v /= top;
  return d;
}

Vector watermark_response(std::span<const double> probs, std::span<const double> query,
                          const WatermarkKey& key) {
  Vector out(probs.begin(), probs.end());
  if (!is_carrier(query, key)) return out;
  const Vector d = watermark_direction(query, key, probs.size());
  const int top = argmax(probs);
  double scale = key.magnitude;
  for (int attempt = 0; attempt < 30; ++attempt, scale *= 0.5) {
    double sum = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = std::max(0.0, probs[k] + scale * d[k]);
      sum += out[k];
    }
    if (sum <= 0.0) break;
    for (double& v : out) v /= sum;
    if (argmax(out) == top) return out;
  }
  return Vector(probs.begin(), probs.end());
}

WatermarkKey make_watermark_key(std::uint64_t secret_seed, double magnitude,
                                double carrier_rate, const Model& model,
                                const Split& validation) {
  WatermarkKey key{secret_seed, magnitude, carrier_rate};
  key.validate();
  for (int attempt = 0; attempt < 20; ++attempt) {
    bool preserved = true;
    for (const auto& e : validation) {
      if (!is_carrier(e.x, key)) continue;
      const Vector p = model.forward(e.x);
      const Vector d = watermark_direction(e.x, key, p.size());
      Vector w(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) w[k] = std::max(0.0, p[k] + key.magnitude * d[k]);
      if (argmax(w) != argmax(p)) {
        preserved = false;
        break;
      }
    }
    if (preserved) return key;
    key.magnitude *= 0.5;
  }
  return key;
}

namespace {

int answer_label(const ResponsePayload& r) {
  return r.mode == LabelMode::soft ? argmax(r.probabilities) : r.label;
}

}  // namespace

OwnershipVerdict verify_ownership(const SuspectOracle& oracle, LabelMode mode,
                                  const TriggerSet& triggers, const WatermarkKey& key,
                                  std::span<const Vector> probes,
                                  const VerificationThresholds& thresholds,
                                  const Model* owner, std::uint64_t seed) {
  OwnershipVerdict verdict;
  std::size_t calls = 0;
  std::size_t answered = 0;

  std::size_t matched = 0;
  for (const auto& t : triggers.pairs) {
    TriggerOutcome outcome{t.y, -1, false};
    ++calls;
    try {
      outcome.observed = answer_label(oracle(t.x));
      ++answered;
      outcome.matched = outcome.observed == t.y;
    } catch (const std::exception&) {
    }
    matched += outcome.matched ? 1 : 0;
    verdict.details.push_back(outcome);
  }
  if (!triggers.pairs.empty()) {
    verdict.trigger_match_rate =
        static_cast<double>(matched) / static_cast<double>(triggers.pairs.size());
  }

  if (mode == LabelMode::soft) {
    std::vector<Vector> directions;
    std::vector<Vector> residuals;
    for (const auto& q : probes) {
      if (!is_carrier(q, key)) continue;
      ++calls;
      ResponsePayload r;
      try {
        r = oracle(q);
        ++answered;
      } catch (const std::exception&) {
        continue;
      }
      if (r.probabilities.empty()) continue;
      Vector residual = r.probabilities;
      if (owner != nullptr) {
        const Vector clean = owner->forward(q);
        for (std::size_t k = 0; k < residual.size(); ++k) residual[k] -= clean[k];
      }
      Vector d = watermark_direction(q, key, residual.size());
      const double n = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
      if (n == 0.0) continue;
      for (double& v : d) v /= n;
      directions.push_back(std::move(d));
      residuals.push_back(std::move(residual));
    }
    verdict.carrier_probes = directions.size();
    if (directions.size() >= 2) {
      verdict.watermark_available = true;
      const auto statistic = [&](const std::vector<std::size_t>& perm) {
        double total = 0.0;
        for (std::size_t i = 0; i < residuals.size(); ++i) {
          const auto& d = directions[perm[i]];
          total += std::inner_product(d.begin(), d.end(), residuals[i].begin(), 0.0);
        }
        return total / static_cast<double>(residuals.size());
      };
      std::vector<std::size_t> perm(residuals.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      const double observed = statistic(perm);
      std::mt19937_64 rng(derive_seed(seed, 0x3a7e));
      double sum = 0.0;
      double sum2 = 0.0;
      const std::size_t rounds = std::max<std::size_t>(thresholds.permutations, 2);
      for (std::size_t p = 0; p < rounds; ++p) {
        std::shuffle(perm.begin(), perm.end(), rng);
        const double s = statistic(perm);
        sum += s;
        sum2 += s * s;
      }
      const double mean = sum / static_cast<double>(rounds);
      const double var = std::max(0.0, sum2 / static_cast<double>(rounds) - mean * mean);
      const double sd = std::sqrt(var);
      if (sd > 1e-15) {
        verdict.watermark_score = (observed - mean) / sd;
      } else {
        verdict.watermark_score = observed > mean + 1e-15 ? 1e6 : 0.0;
      }
    }
  }

  verdict.coverage = calls == 0 ? 1.0 : static_cast<double>(answered) / static_cast<double>(calls);
  const bool trigger_ok = !triggers.pairs.empty() && verdict.trigger_match_rate >= thresholds.trigger;
  const bool watermark_ok = verdict.watermark_available && verdict.watermark_score >= thresholds.watermark;
  verdict.decision = trigger_ok || watermark_ok ? OwnershipDecision::verified
                                                : OwnershipDecision::not_verified;
  return verdict;
}

Model prune(const Model& model, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InputError("prune fraction must lie in [0,1]");
  Model out = model;
  std::vector<double*> params;
  for (auto& layer : out.layers()) {
    for (double& w : layer.weights) params.push_back(&w);
    for (double& b : layer.bias) params.push_back(&b);
  }
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(params.size())));
  if (count == 0) return out;
  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(*params[a]) < std::abs(*params[b]);
  });
  for (std::size_t i = 0; i < count; ++i) *params[order[i]] = 0.0;
  return out;
}

std::string Modification::label() const {
  char buf[64];
  if (kind == Kind::prune) {
    std::snprintf(buf, sizeof(buf), "prune(%.2f)", amount);
  } else {
    std::snprintf(buf, sizeof(buf), "fine_tune(%d)", static_cast<int>(amount));
  }
  return buf;
}

std::vector<RetentionEntry> robustness_eval(const Model& embedded, const TriggerSet& triggers,
                                            const WatermarkKey& key,
                                            std::span<const Modification> operations,
                                            const Dataset& data,
                                            const VerificationThresholds& thresholds,
                                            const FineTuneOptions& fine_tune) {
  std::vector<Vector> probes;
  for (const auto& e : data.test) probes.push_back(e.x);
  const auto measure = [&](const std::string& name, const Model& m) {
    const SuspectOracle oracle = [&m](std::span<const double> q) {
      ResponsePayload r;
      r.mode = LabelMode::soft;
      r.probabilities = m.forward(q);
      return r;
    };
    const auto v = verify_ownership(oracle, LabelMode::soft, triggers, key, probes, thresholds);
    return RetentionEntry{name, v.trigger_match_rate, v.watermark_score, accuracy(m, data.test),
                          v.decision};
  };

  std::vector<RetentionEntry> report;
  report.push_back(measure("baseline", embedded));
  for (const auto& op : operations) {
    if (op.kind == Modification::Kind::prune) {
      report.push_back(measure(op.label(), prune(embedded, op.amount)));
      continue;
    }
    const int epochs = static_cast<int>(op.amount);
    if (epochs <= 0 || data.train.empty()) {
      report.push_back(measure(op.label(), embedded));
      continue;
    }
    const auto clean = one_hot(data.train, embedded.num_classes());
    SgdTrainer trainer(embedded, fine_tune.learning_rate, fine_tune.batch_size, fine_tune.seed);
    for (int e = 0; e < epochs; ++e) trainer.run_epoch(clean);
    report.push_back(measure(op.label(), trainer.model()));
  }
  return report;
}

nlohmann::json kit_to_json(const OwnershipKit& kit) {
  nlohmann::json triggers = nlohmann::json::array();
  for (const auto& t : kit.triggers.pairs) triggers.push_back({{"x", t.x}, {"y", t.y}});
  return {{"format", "radep-ownership-kit"},
          {"version", kOwnershipKitVersion},
          {"generation_seed", kit.triggers.generation_seed},
          {"radius", kit.triggers.radius},
          {"triggers", triggers},
          {"watermark",
           {{"secret_seed", kit.key.secret_seed},
            {"magnitude", kit.key.magnitude},
            {"carrier_rate", kit.key.carrier_rate}}},
          {"thresholds",
           {{"trigger", kit.thresholds.trigger},
            {"watermark", kit.thresholds.watermark},
            {"permutations", kit.thresholds.permutations}}}};
}

OwnershipKit kit_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "radep-ownership-kit") {
      throw FormatError("not an ownership kit");
    }
    const int version = j.at("version").get<int>();
    if (version != kOwnershipKitVersion) {
      throw FormatError("unsupported ownership kit version " + std::to_string(version));
    }
    OwnershipKit kit;
    kit.triggers.generation_seed = j.at("generation_seed").get<std::uint64_t>();
    kit.triggers.radius = j.at("radius").get<double>();
    for (const auto& t : j.at("triggers")) {
      kit.triggers.pairs.push_back({t.at("x").get<Vector>(), t.at("y").get<int>()});
    }
    const auto& w = j.at("watermark");
    kit.key.secret_seed = w.at("secret_seed").get<std::uint64_t>();
    kit.key.magnitude = w.at("magnitude").get<double>();
    kit.key.carrier_rate = w.at("carrier_rate").get<double>();
    const auto& th = j.at("thresholds");
    kit.thresholds.trigger = th.at("trigger").get<double>();
    kit.thresholds.watermark = th.at("watermark").get<double>();
    kit.thresholds.permutations = th.value("permutations", kit.thresholds.permutations);
    try {
      kit.key.validate();
    } catch (const InputError& e) {
      throw FormatError(std::string("invalid ownership kit: ") + e.what());
    }
    return kit;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ownership kit: ") + e.what());
  }
}

void save_kit(const OwnershipKit& kit, const std::filesystem::path& path) {
  write_json_file(kit_to_json(kit), path);
}

OwnershipKit load_kit(const std::filesystem::path& path) {
  return kit_from_json(read_json_file(path));
}

}  // namespace radep
