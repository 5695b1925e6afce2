// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "radep/evaluation.hpp"
#include "radep/rng.hpp"

using namespace radep;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double total_variation(const Vector& a, const Vector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return 0.5 * d;
}

std::vector<Vector> inputs_of(const Split& s) {
  std::vector<Vector> out;
  for (const auto& e : s) out.push_back(e.x);
  return out;
}

Outcome gradients() {
  std::mt19937_64 rng(2024);
  double worst_input = 0.0, worst_param = 0.0;
  int cases = 0;
  while (cases < 100) {
    auto m = oracle::random_model({8, 12, 10, 4}, rng, 0.8);
    const auto x = oracle::uniform_vector(8, rng);
    if (oracle::kink_distance(m, x) < 1e-3) continue;
    const int y = static_cast<int>(rng() % 4);
    const auto target = oracle::one_hot(4, y);

    const auto analytic = grad_input(m, x, y);
    const auto numeric = oracle::central_difference(
        [&](const Vector& z) { return oracle::xent(oracle::forward(m, z).probs, target); }, x, 1e-5);
    worst_input = std::max(worst_input, oracle::relative_error(analytic, numeric));

    const auto g = grad_parameters(m, x, target);
    Vector a, n;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      for (Vector Layer::*field : {&Layer::weights, &Layer::bias}) {
        auto& params = m.layers()[l].*field;
        const auto& grads = g[l].*field;
        for (std::size_t i = 0; i < params.size(); ++i) {
          const double keep = params[i];
          params[i] = keep + 1e-5;
          const double up = oracle::xent(oracle::forward(m, x).probs, target);
          params[i] = keep - 1e-5;
          const double down = oracle::xent(oracle::forward(m, x).probs, target);
          params[i] = keep;
          a.push_back(grads[i]);
          n.push_back((up - down) / 2e-5);
        }
      }
    }
    worst_param = std::max(worst_param, oracle::relative_error(a, n));
    ++cases;
  }
  return {worst_input < 1e-4 && worst_param < 1e-4,
          fmt("100 cases, worst relative error input %.2e parameters %.2e (limit 1e-4)",
              worst_input, worst_param)};
}

Outcome attacks_correct() {
  std::mt19937_64 rng(77);
  bool ok = true;
  // FGSM budget exactness and PGD(1) identity on a random nonlinear model.
  std::size_t budget_violations = 0, pgd_mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    const auto m = oracle::random_model({6, 10, 3}, rng);
    const auto x = oracle::uniform_vector(6, rng, 0.2, 0.8);
    const int y = static_cast<int>(rng() % 3);
    const double eps = 0.01 + 0.19 * static_cast<double>(rng() % 1000) / 1000.0;
    const auto adv = fgsm(m, x, y, eps);
    const auto g = grad_input(m, x, y);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double expected = g[j] == 0.0 ? 0.0 : eps;
      if (std::abs(std::abs(adv[j] - x[j]) - expected) > 1e-12) ++budget_violations;
    }
    if (!bit_equal(pgd(m, x, y, {eps, eps, 1, 0.0, Norm::linf}), adv)) ++pgd_mismatches;
  }
  ok = ok && budget_violations == 0 && pgd_mismatches == 0;

  // DeepFool on binary linear models against the closed-form hyperplane step.
  double worst = 0.0;
  int checked = 0;
  while (checked < 100) {
    const auto m = oracle::random_model({5, 2}, rng);
    const auto x = oracle::uniform_vector(5, rng, 0.4, 0.6);
    const auto& L = m.layers()[0];
    const auto k0 = static_cast<std::size_t>(m.predict(x));
    const std::size_t k1 = 1 - k0;
    double f = L.bias[k1] - L.bias[k0], wn2 = 0.0;
    Vector w(5);
    for (std::size_t i = 0; i < 5; ++i) {
      w[i] = L.w(k1, i) - L.w(k0, i);
      f += w[i] * x[i];
      wn2 += w[i] * w[i];
    }
    Vector expected(5);
    bool inside = true;
    for (std::size_t i = 0; i < 5; ++i) {
      expected[i] = x[i] + std::abs(f) / wn2 * w[i];
      inside = inside && expected[i] >= 0.0 && expected[i] <= 1.0;
    }
    if (!inside) continue;
    ++checked;
    const auto r = deepfool(m, x, 50, 0.0);
    for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(r.x_adv[i] - expected[i]));
  }
  ok = ok && worst <= 1e-6;
  return {ok, fmt("fgsm budget violations %zu/3000, pgd(1)!=fgsm %zu/500, deepfool max "
                  "deviation %.2e over 100 linear cases (limit 1e-6)",
                  budget_violations, pgd_mismatches, worst)};
}

Outcome adversarial_training_direction(const BenchmarkConfig& c, int seeds) {
  std::map<LabelMode, double> margin;
  std::ostringstream per;
  for (int s = 0; s < seeds; ++s) {
    const auto data_seed = 1000 + static_cast<std::uint64_t>(s);
    const auto data = make_benchmark(c, data_seed);
    const auto standard = train_victim(data, c, static_cast<std::uint64_t>(s));
    const auto hardened = harden_victim(data, c, static_cast<std::uint64_t>(s)).model;
    for (const auto mode : {LabelMode::soft, LabelMode::hard}) {
      VictimOracle o1(model_oracle(standard, mode), mode, SIZE_MAX);
      VictimOracle o2(model_oracle(hardened, mode), mode, SIZE_MAX);
      const auto attack_seed = 77 + static_cast<std::uint64_t>(s);
      const double a = test_accuracy(run_attack(AttackKind::jbda_tr, o1, c, data_seed, attack_seed).substitute, data.test);
      const double b = test_accuracy(run_attack(AttackKind::jbda_tr, o2, c, data_seed, attack_seed).substitute, data.test);
      margin[mode] += (a - b) / seeds;
      per << fmt(" s%d/%s %.3f->%.3f", s, std::string(to_string(mode)).c_str(), a, b);
    }
  }
  const bool ok = margin[LabelMode::soft] >= 0.03 && margin[LabelMode::hard] >= 0.03;
  return {ok, fmt("mean margin soft %.2f pts hard %.2f pts (need >= 3);", 100 * margin[LabelMode::soft],
                  100 * margin[LabelMode::hard]) + per.str()};
}

Outcome detection_direction(const BenchmarkConfig& c, int seeds) {
  double ba = 0.0, f1 = 0.0, uba = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto data_seed = 1000 + static_cast<std::uint64_t>(s);
    const auto data = make_benchmark(c, data_seed);
    const auto victim = train_victim(data, c, static_cast<std::uint64_t>(s));
    const auto profile = build_profile(victim, data, c, static_cast<std::uint64_t>(s));
    VictimOracle o(model_oracle(victim, LabelMode::soft), LabelMode::soft, SIZE_MAX);
    const auto stream = run_attack(AttackKind::jbda_tr, o, c, data_seed, 900 + static_cast<std::uint64_t>(s));
    const auto q = detection_quality(victim, profile, data.test, stream.queries, c, static_cast<std::uint64_t>(s));
    ba += q.balanced_accuracy / seeds;
    f1 += q.f1 / seeds;
    uba += q.uncertainty_balanced_accuracy / seeds;
  }
  return {ba >= 0.90 && f1 >= 0.90,
          fmt("mean balanced accuracy %.4f F1 %.4f over %d seeds (need >= 0.90 each); "
              "uncertainty-only BA %.4f", ba, f1, seeds, uba)};
}

Outcome defense_direction(const BenchmarkConfig& c, int seeds) {
  std::map<std::pair<std::string, std::string>, double> none, radep;
  for (int s = 0; s < seeds; ++s) {
    const auto data_seed = 1000 + static_cast<std::uint64_t>(s);
    const auto data = make_benchmark(c, data_seed);
    const auto victim = train_victim(data, c, static_cast<std::uint64_t>(s));
    const auto profile = build_profile(victim, data, c, static_cast<std::uint64_t>(s));
    for (const auto& r : defense_grid(data, victim, profile, c, data_seed, static_cast<std::uint64_t>(s))) {
      auto& bucket = r.defense == "none" ? none : radep;
      bucket[{r.attack, r.mode}] += r.substitute_accuracy / seeds;
    }
  }
  bool ok = true;
  std::ostringstream out;
  for (const auto& [key, undefended] : none) {
    const double need = key.first == "knockoffnet" ? 0.05 : 0.10;
    const double margin = undefended - radep[key];
    const bool pass = margin >= need;
    ok = ok && pass;
    out << fmt("%s%s/%s %.3f->%.3f (%+.1f pts, need %.0f)%s", out.tellp() > 0 ? "; " : "",
               key.first.c_str(), key.second.c_str(), undefended, radep[key], 100 * margin,
               100 * need, pass ? "" : " short");
  }
  return {ok, out.str()};
}

Outcome response_validity() {
  const TierConfig tiers;
  const FlaggedStore store;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t invalid = 0, transparency_breaks = 0, transparent_checked = 0;
  std::array<double, 3> tv{};
  std::array<std::size_t, 3> tv_n{};
  for (int i = 0; i < 10000; ++i) {
    const auto probs = oracle::random_distribution(4, rng);
    const auto query = oracle::uniform_vector(6, rng);
    const double s = unit(rng);
    const auto disp = static_cast<Disposition>(rng() % 3);
    ResponseDetail d;
    const auto r = respond(probs, query, s, disp, tiers, store, LabelMode::soft, rng(), &d);
    if (!oracle::is_distribution(r.probabilities, 1e-9)) ++invalid;
    if (!d.escalated) {
      const auto t = static_cast<std::size_t>(d.tier);
      tv[t] += total_variation(r.probabilities, probs);
      ++tv_n[t];
    }
    if (disp == Disposition::benign && d.tier == Tier::low && !d.escalated) {
      ++transparent_checked;
      if (!bit_equal(r.probabilities, probs)) ++transparency_breaks;
    }
  }
  for (std::size_t t = 0; t < 3; ++t) tv[t] /= static_cast<double>(std::max<std::size_t>(tv_n[t], 1));
  const bool monotone = tv[0] <= tv[1] && tv[1] <= tv[2];
  return {invalid == 0 && transparency_breaks == 0 && transparent_checked > 0 && monotone,
          fmt("invalid %zu/10000, transparency breaks %zu/%zu, mean TV low %.4f medium %.4f "
              "high %.4f", invalid, transparency_breaks, transparent_checked, tv[0], tv[1], tv[2])};
}

Outcome ownership(const BenchmarkConfig& c) {
  const auto data = make_benchmark(c, 1000);
  const auto victim = train_victim(data, c, 0);
  const auto triggers = generate_trigger_set(32, c.dim, c.classes, data.train, 17);
  const auto embedded = embed_backdoor(victim, triggers, data, {});
  const auto independent = train_victim(data, c, 99);
  const auto key = make_watermark_key(55, 0.05, 0.1, embedded, data.validation);
  const auto probes = inputs_of(data.test);
  const VerificationThresholds th;
  bool ok = true;
  std::ostringstream out;
  for (const auto mode : {LabelMode::soft, LabelMode::hard}) {
    const auto mine = verify_ownership(model_oracle(embedded, mode), mode, triggers, key, probes, th);
    const auto other = verify_ownership(model_oracle(independent, mode), mode, triggers, key, probes, th);
    ok = ok && mine.trigger_match_rate >= 0.95 && mine.decision == OwnershipDecision::verified &&
         other.decision == OwnershipDecision::not_verified;
    out << fmt("%s: embedded match %.3f %s, independent match %.3f %s (1/K=%.2f); ",
               std::string(to_string(mode)).c_str(), mine.trigger_match_rate,
               std::string(to_string(mine.decision)).c_str(), other.trigger_match_rate,
               std::string(to_string(other.decision)).c_str(), 1.0 / static_cast<double>(c.classes));
  }

  std::size_t carriers = 0, nondeterministic = 0, passthrough_breaks = 0;
  for (const auto& x : probes) {
    const auto p = embedded.forward(x);
    const auto w = watermark_response(p, x, key);
    if (is_carrier(x, key)) {
      ++carriers;
      if (!bit_equal(w, watermark_response(p, x, key)) || is_carrier(x, key) != is_carrier(Vector(x), key)) {
        ++nondeterministic;
      }
    } else if (!bit_equal(w, p)) {
      ++passthrough_breaks;
    }
  }
  ok = ok && carriers > 0 && nondeterministic == 0 && passthrough_breaks == 0;
  out << fmt("carriers %zu/%zu, nondeterministic %zu, pass-through breaks %zu; ", carriers,
             probes.size(), nondeterministic, passthrough_breaks);

  const std::vector<Modification> ops{{Modification::Kind::prune, 0.2},
                                      {Modification::Kind::fine_tune, 5}};
  for (const auto& e : robustness_eval(embedded, triggers, key, ops, data, th)) {
    if (e.operation != "baseline") ok = ok && e.trigger_match_rate >= 0.5;
    out << fmt("%s match %.3f clean %.3f; ", e.operation.c_str(), e.trigger_match_rate, e.clean_accuracy);
  }
  return {ok, out.str()};
}

struct DefendedSetup {
  Dataset data;
  Model victim;
  DetectionProfile profile;
};

DefendedSetup defended_setup(const BenchmarkConfig& c) {
  DefendedSetup s;
  s.data = make_benchmark(c, 1000);
  s.victim = train_victim(s.data, c, 0);
  s.profile = build_profile(s.victim, s.data, c, 0);
  return s;
}

Outcome overhead(const BenchmarkConfig& c) {
  const auto s = defended_setup(c);
  auto gw = make_defended_gateway(s.victim, s.profile, c, 0);
  const auto t = measure_overhead(gw, s.data.test, 5000);
  return {t.detection.mean < 1.0 && t.response.mean < 10.0,
          fmt("%zu queries: detection mean %.4f ms (p95 %.4f), response mean %.4f ms (p95 %.4f), "
              "inference mean %.4f ms, mc_samples %zu",
              t.requests, t.detection.mean, t.detection.p95, t.response.mean, t.response.p95,
              t.inference.mean, s.profile.mc_samples)};
}

Outcome concurrency(const BenchmarkConfig& c) {
  const auto s = defended_setup(c);
  constexpr int kSessions = 8;
  constexpr int kQueries = 1000;
  // Half the sessions replay a narrow pool quickly so every disposition occurs.
  const auto pool = inputs_of(s.data.test);
  auto input = [&](int k, int i) -> const Vector& {
    const std::size_t span = k % 2 == 0 ? pool.size() : 5;
    return pool[(static_cast<std::size_t>(k) * 101 + static_cast<std::size_t>(i) * 7) % span];
  };
  auto when = [&](int k, int i) { return (k % 2 == 0 ? 1.0 / c.benign_rate : 1.0 / c.attacker_rate) * i; };
  auto name = [](int k) { return "session-" + std::to_string(k); };

  auto shared = make_defended_gateway(s.victim, s.profile, c, 0);
  std::vector<std::vector<Disposition>> seen(kSessions);
  std::vector<std::thread> threads;
  for (int k = 0; k < kSessions; ++k) {
    threads.emplace_back([&, k] {
      for (int i = 0; i < kQueries; ++i) {
        seen[static_cast<std::size_t>(k)].push_back(shared.handle_query(name(k), input(k, i), when(k, i)).record.disposition);
      }
    });
  }
  for (auto& t : threads) t.join();

  std::size_t count_errors = 0, interference = 0;
  std::array<std::size_t, 3> mix{};
  for (int k = 0; k < kSessions; ++k) {
    const auto stats = *shared.session_stats(name(k));
    if (stats.total_count != kQueries) ++count_errors;
    if (stats.benign + stats.suspicious + stats.malicious != kQueries) ++count_errors;
    auto alone = make_defended_gateway(s.victim, s.profile, c, 0);
    for (int i = 0; i < kQueries; ++i) {
      const auto r = alone.handle_query(name(k), input(k, i), when(k, i));
      if (r.record.disposition != seen[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]) ++interference;
      ++mix[static_cast<std::size_t>(r.record.disposition)];
    }
    const auto solo = *alone.session_stats(name(k));
    if (solo.window_count != stats.window_count || solo.closed_windows != stats.closed_windows) ++count_errors;
  }
  return {count_errors == 0 && interference == 0,
          fmt("%d sessions x %d queries: count mismatches %zu, dispositions differing from solo "
              "replay %zu; mix benign %zu suspicious %zu malicious %zu",
              kSessions, kQueries, count_errors, interference, mix[0], mix[1], mix[2])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  int seeds = 5;
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 9));
  app.add_option("--seeds", seeds, "seeds for criteria 3-5")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const BenchmarkConfig c;
  struct Criterion {
    int id;
    const char* name;
    double limit;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "gradient oracle", 10, gradients},
      {2, "attack correctness", 30, attacks_correct},
      {3, "adversarial training direction", 600, [&] { return adversarial_training_direction(c, seeds); }},
      {4, "detection quality", 300, [&] { return detection_direction(c, seeds); }},
      {5, "end-to-end defense", 1800, [&] { return defense_direction(c, seeds); }},
      {6, "response validity", 60, response_validity},
      {7, "ownership", 300, [&] { return ownership(c); }},
      {8, "overhead", 60, [&] { return overhead(c); }},
      {9, "concurrency recount", 60, [&] { return concurrency(c); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& cr : all) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = o.ok && secs < cr.limit;
    failures += !ok;
    std::printf("criterion %d %s: %s | %s | runtime %.1f s (limit %.0f s)\n", cr.id, cr.name,
                ok ? "PASS" : "FAIL", o.detail.c_str(), secs, cr.limit);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
