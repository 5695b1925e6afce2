#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "radep/attacks.hpp"
#include "radep/ownership.hpp"

using namespace radep;

namespace {

struct Fixture {
  Dataset data;
  Model victim;
  TriggerSet triggers;
  Model embedded;
  Model independent;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture fx;
    const BlobSpec spec{20, 4, 0.1, 0.3, 0.7, 5};
    const auto centers = blob_centers(spec);
    fx.data.dim = 20;
    fx.data.classes = 4;
    fx.data.train = sample_blobs(centers, 0.1, 4000, 1);
    fx.data.validation = sample_blobs(centers, 0.1, 400, 2);
    fx.data.test = sample_blobs(centers, 0.1, 400, 3);
    fx.victim = train(Model::initialized({20, 64, 32, 4}, 0.0, 1), fx.data.train, {20, 0.1, 32, 2}).model;
    fx.triggers = generate_trigger_set(32, 20, 4, fx.data.train, 17);
    fx.embedded = embed_backdoor(fx.victim, fx.triggers, fx.data, {});
    fx.independent = train(Model::initialized({20, 64, 32, 4}, 0.0, 99), fx.data.train, {20, 0.1, 32, 98}).model;
    return fx;
  }();
  return f;
}

SuspectOracle raw(const Model& m, LabelMode mode) { return model_oracle(m, mode); }

}  // namespace

TEST_CASE("triggers are isolated, distinct and reproducible") {
  const auto& f = fixture();
  const auto& t = f.triggers;
  CHECK(t.pairs.size() == 32);
  CHECK(t.radius == doctest::Approx(default_isolation_radius(f.data.train)));
  for (std::size_t i = 0; i < t.pairs.size(); ++i) {
    double nearest = INFINITY;
    for (const auto& e : f.data.train) {
      double s = 0.0;
      for (std::size_t j = 0; j < 20; ++j) s += (e.x[j] - t.pairs[i].x[j]) * (e.x[j] - t.pairs[i].x[j]);
      nearest = std::min(nearest, std::sqrt(s));
    }
    CHECK(nearest >= t.radius);
    CHECK(t.pairs[i].y >= 0);
    CHECK(t.pairs[i].y < 4);
    for (std::size_t j = 0; j < i; ++j) CHECK(t.pairs[i].x != t.pairs[j].x);
  }
  const auto again = generate_trigger_set(32, 20, 4, f.data.train, 17);
  CHECK(again.pairs.size() == t.pairs.size());
  for (std::size_t i = 0; i < t.pairs.size(); ++i) CHECK(again.pairs[i].x == t.pairs[i].x);
}

TEST_CASE("trigger generation edge cases") {
  const auto one = generate_trigger_set(1, 3, 2, Split{}, 1);
  CHECK(one.pairs.size() == 1);
  const auto& f = fixture();
  try {
    generate_trigger_set(5, 20, 4, f.data.train, 1, 10.0, 500);
    FAIL("expected a generation error");
  } catch (const TriggerGenerationError& e) {
    CHECK(e.achieved() == 0);
  }
  CHECK_THROWS_AS(generate_trigger_set(0, 3, 2, Split{}, 1), InputError);
}

TEST_CASE("median nearest-neighbour distance matches a brute-force scan") {
  std::mt19937_64 rng(3);
  Split pts;
  for (int i = 0; i < 101; ++i) pts.push_back({oracle::uniform_vector(4, rng), 0});
  std::vector<double> nn;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = INFINITY;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += (pts[i].x[k] - pts[j].x[k]) * (pts[i].x[k] - pts[j].x[k]);
      best = std::min(best, std::sqrt(s));
    }
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  CHECK(median_nn_distance(pts) == doctest::Approx(nn[50]).epsilon(1e-12));
}

TEST_CASE("embedding meets its post-condition") {
  const auto& f = fixture();
  CHECK(trigger_accuracy(f.embedded, f.triggers) >= 0.95);
  const double before = test_accuracy(f.victim, f.data.validation);
  const double after = test_accuracy(f.embedded, f.data.validation);
  CHECK(before - after <= 0.02);
  BackdoorOptions zero;
  zero.epochs = 0;
  zero.min_trigger_accuracy = 0.0;
  CHECK(embed_backdoor(f.victim, f.triggers, f.data, zero) == f.victim);
}

TEST_CASE("impossible embedding targets raise with measurements") {
  const auto& f = fixture();
  BackdoorOptions opts;
  opts.epochs = 1;
  opts.mixing_ratio = 0.01;
  opts.min_trigger_accuracy = 1.01;
  try {
    embed_backdoor(f.victim, f.triggers, f.data, opts);
    FAIL("expected an embedding error");
  } catch (const EmbeddingError& e) {
    CHECK(e.trigger_accuracy() >= 0.0);
    CHECK(e.trigger_accuracy() <= 1.0);
  }
}

TEST_CASE("verification separates the embedded victim from an independent model") {
  const auto& f = fixture();
  const WatermarkKey key{7, 0.05, 0.1};
  std::vector<Vector> probes;
  for (const auto& e : f.data.test) probes.push_back(e.x);
  const VerificationThresholds th;
  for (auto mode : {LabelMode::soft, LabelMode::hard}) {
    const auto mine = verify_ownership(raw(f.embedded, mode), mode, f.triggers, key, probes, th);
    CHECK(mine.trigger_match_rate >= 0.95);
    CHECK(mine.decision == OwnershipDecision::verified);
    CHECK(mine.coverage == 1.0);
    CHECK(mine.details.size() == f.triggers.pairs.size());

    const auto other = verify_ownership(raw(f.independent, mode), mode, f.triggers, key, probes, th);
    MESSAGE("independent trigger match ", other.trigger_match_rate);
    CHECK(other.trigger_match_rate < 0.5);
    CHECK(other.decision == OwnershipDecision::not_verified);
  }
}

TEST_CASE("verification with nothing to check") {
  const auto& f = fixture();
  const auto v = verify_ownership(raw(f.victim, LabelMode::soft), LabelMode::soft, TriggerSet{},
                                  {1, 0.05, 0.1}, std::vector<Vector>{}, {});
  CHECK(v.decision == OwnershipDecision::not_verified);
  CHECK(v.trigger_match_rate == 0.0);
  CHECK(v.watermark_score == 0.0);
  CHECK_FALSE(v.watermark_available);
}

TEST_CASE("oracle failures lower coverage instead of aborting") {
  const auto& f = fixture();
  int calls = 0;
  SuspectOracle flaky = [&](std::span<const double> x) {
    if (++calls % 2 == 0) throw std::runtime_error("down");
    return model_oracle(f.embedded, LabelMode::hard)(x);
  };
  const auto v = verify_ownership(flaky, LabelMode::hard, f.triggers, {1, 0.05, 0.1},
                                  std::vector<Vector>{}, {});
  CHECK(v.coverage == doctest::Approx(0.5));
  CHECK(v.trigger_match_rate <= 0.5 + 1e-12);
}

TEST_CASE("watermark carriers and pass-through") {
  const WatermarkKey key{1234, 0.05, 0.1};
  std::mt19937_64 rng(4);
  std::size_t carriers = 0, checked = 0;
  while (carriers < 1000) {
    const auto q = oracle::uniform_vector(6, rng);
    auto p = oracle::random_distribution(4, rng);
    // keep a clear winner so the argmax check is meaningful
    p[0] += 1.0;
    for (double& v : p) v /= 2.0;
    const auto out = watermark_response(p, q, key);
    ++checked;
    if (!is_carrier(q, key)) {
      CHECK(std::memcmp(out.data(), p.data(), p.size() * sizeof(double)) == 0);
      continue;
    }
    ++carriers;
    CHECK(out != p);
    CHECK(oracle::naive_argmax(out) == oracle::naive_argmax(p));
    CHECK(oracle::is_distribution(out));
    CHECK(watermark_response(p, q, key) == out);
    const auto d = watermark_direction(q, key, 4);
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0)) < 1e-12);
    double mx = 0.0;
    for (double v : d) mx = std::max(mx, std::abs(v));
    CHECK(mx == doctest::Approx(1.0));
  }
  const double rate = static_cast<double>(carriers) / static_cast<double>(checked);
  CHECK(rate == doctest::Approx(0.1).epsilon(0.15));
  CHECK(query_hash(Vector{0.1, 0.2}, key) == query_hash(Vector{0.1, 0.2}, key));
  CHECK(query_hash(Vector{0.1, 0.2}, key) != query_hash(Vector{0.1, 0.2}, {1235, 0.05, 0.1}));
}

TEST_CASE("watermarked responses verify through the soft-label layer") {
  const auto& f = fixture();
  const auto key = make_watermark_key(55, 0.05, 0.1, f.victim, f.data.validation);
  std::vector<Vector> probes;
  for (const auto& e : f.data.test) probes.push_back(e.x);
  SuspectOracle marked = [&](std::span<const double> x) {
    ResponsePayload r;
    r.probabilities = watermark_response(f.victim.forward(x), x, key);
    return r;
  };
  const auto v = verify_ownership(marked, LabelMode::soft, TriggerSet{}, key, probes, {}, &f.victim, 1);
  CHECK(v.watermark_available);
  CHECK(v.watermark_score >= 4.0);
  CHECK(v.decision == OwnershipDecision::verified);

  const auto clean = verify_ownership(raw(f.victim, LabelMode::soft), LabelMode::soft,
                                      TriggerSet{}, key, probes, {}, &f.victim, 1);
  CHECK(clean.watermark_score < 4.0);
  CHECK(clean.decision == OwnershipDecision::not_verified);

  const auto hard = verify_ownership(raw(f.victim, LabelMode::hard), LabelMode::hard,
                                     TriggerSet{}, key, probes, {}, &f.victim, 1);
  CHECK_FALSE(hard.watermark_available);
  CHECK(hard.watermark_score == 0.0);
}

TEST_CASE("pruning") {
  const auto& f = fixture();
  CHECK(prune(f.embedded, 0.0) == f.embedded);
  const auto all = prune(f.embedded, 1.0);
  for (double v : all.forward(f.data.test[0].x)) CHECK(v == doctest::Approx(0.25));

  const auto half = prune(f.embedded, 0.5);
  std::size_t zeros = 0, total = 0, zeros_before = 0;
  for (std::size_t l = 0; l < half.layers().size(); ++l) {
    for (Vector Layer::*field : {&Layer::weights, &Layer::bias}) {
      const auto& a = half.layers()[l].*field;
      const auto& b = f.embedded.layers()[l].*field;
      for (std::size_t i = 0; i < a.size(); ++i) {
        zeros += a[i] == 0.0;
        zeros_before += b[i] == 0.0;
        ++total;
        CHECK((a[i] == 0.0 || a[i] == b[i]));
      }
    }
  }
  CHECK(zeros >= total / 2);
  CHECK(zeros <= total / 2 + zeros_before);
}

TEST_CASE("retention under pruning and fine-tuning at defaults") {
  const auto& f = fixture();
  const std::vector<Modification> ops{{Modification::Kind::prune, 0.0},
                                      {Modification::Kind::prune, 0.2},
                                      {Modification::Kind::fine_tune, 5}};
  const auto report = robustness_eval(f.embedded, f.triggers, {3, 0.05, 0.1}, ops, f.data, {});
  REQUIRE(report.size() == 4);
  CHECK(report[0].operation == "baseline");
  CHECK(report[1].trigger_match_rate == report[0].trigger_match_rate);
  CHECK(report[1].operation == "prune(0.00)");
  CHECK(report[3].operation == "fine_tune(5)");
  for (const auto& r : report) {
    MESSAGE(r.operation, " trigger ", r.trigger_match_rate, " clean ", r.clean_accuracy);
    CHECK(r.trigger_match_rate >= 0.5);
  }
}

TEST_CASE("ownership kit round trip") {
  const auto& f = fixture();
  OwnershipKit kit{f.triggers, {77, 0.04, 0.2}, {0.6, 3.5, 100}};
  const auto path = std::filesystem::temp_directory_path() / "radep_test_kit.json";
  save_kit(kit, path);
  const auto back = load_kit(path);
  CHECK(back.triggers.generation_seed == kit.triggers.generation_seed);
  CHECK(back.triggers.radius == kit.triggers.radius);
  REQUIRE(back.triggers.pairs.size() == kit.triggers.pairs.size());
  for (std::size_t i = 0; i < kit.triggers.pairs.size(); ++i) {
    CHECK(back.triggers.pairs[i].x == kit.triggers.pairs[i].x);
    CHECK(back.triggers.pairs[i].y == kit.triggers.pairs[i].y);
  }
  CHECK(back.key.secret_seed == 77);
  CHECK(back.key.magnitude == 0.04);
  CHECK(back.thresholds.permutations == 100);
  auto j = kit_to_json(kit);
  j["version"] = 2;
  CHECK_THROWS_AS(kit_from_json(j), FormatError);
  std::filesystem::remove(path);
}
