#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "radep/model.hpp"
#include "radep/rng.hpp"

using namespace radep;

TEST_CASE("zero-weight model is uniform") {
  Model m({5, 4, 3});
  const auto p = m.forward(Vector(5, 0.3));
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(loss(m, Vector(5, 0.3), 1) == doctest::Approx(std::log(3.0)));
  for (double g : grad_input(m, Vector(5, 0.3), 2)) CHECK(g == 0.0);
}

TEST_CASE("closed-form softmax on a linear model") {
  Model m({2, 2});
  m.layers()[0].bias = {0.0, std::log(3.0)};
  const auto p = m.forward(Vector{0.4, 0.9});
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("uniform output with ten classes costs ln 10") {
  Model m({3, 10});
  CHECK(loss(m, Vector(3, 0.5), 7) == doctest::Approx(2.302585).epsilon(1e-6));
}

TEST_CASE("forward matches the naive implementation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = oracle::random_model({7, 9, 5, 4}, rng);
    const auto x = oracle::uniform_vector(7, rng);
    const auto mine = m.forward(x);
    const auto ref = oracle::forward(m, x);
    for (std::size_t k = 0; k < mine.size(); ++k) CHECK(std::abs(mine[k] - ref.probs[k]) < 1e-10);
    CHECK(oracle::is_distribution(mine));
    const int y = static_cast<int>(trial % 4);
    CHECK(loss(m, x, y) ==
          doctest::Approx(oracle::xent(ref.probs, oracle::one_hot(4, y))).epsilon(1e-12));
  }
}

TEST_CASE("dimension and label validation") {
  Model m({3, 2});
  CHECK_THROWS_AS(m.forward(Vector(4, 0.0)), InputError);
  CHECK_THROWS_AS(loss(m, Vector(3, 0.0), 2), InputError);
  CHECK_THROWS_AS(loss(m, Vector(3, 0.0), -1), InputError);
}

TEST_CASE("probability floor keeps loss finite") {
  Model m({1, 2});
  m.layers()[0].bias = {0.0, 2000.0};
  CHECK(loss(m, Vector{0.0}, 0) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("input gradient sign pattern is stable across step sizes") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::random_model({6, 8, 3}, rng);
    auto x = oracle::uniform_vector(6, rng);
    while (oracle::kink_distance(m, x) < 1e-3) x = oracle::uniform_vector(6, rng);
    const int y = trial % 3;
    auto f = [&](const Vector& v) { return loss(m, v, y); };
    const auto g = grad_input(m, x, y);
    const auto a = oracle::central_difference(f, x, 1e-4);
    const auto b = oracle::central_difference(f, x, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(g[i]) < 1e-6) continue;
      CHECK(std::signbit(a[i]) == std::signbit(g[i]));
      CHECK(std::signbit(b[i]) == std::signbit(g[i]));
    }
  }
}

TEST_CASE("logit jacobian matches finite differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::random_model({5, 7, 3}, rng);
    auto x = oracle::uniform_vector(5, rng);
    while (oracle::kink_distance(m, x) < 1e-3) x = oracle::uniform_vector(5, rng);
    const auto jac = logit_jacobian(m, x);
    for (std::size_t k = 0; k < 3; ++k) {
      auto f = [&](const Vector& v) { return m.logits(v)[k]; };
      CHECK(oracle::relative_error(jac[k], oracle::central_difference(f, x, 1e-5)) < 1e-6);
    }
  }
}

TEST_CASE("training with zero epochs leaves the model untouched") {
  const auto data = make_blobs({2, 2, 0.1, 0.25, 0.75, 3}, 100);
  const auto m = Model::initialized({2, 8, 2}, 0.0, 4);
  const auto r = train(m, data, {0, 0.1, 16, 1});
  CHECK(r.model == m);
  CHECK(r.loss_trace.size() == 1);
}

TEST_CASE("training is deterministic and fits separable blobs") {
  const auto data = make_blobs({2, 2, 0.05, 0.2, 0.8, 9}, 200);
  const auto m = Model::initialized({2, 2}, 0.0, 1);
  const TrainOptions opt{50, 0.5, 16, 2};
  const auto a = train(m, data, opt);
  const auto b = train(m, data, opt);
  CHECK(a.model == b.model);
  CHECK(a.loss_trace.back() < a.loss_trace.front());
  int correct = 0;
  for (const auto& e : data) correct += a.model.predict(e.x) == e.y;
  CHECK(correct >= 196);
}

TEST_CASE("epochs split across trainer calls match one long run") {
  const auto data = make_blobs({4, 3, 0.1, 0.25, 0.75, 21}, 90);
  const auto samples = one_hot(data, 3);
  const auto m = Model::initialized({4, 6, 3}, 0.0, 2);
  SgdTrainer once(m, 0.1, 8, 77);
  SgdTrainer twice(m, 0.1, 8, 77);
  for (int e = 0; e < 4; ++e) once.run_epoch(samples);
  for (int e = 0; e < 2; ++e) twice.run_epoch(samples);
  for (int e = 0; e < 2; ++e) twice.run_epoch(samples);
  CHECK(once.model() == twice.model());
  CHECK(train(m, data, {4, 0.1, 8, 77}).model == once.model());
}

TEST_CASE("empty training split is rejected") {
  CHECK_THROWS_AS(train(Model({2, 2}), Split{}, {}), InputError);
}

TEST_CASE("mc dropout without dropout is the plain forward pass") {
  std::mt19937_64 rng(3);
  const auto m = oracle::random_model({4, 6, 3}, rng);
  const auto x = oracle::uniform_vector(4, rng);
  const auto r = mc_dropout_predict(m, x, 8, 1);
  CHECK(r.sigma == 0.0);
  CHECK(r.mean == m.forward(x));
  CHECK_THROWS_AS(mc_dropout_predict(m, x, 1, 1), InputError);
}

TEST_CASE("mc dropout with two samples matches a two-pass computation") {
  std::mt19937_64 rng(4);
  const auto m = oracle::random_model({4, 16, 16, 3}, rng, 1.0, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = oracle::uniform_vector(4, rng);
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(trial);
    const auto r = mc_dropout_predict(m, x, 2, seed);
    const auto a = forward_dropout(m, x, derive_seed(seed, 0));
    const auto b = forward_dropout(m, x, derive_seed(seed, 1));
    double sigma = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double mean = 0.5 * (a[k] + b[k]);
      CHECK(r.mean[k] == doctest::Approx(mean).epsilon(1e-12));
      sigma += std::sqrt(0.5 * ((a[k] - mean) * (a[k] - mean) + (b[k] - mean) * (b[k] - mean)));
    }
    CHECK(r.sigma == doctest::Approx(sigma / 3.0).epsilon(1e-12));
    CHECK(r.sigma <= 0.5);
    CHECK(oracle::is_distribution(r.mean));
  }
}

TEST_CASE("model file round-trips bit-exactly") {
  std::mt19937_64 rng(6);
  const auto m = oracle::random_model({5, 7, 2}, rng, 1.0, 0.25);
  std::stringstream buf;
  write_model(buf, m);
  const auto back = read_model(buf);
  CHECK(back == m);
  const auto x = oracle::uniform_vector(5, rng);
  const auto p = m.forward(x), q = back.forward(x);
  CHECK(std::memcmp(p.data(), q.data(), p.size() * sizeof(double)) == 0);
}

TEST_CASE("model reader rejects bad magic, versions and truncation") {
  Model m({2, 3});
  std::stringstream buf;
  write_model(buf, m);
  std::string bytes = buf.str();

  auto bad_version = bytes;
  bad_version[8] = 9;
  std::stringstream a(bad_version);
  CHECK_THROWS_AS(read_model(a), FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream b(bad_magic);
  CHECK_THROWS_AS(read_model(b), FormatError);

  std::stringstream c(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_model(c), FormatError);
}

TEST_CASE("csv round trip") {
  const auto data = make_moons(40, 3, 0.1, 2);
  const auto path = std::filesystem::temp_directory_path() / "radep_test_moons.csv";
  write_csv(path, data);
  const auto back = read_csv(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].y == data[i].y);
    for (std::size_t j = 0; j < 3; ++j) CHECK(back[i].x[j] == data[i].x[j]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("synthetic generators stay in the unit box") {
  for (const auto& e : make_blobs({6, 4, 0.3, 0.25, 0.75, 1}, 200)) {
    for (double v : e.x) CHECK((v >= 0.0 && v <= 1.0));
  }
  for (const auto& e : make_moons(200, 4, 0.2, 1)) {
    for (double v : e.x) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("parameter gradient matches finite differences") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = oracle::random_model({4, 5, 3}, rng);
    auto x = oracle::uniform_vector(4, rng);
    while (oracle::kink_distance(m, x) < 1e-3) x = oracle::uniform_vector(4, rng);
    const auto target = oracle::random_distribution(3, rng);
    const auto g = grad_parameters(m, x, target);
    Vector analytic, numeric;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      for (Vector Layer::*field : {&Layer::weights, &Layer::bias}) {
        auto& params = m.layers()[l].*field;
        for (std::size_t i = 0; i < params.size(); ++i) {
          const double keep = params[i];
          params[i] = keep + 1e-5;
          const double up = oracle::xent(oracle::forward(m, x).probs, target);
          params[i] = keep - 1e-5;
          const double down = oracle::xent(oracle::forward(m, x).probs, target);
          params[i] = keep;
          numeric.push_back((up - down) / 2e-5);
          analytic.push_back((g[l].*field)[i]);
        }
      }
    }
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
  }
}
