#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "radep/model.hpp"

namespace oracle {

using radep::Vector;

struct NaiveTrace {
  std::vector<Vector> pre;  // pre-activations per layer
  Vector probs;
};

// Plain triple loop: z = W a + b, ReLU between layers, softmax at the end.
inline NaiveTrace forward(const radep::Model& m, const Vector& x) {
  NaiveTrace t;
  Vector a = x;
  const auto& layers = m.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    Vector z(L.out);
    for (std::size_t o = 0; o < L.out; ++o) {
      double s = L.bias[o];
      for (std::size_t i = 0; i < L.in; ++i) s += L.weights[o * L.in + i] * a[i];
      z[o] = s;
    }
    t.pre.push_back(z);
    if (l + 1 < layers.size()) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    }
    a = z;
  }
  const double mx = *std::max_element(a.begin(), a.end());
  double total = 0.0;
  t.probs.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    t.probs[k] = std::exp(a[k] - mx);
    total += t.probs[k];
  }
  for (double& p : t.probs) p /= total;
  return t;
}

inline double xent(const Vector& probs, const Vector& target) {
  double l = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (target[k] != 0.0) l -= target[k] * std::log(std::max(probs[k], 1e-12));
  }
  return l;
}

inline Vector one_hot(std::size_t k, int y) {
  Vector t(k, 0.0);
  t[static_cast<std::size_t>(y)] = 1.0;
  return t;
}

// Smallest |pre-activation| over hidden units; finite differences are only
// trustworthy away from ReLU kinks.
inline double kink_distance(const radep::Model& m, const Vector& x) {
  const auto t = forward(m, x);
  double d = INFINITY;
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
    for (double z : t.pre[l]) d = std::min(d, std::abs(z));
  }
  return d;
}

template <typename F>
Vector central_difference(F&& f, Vector x, double h) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
  return std::sqrt(diff) / scale;
}

// Mean over dimensions of the population variance, two passes.
inline double two_pass_variance(const std::vector<Vector>& xs) {
  const std::size_t d = xs.front().size();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (const auto& x : xs) mean += x[j];
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (const auto& x : xs) ss += (x[j] - mean) * (x[j] - mean);
    total += ss / static_cast<double>(xs.size());
  }
  return total / static_cast<double>(d);
}

inline double naive_cosine(const Vector& a, const Vector& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double naive_best_cosine(const Vector& q, const std::vector<Vector>& bank) {
  double best = 0.0;
  for (const auto& b : bank) best = std::max(best, naive_cosine(q, b));
  return best;
}

inline Vector uniform_vector(std::size_t d, std::mt19937_64& rng, double lo = 0.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(d);
  for (double& x : v) x = u(rng);
  return v;
}

inline Vector random_distribution(std::size_t k, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector p(k);
  double total = 0.0;
  for (double& v : p) total += (v = e(rng));
  for (double& v : p) v /= total;
  return p;
}

inline bool is_distribution(const Vector& p, double tol = 1e-6) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

inline int naive_argmax(const Vector& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

// Random model with parameters drawn uniformly in [-scale, scale].
inline radep::Model random_model(std::vector<std::size_t> dims, std::mt19937_64& rng,
                                 double scale = 1.0, double dropout = 0.0) {
  radep::Model m(std::move(dims), dropout);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& L : m.layers()) {
    for (double& w : L.weights) w = u(rng);
    for (double& b : L.bias) b = u(rng);
  }
  return m;
}

}  // namespace oracle
