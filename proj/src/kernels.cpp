#include "radep/kernels.hpp"

#include <cmath>
#include <limits>

namespace radep::kernels {

std::vector<Vector> predict_proba_serial(const Model& model, std::span<const Vector> inputs) {
  return serial_map(inputs.size(), [&](std::size_t i) { return model.forward(inputs[i]); });
}

std::vector<Vector> predict_proba(const Model& model, std::span<const Vector> inputs) {
  return parallel_map(inputs.size(), [&](std::size_t i) { return model.forward(inputs[i]); });
}

std::vector<int> predict_labels_serial(const Model& model, std::span<const Vector> inputs) {
  return serial_map(inputs.size(), [&](std::size_t i) { return model.predict(inputs[i]); });
}

std::vector<int> predict_labels(const Model& model, std::span<const Vector> inputs) {
  return parallel_map(inputs.size(), [&](std::size_t i) { return model.predict(inputs[i]); });
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine: dimension mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

BestMatch max_cosine_serial(std::span<const double> query, std::span<const Vector> bank) {
  BestMatch best{0.0, bank.size()};
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double s = cosine(query, bank[i]);
    if (best.index == bank.size() || s > best.similarity) best = {s, i};
  }
  return best;
}

BestMatch max_cosine(std::span<const double> query, std::span<const Vector> bank) {
  BestMatch best{0.0, bank.size()};
  const auto n = static_cast<std::ptrdiff_t>(bank.size());
#pragma omp parallel
  {
    BestMatch local{0.0, bank.size()};
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double s = cosine(query, bank[static_cast<std::size_t>(i)]);
      if (local.index == bank.size() || s > local.similarity) {
        local = {s, static_cast<std::size_t>(i)};
      }
    }
#pragma omp critical(radep_max_cosine)
    {
      if (local.index != bank.size() &&
          (best.index == bank.size() || local.similarity > best.similarity ||
           (local.similarity == best.similarity && local.index < best.index))) {
        best = local;
      }
    }
  }
  return best;
}

namespace {

double nearest(std::span<const double> q, std::span<const Vector> bank) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : bank) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double diff = q[j] - row[j];
      d2 += diff * diff;
    }
    best = std::min(best, d2);
  }
  return std::sqrt(best);
}

}  // namespace

Vector nearest_distances_serial(std::span<const Vector> queries, std::span<const Vector> bank) {
  return serial_map(queries.size(), [&](std::size_t i) { return nearest(queries[i], bank); });
}

Vector nearest_distances(std::span<const Vector> queries, std::span<const Vector> bank) {
  return parallel_map(queries.size(), [&](std::size_t i) { return nearest(queries[i], bank); });
}

}  // namespace radep::kernels
