#pragma once

// Data-parallel batch kernels. Every OpenMP kernel has a *_serial twin that
// is the reference the tests compare against; per-row work is independent,
// so both produce bit-identical results.

#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <type_traits>
#include <vector>

#include <omp.h>

#include "radep/model.hpp"

namespace radep::kernels {

/// Evaluates f(i) for i in [0, n) across OpenMP threads. The first
/// exception thrown by any iteration is rethrown after the loop.
template <typename F>
auto parallel_map(std::size_t n, F&& f) -> std::vector<std::invoke_result_t<F&, std::size_t>> {
  using R = std::invoke_result_t<F&, std::size_t>;
  std::vector<R> out(n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = f(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

template <typename F>
auto serial_map(std::size_t n, F&& f) -> std::vector<std::invoke_result_t<F&, std::size_t>> {
  std::vector<std::invoke_result_t<F&, std::size_t>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(f(i));
  return out;
}

std::vector<Vector> predict_proba_serial(const Model& model, std::span<const Vector> inputs);
std::vector<Vector> predict_proba(const Model& model, std::span<const Vector> inputs);

std::vector<int> predict_labels_serial(const Model& model, std::span<const Vector> inputs);
std::vector<int> predict_labels(const Model& model, std::span<const Vector> inputs);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

struct BestMatch {
  double similarity = 0.0;
  /// Index into the bank, or bank.size() when the bank is empty.
  std::size_t index = 0;
};

/// Highest cosine similarity between query and any bank row; ties resolve
/// to the lowest index.
BestMatch max_cosine_serial(std::span<const double> query, std::span<const Vector> bank);
BestMatch max_cosine(std::span<const double> query, std::span<const Vector> bank);

/// For each query, the Euclidean distance to its nearest bank row
/// (+infinity for an empty bank).
Vector nearest_distances_serial(std::span<const Vector> queries, std::span<const Vector> bank);
Vector nearest_distances(std::span<const Vector> queries, std::span<const Vector> bank);

}  // namespace radep::kernels
