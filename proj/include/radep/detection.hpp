#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "radep/model.hpp"

namespace radep {

enum class Disposition { benign, suspicious, malicious };

std::string_view to_string(Disposition d);
Disposition disposition_from_string(std::string_view s);

/// Mixing weights for the four uncertainty terms and the flagging
/// threshold. The weights must be nonnegative and sum to one.
struct UncertaintyWeights {
  std::array<double, 4> alpha{0.25, 0.25, 0.25, 0.25};
  double tau = 0.5;

  void validate() const;
  bool operator==(const UncertaintyWeights&) const = default;
};

/// Per-query uncertainty components and their composite. entropy is in
/// nats (range [0, ln K]); u is computed from the normalized terms.
struct UncertaintyBreakdown {
  double p_max = 1.0;
  double entropy = 0.0;
  double margin = 1.0;
  double sigma = 0.0;
  double u = 0.0;
  std::size_t classes = 2;
};

/// Shannon entropy in nats with the probability floor inside the log.
double entropy(std::span<const double> probs);
/// Difference between the two largest entries.
double margin(std::span<const double> probs);

/// u = a1 (1 - p_max) + a2 H / ln K + a3 (1 - margin) + a4 min(sigma / 0.5, 1)
UncertaintyBreakdown uncertainty_score(double p_max, double entropy, double margin,
                                       double sigma, std::size_t classes,
                                       const UncertaintyWeights& weights);
double composite(const UncertaintyBreakdown& b, const UncertaintyWeights& weights);

UncertaintyBreakdown score_probabilities(std::span<const double> probs, double sigma,
                                         const UncertaintyWeights& weights);

/// Deterministic forward pass for the confidence terms; sigma comes from MC
/// dropout and is only sampled when alpha4 > 0.
UncertaintyBreakdown score_query(const Model& model, std::span<const double> x,
                                 const UncertaintyWeights& weights,
                                 std::size_t mc_samples, std::uint64_t seed);

struct CalibrationResult {
  UncertaintyWeights weights;
  double balanced_accuracy = 0.5;
  double false_positive_rate = 0.0;
  double true_positive_rate = 0.0;
  /// Populations could not be separated; uniform weights and a midpoint tau.
  bool low_confidence = false;
  /// Separation only works with reversed labels; the inputs look swapped.
  bool inverted = false;
};

/// Grid search over the weight simplex (step 0.1) and tau (step 0.01)
/// maximizing balanced accuracy of the rule "u > tau flags adversarial".
/// Ties prefer lower false-positive rate, then lexicographically smaller
/// weights, then smaller tau.
CalibrationResult calibrate(std::span<const UncertaintyBreakdown> benign,
                            std::span<const UncertaintyBreakdown> adversarial);

struct QueryRecord {
  Vector x;
  double timestamp = 0.0;
  std::string session_id;
  int predicted = 0;
  UncertaintyBreakdown scores;
  Disposition disposition = Disposition::benign;
};

/// Fixed-interval per-session statistics: query count, Welford running
/// per-dimension variance and predicted-class histogram.
class BehaviorWindow {
 public:
  BehaviorWindow() = default;
  BehaviorWindow(std::string session_id, double start, double length,
                 std::size_t dim, std::size_t classes);

  const std::string& session_id() const { return session_id_; }
  double start() const { return start_; }
  double length() const { return length_; }
  double end() const { return start_ + length_; }
  bool contains(double timestamp) const;

  std::size_t count() const { return count_; }
  /// Mean over dimensions of the population variance of the features seen.
  double feature_variance() const;
  const std::vector<std::size_t>& histogram() const { return histogram_; }

  /// Throws ContractError when timestamp falls outside the interval.
  void add(std::span<const double> x, int predicted_class, double timestamp);

 private:
  std::string session_id_;
  double start_ = 0.0;
  double length_ = 1.0;
  std::size_t count_ = 0;
  Vector mean_;
  Vector m2_;
  std::vector<std::size_t> histogram_;
};

BehaviorWindow window_update(BehaviorWindow window, const QueryRecord& record);

/// Benign baseline for window scoring.
struct BehaviorReference {
  double interval_length = 60.0;
  double expected_rate = 60.0;  // queries per interval
  Vector reference_histogram;
  double min_variance = 0.0;
  double rate_multiplier = 3.0;
  /// Histogram divergence above this flags a distribution anomaly.
  double kl_threshold = 1.0;
  /// Variance and distribution checks need at least this many queries.
  std::size_t min_count = 20;

  void validate(std::size_t classes) const;
};

struct BehavioralScore {
  double kl = 0.0;
  bool rate_anomaly = false;
  bool variance_anomaly = false;
  bool distribution_anomaly = false;

  bool any() const { return rate_anomaly || variance_anomaly || distribution_anomaly; }
};

/// KL(window || reference) with add-one smoothing applied to both sides
/// at the window's sample size.
double smoothed_kl(const std::vector<std::size_t>& histogram, std::span<const double> reference);

BehavioralScore behavioral_score(const BehaviorWindow& window, const BehaviorReference& reference);

/// Benign when neither signal fires, suspicious when exactly one does,
/// malicious when both do.
Disposition classify_query(double u, const UncertaintyWeights& weights,
                           const BehavioralScore& behavioral);

/// Baseline from closed windows of trusted warm-up traffic. expected_rate
/// is the mean count, min_variance a quarter of the smallest observed
/// variance, kl_threshold twice the largest observed divergence but never
/// below the chi-square 0.999 sampling bound at min_count queries.
BehaviorReference estimate_reference(std::span<const BehaviorWindow> warmup,
                                     std::size_t classes);

}  // namespace radep
