#include "radep/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace radep {

std::string_view to_string(Disposition d) {
  switch (d) {
    case Disposition::benign: return "benign";
    case Disposition::suspicious: return "suspicious";
    case Disposition::malicious: return "malicious";
  }
  return "benign";
}

Disposition disposition_from_string(std::string_view s) {
  if (s == "benign") return Disposition::benign;
  if (s == "suspicious") return Disposition::suspicious;
  if (s == "malicious") return Disposition::malicious;
  throw FormatError("unknown disposition '" + std::string(s) + "'");
}

void UncertaintyWeights::validate() const {
  double sum = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw InputError("uncertainty weights must be nonnegative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InputError("uncertainty weights must sum to 1");
  if (!std::isfinite(tau)) throw InputError("tau must be finite");
}

namespace {

void check_distribution(std::span<const double> probs) {
  if (probs.empty()) throw InputError("empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InputError("probabilities must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-4) throw InputError("probabilities do not sum to 1");
}

// The four normalized terms of the composite, each in [0, 1].
std::array<double, 4> terms(const UncertaintyBreakdown& b) {
  const double h_norm = b.classes > 1 ? b.entropy / std::log(static_cast<double>(b.classes)) : 0.0;
  return {1.0 - b.p_max, h_norm, 1.0 - b.margin, std::min(b.sigma / 0.5, 1.0)};
}

double mix(const std::array<double, 4>& t, const std::array<double, 4>& a) {
  return a[0] * t[0] + a[1] * t[1] + a[2] * t[2] + a[3] * t[3];
}

}  // namespace

double entropy(std::span<const double> probs) {
  check_distribution(probs);
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(std::max(p, kProbabilityFloor));
  }
  return h;
}

double margin(std::span<const double> probs) {
  if (probs.size() < 2) throw InputError("margin needs at least two classes");
  double first = -1.0;
  double second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

UncertaintyBreakdown uncertainty_score(double p_max, double entropy_nats, double margin_value,
                                       double sigma, std::size_t classes,
                                       const UncertaintyWeights& weights) {
  for (double a : weights.alpha) {
    if (a < 0.0) throw InputError("uncertainty weights must be nonnegative");
  }
  if (classes < 2) throw InputError("uncertainty score needs K >= 2");
  if (sigma < 0.0) throw InputError("sigma must be nonnegative");
  UncertaintyBreakdown b{p_max, entropy_nats, margin_value, sigma, 0.0, classes};
  b.u = composite(b, weights);
  return b;
}

double composite(const UncertaintyBreakdown& b, const UncertaintyWeights& weights) {
  return mix(terms(b), weights.alpha);
}

UncertaintyBreakdown score_probabilities(std::span<const double> probs, double sigma,
                                         const UncertaintyWeights& weights) {
  const double p_max = *std::max_element(probs.begin(), probs.end());
  return uncertainty_score(p_max, entropy(probs), margin(probs), sigma, probs.size(), weights);
}

UncertaintyBreakdown score_query(const Model& model, std::span<const double> x,
                                 const UncertaintyWeights& weights,
                                 std::size_t mc_samples, std::uint64_t seed) {
  const Vector probs = model.forward(x);
  double sigma = 0.0;
  if (weights.alpha[3] > 0.0 && model.dropout_rate() > 0.0) {
    sigma = mc_dropout_predict(model, x, std::max<std::size_t>(mc_samples, 2), seed).sigma;
  }
  return score_probabilities(probs, sigma, weights);
}

CalibrationResult calibrate(std::span<const UncertaintyBreakdown> benign,
                            std::span<const UncertaintyBreakdown> adversarial) {
  if (benign.empty() || adversarial.empty()) {
    throw InputError("calibration needs both benign and adversarial scores");
  }
  std::vector<std::array<double, 4>> benign_terms;
  std::vector<std::array<double, 4>> adv_terms;
  for (const auto& b : benign) benign_terms.push_back(terms(b));
  for (const auto& b : adversarial) adv_terms.push_back(terms(b));
  const double nb = static_cast<double>(benign.size());
  const double na = static_cast<double>(adversarial.size());

  struct Candidate {
    std::array<double, 4> alpha;
    double tau;
    double ba;
    double fpr;
    double tpr;
  };
  // Lexicographic enumeration order doubles as the weight tie-break.
  auto better = [](const Candidate& c, const Candidate& best) {
    if (c.ba != best.ba) return c.ba > best.ba;
    return c.fpr < best.fpr;
  };
  Candidate best{{}, 0.0, -1.0, 1.0, 0.0};
  Candidate worst{{}, 0.0, 2.0, 0.0, 1.0};

  std::vector<double> ub(benign.size());
  std::vector<double> ua(adversarial.size());
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; a + b <= 10; ++b) {
      for (int c = 0; a + b + c <= 10; ++c) {
        const int d = 10 - a - b - c;
        const std::array<double, 4> alpha{a / 10.0, b / 10.0, c / 10.0, d / 10.0};
        for (std::size_t i = 0; i < ub.size(); ++i) ub[i] = mix(benign_terms[i], alpha);
        for (std::size_t i = 0; i < ua.size(); ++i) ua[i] = mix(adv_terms[i], alpha);
        std::sort(ub.begin(), ub.end());
        std::sort(ua.begin(), ua.end());
        for (int k = 0; k <= 100; ++k) {
          const double tau = k / 100.0;
          const auto fp = ub.end() - std::upper_bound(ub.begin(), ub.end(), tau);
          const auto tp = ua.end() - std::upper_bound(ua.begin(), ua.end(), tau);
          const double fpr = static_cast<double>(fp) / nb;
          const double tpr = static_cast<double>(tp) / na;
          const Candidate cand{alpha, tau, 0.5 * (tpr + (1.0 - fpr)), fpr, tpr};
          if (better(cand, best)) best = cand;
          if (cand.ba < worst.ba) worst = cand;
        }
      }
    }
  }

  CalibrationResult result;
  const double inverted_ba = 1.0 - worst.ba;
  if (inverted_ba > best.ba) {
    result.inverted = true;
    result.weights = {worst.alpha, worst.tau};
    result.balanced_accuracy = worst.ba;
    result.false_positive_rate = worst.fpr;
    result.true_positive_rate = worst.tpr;
    return result;
  }
  if (best.ba <= 0.5) {
    result.low_confidence = true;
    result.weights = UncertaintyWeights{};
    double lo = 1.0;
    double hi = 0.0;
    for (const auto* group : {&benign_terms, &adv_terms}) {
      for (const auto& t : *group) {
        const double u = mix(t, result.weights.alpha);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
      }
    }
    result.weights.tau = 0.5 * (lo + hi);
    result.balanced_accuracy = 0.5;
    return result;
  }
  result.weights = {best.alpha, best.tau};
  result.balanced_accuracy = best.ba;
  result.false_positive_rate = best.fpr;
  result.true_positive_rate = best.tpr;
  return result;
}

BehaviorWindow::BehaviorWindow(std::string session_id, double start, double length,
                               std::size_t dim, std::size_t classes)
    : session_id_(std::move(session_id)),
      start_(start),
      length_(length),
      mean_(dim, 0.0),
      m2_(dim, 0.0),
      histogram_(classes, 0) {
  if (!(length > 0.0)) throw InputError("window length must be positive");
}

bool BehaviorWindow::contains(double timestamp) const {
  return timestamp >= start_ && timestamp < start_ + length_;
}

double BehaviorWindow::feature_variance() const {
  if (count_ == 0 || m2_.empty()) return 0.0;
  const double total = std::accumulate(m2_.begin(), m2_.end(), 0.0);
  return total / static_cast<double>(count_) / static_cast<double>(m2_.size());
}

void BehaviorWindow::add(std::span<const double> x, int predicted_class, double timestamp) {
  if (!contains(timestamp)) {
    throw ContractError("record timestamp outside window interval; rotate first");
  }
  if (x.size() != mean_.size()) throw InputError("window record has wrong dimension");
  if (predicted_class < 0 || static_cast<std::size_t>(predicted_class) >= histogram_.size()) {
    throw InputError("window record has invalid class");
  }
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double delta = x[d] - mean_[d];
    mean_[d] += delta / n;
    m2_[d] += delta * (x[d] - mean_[d]);
  }
  ++histogram_[static_cast<std::size_t>(predicted_class)];
}

BehaviorWindow window_update(BehaviorWindow window, const QueryRecord& record) {
  window.add(record.x, record.predicted, record.timestamp);
  return window;
}

void BehaviorReference::validate(std::size_t classes) const {
  if (!(interval_length > 0.0)) throw InputError("interval_length must be positive");
  if (!(expected_rate > 0.0)) throw InputError("expected_rate must be positive");
  if (reference_histogram.size() != classes) {
    throw InputError("reference histogram has wrong length");
  }
  double sum = 0.0;
  for (double p : reference_histogram) {
    if (!(p >= 0.0)) throw InputError("reference histogram must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InputError("reference histogram must sum to 1");
  if (min_variance < 0.0) throw InputError("min_variance must be nonnegative");
  if (!(rate_multiplier > 0.0)) throw InputError("rate_multiplier must be positive");
}

double smoothed_kl(const std::vector<std::size_t>& histogram, std::span<const double> reference) {
  if (histogram.size() != reference.size()) throw InputError("histogram/reference length mismatch");
  const double n = static_cast<double>(std::accumulate(histogram.begin(), histogram.end(), std::size_t{0}));
  const double k = static_cast<double>(histogram.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < histogram.size(); ++i) {
    const double p = (static_cast<double>(histogram[i]) + 1.0) / (n + k);
    const double q = (reference[i] * n + 1.0) / (n + k);
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

BehavioralScore behavioral_score(const BehaviorWindow& window, const BehaviorReference& reference) {
  if (window.count() == 0) throw InputError("behavioral score needs a non-empty window");
  BehavioralScore s;
  s.kl = smoothed_kl(window.histogram(), reference.reference_histogram);
  s.rate_anomaly = static_cast<double>(window.count()) >
                   reference.rate_multiplier * reference.expected_rate;
  if (window.count() >= reference.min_count) {
    s.variance_anomaly = window.feature_variance() < reference.min_variance;
    s.distribution_anomaly = s.kl > reference.kl_threshold;
  }
  return s;
}

Disposition classify_query(double u, const UncertaintyWeights& weights,
                           const BehavioralScore& behavioral) {
  const bool uncertain = u > weights.tau;
  const bool anomalous = behavioral.any();
  if (uncertain && anomalous) return Disposition::malicious;
  if (uncertain || anomalous) return Disposition::suspicious;
  return Disposition::benign;
}

BehaviorReference estimate_reference(std::span<const BehaviorWindow> warmup,
                                     std::size_t classes) {
  std::vector<const BehaviorWindow*> used;
  for (const auto& w : warmup) {
    if (w.count() > 0) used.push_back(&w);
  }
  if (used.empty()) throw InputError("reference estimation needs non-empty warm-up windows");
  BehaviorReference ref;
  ref.interval_length = used.front()->length();
  Vector hist(classes, 1.0);
  double total = 0.0;
  double min_var = std::numeric_limits<double>::infinity();
  for (const auto* w : used) {
    total += static_cast<double>(w->count());
    for (std::size_t k = 0; k < classes; ++k) hist[k] += static_cast<double>(w->histogram()[k]);
    if (w->count() >= ref.min_count) min_var = std::min(min_var, w->feature_variance());
  }
  ref.expected_rate = total / static_cast<double>(used.size());
  const double hist_sum = std::accumulate(hist.begin(), hist.end(), 0.0);
  for (double& h : hist) h /= hist_sum;
  ref.reference_histogram = std::move(hist);
  ref.min_variance = std::isfinite(min_var) ? 0.25 * min_var : 0.0;
  double max_kl = 0.0;
  for (const auto* w : used) {
    if (w->count() >= ref.min_count) {
      max_kl = std::max(max_kl, smoothed_kl(w->histogram(), ref.reference_histogram));
    }
  }
  // Windows are scored while still filling, so the threshold must also
  // cover sampling noise at min_count: 2 n KL is roughly chi-square with
  // K-1 degrees of freedom (0.999 quantile, Wilson-Hilferty).
  const double dof = static_cast<double>(classes - 1);
  const double h = 2.0 / (9.0 * dof);
  const double chi2 = dof * std::pow(1.0 - h + 3.0902 * std::sqrt(h), 3.0);
  const double noise_floor = chi2 / (2.0 * static_cast<double>(ref.min_count));
  ref.kl_threshold = std::max(2.0 * max_kl, noise_floor);
  return ref;
}

}  // namespace radep
