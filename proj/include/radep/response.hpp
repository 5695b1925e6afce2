#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "radep/detection.hpp"
#include "radep/model.hpp"

namespace radep {

enum class LabelMode { soft, hard };

std::string_view to_string(LabelMode m);
LabelMode label_mode_from_string(std::string_view s);

/// Suspicion thresholds and per-tier noise standard deviations.
struct TierConfig {
  double tau1 = 0.3;
  double tau2 = 0.7;
  double eps_low = 0.0;
  double eps_medium = 0.05;
  double eps_high = 0.2;
  double scaling_strength = 0.5;

  /// Rejects 0 <= tau1 < tau2 <= 1 or eps_low <= eps_medium <= eps_high
  /// violations and strengths outside [0,1].
  void validate() const;
  bool operator==(const TierConfig&) const = default;
};

enum class Tier { low, medium, high };

Tier tier_of(double suspicion, const TierConfig& tiers);
double tier_epsilon(Tier tier, const TierConfig& tiers);
/// eps_low when s <= tau1, eps_medium when tau1 < s <= tau2, else eps_high.
double select_tier(double suspicion, const TierConfig& tiers);

/// Adds N(0, epsilon^2) noise to each entry, clamps at zero and renormalizes
/// (uniform if everything clamps). epsilon == 0 returns the input unchanged.
Vector perturb_response(std::span<const double> probs, double epsilon, std::uint64_t seed);

/// Swaps the largest and second-largest entries (lowest indices on ties).
Vector flip_label(std::span<const double> probs);

/// (1 - strength) * probs + strength * uniform.
Vector adaptive_label_scaling(std::span<const double> probs, double strength);

struct FlaggedEntry {
  Vector x;
  Disposition disposition = Disposition::suspicious;
  double timestamp = 0.0;
  std::string session_id;
};

/// Bounded store of flagged queries with oldest-first eviction.
class FlaggedStore {
 public:
  FlaggedStore(std::size_t capacity = 4096, double similarity_threshold = 0.99);

  void add(FlaggedEntry entry);
  void clear();

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return vectors_.size(); }
  double similarity_threshold() const { return threshold_; }
  /// Entries oldest first.
  std::vector<FlaggedEntry> entries() const;
  /// Stored vectors in slot order (not chronological).
  std::span<const Vector> slots() const { return {vectors_.data(), size_}; }

 private:
  double threshold_;
  std::vector<Vector> vectors_;
  std::vector<FlaggedEntry> meta_;  // x left empty; vectors_ holds it
  std::size_t head_ = 0;            // next slot to overwrite once full
  std::size_t size_ = 0;
};

struct SimilarityResult {
  bool matched = false;
  double best_similarity = 0.0;
};

/// Max cosine similarity against the store; zero vectors score 0.
SimilarityResult similarity_check(std::span<const double> query, const FlaggedStore& store);

struct ResponsePayload {
  LabelMode mode = LabelMode::soft;
  Vector probabilities;  // soft mode only
  int label = 0;         // hard mode only
};

struct ResponseDetail {
  Tier tier = Tier::low;
  double epsilon = 0.0;
  bool escalated = false;
  SimilarityResult similarity;
};

/// Tiered Gaussian perturbation. Malicious queries and queries resembling a
/// flagged one are escalated: high-tier noise, label scaling, top-2 flip.
ResponsePayload respond(std::span<const double> probs, std::span<const double> query,
                        double suspicion, Disposition disposition, const TierConfig& tiers,
                        const FlaggedStore& store, LabelMode mode, std::uint64_t seed,
                        ResponseDetail* detail = nullptr);

struct RecalibrationSample {
  double suspicion = 0.0;
  /// Ground-truth outcome once known: true for an extraction query.
  bool malicious = false;
};

struct RecalibrationPolicy {
  /// Desired fraction of benign queries perturbed above tau1.
  double target_benign_rate = 0.05;
  double max_step = 0.05;
  double min_gap = 0.01;
};

/// Moves tau1/tau2 together by at most max_step: up when benign traffic is
/// perturbed above target, down when extraction queries slip under tau1.
TierConfig recalibrate_thresholds(std::span<const RecalibrationSample> history,
                                  const TierConfig& current,
                                  const RecalibrationPolicy& policy = {});

/// Append-only JSON-lines log of flagged queries.
class FlaggedLog {
 public:
  explicit FlaggedLog(std::filesystem::path path);

  void append(const FlaggedEntry& entry);
  /// Rewrites the file with only the entries currently held by the store.
  void compact(const FlaggedStore& store);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Rebuilds a store by replaying the log in order.
FlaggedStore replay_flagged(const std::filesystem::path& path, std::size_t capacity,
                            double similarity_threshold);

}  // namespace radep
