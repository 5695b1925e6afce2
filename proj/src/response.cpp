#include "radep/response.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "radep/kernels.hpp"

namespace radep {

std::string_view to_string(LabelMode m) { return m == LabelMode::soft ? "soft" : "hard"; }

LabelMode label_mode_from_string(std::string_view s) {
  if (s == "soft" || s == "soft_label") return LabelMode::soft;
  if (s == "hard" || s == "hard_label") return LabelMode::hard;
  throw InputError("unknown label mode '" + std::string(s) + "'");
}

void TierConfig::validate() const {
  if (!(0.0 <= tau1 && tau1 < tau2 && tau2 <= 1.0)) {
    throw InputError("tier thresholds need 0 <= tau1 < tau2 <= 1");
  }
  if (!(0.0 <= eps_low && eps_low <= eps_medium && eps_medium <= eps_high)) {
    throw InputError("tier magnitudes need 0 <= eps_low <= eps_medium <= eps_high");
  }
  if (!(scaling_strength >= 0.0 && scaling_strength <= 1.0)) {
    throw InputError("scaling_strength must lie in [0,1]");
  }
}

Tier tier_of(double suspicion, const TierConfig& tiers) {
  if (suspicion <= tiers.tau1) return Tier::low;
  if (suspicion <= tiers.tau2) return Tier::medium;
  return Tier::high;
}

double tier_epsilon(Tier tier, const TierConfig& tiers) {
  switch (tier) {
    case Tier::low: return tiers.eps_low;
    case Tier::medium: return tiers.eps_medium;
    case Tier::high: return tiers.eps_high;
  }
  return tiers.eps_high;
}

double select_tier(double suspicion, const TierConfig& tiers) {
  return tier_epsilon(tier_of(suspicion, tiers), tiers);
}

Vector perturb_response(std::span<const double> probs, double epsilon, std::uint64_t seed) {
  if (epsilon < 0.0) throw InputError("epsilon must be nonnegative");
  Vector out(probs.begin(), probs.end());
  if (epsilon == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, epsilon);
  double sum = 0.0;
  for (double& p : out) {
    p = std::max(0.0, p + noise(rng));
    sum += p;
  }
  if (sum <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (double& p : out) p /= sum;
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> top_two(std::span<const double> probs) {
  std::size_t first = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[first]) first = i;
  }
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (i != first && probs[i] > probs[second]) second = i;
  }
  return {first, second};
}

}  // namespace

Vector flip_label(std::span<const double> probs) {
  if (probs.size() < 2) throw InputError("flip_label needs at least two classes");
  Vector out(probs.begin(), probs.end());
  const auto [first, second] = top_two(probs);
  std::swap(out[first], out[second]);
  return out;
}

Vector adaptive_label_scaling(std::span<const double> probs, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw InputError("strength must lie in [0,1]");
  Vector out(probs.begin(), probs.end());
  if (strength == 0.0) return out;
  const double uniform = 1.0 / static_cast<double>(out.size());
  for (double& p : out) p = (1.0 - strength) * p + strength * uniform;
  return out;
}

FlaggedStore::FlaggedStore(std::size_t capacity, double similarity_threshold)
    : threshold_(similarity_threshold), vectors_(capacity), meta_(capacity) {
  if (capacity == 0) throw InputError("flagged store capacity must be positive");
  if (!(similarity_threshold >= 0.0 && similarity_threshold <= 1.0)) {
    throw InputError("similarity threshold must lie in [0,1]");
  }
}

void FlaggedStore::add(FlaggedEntry entry) {
  std::size_t slot;
  if (size_ < vectors_.size()) {
    slot = size_++;
  } else {
    slot = head_;
    head_ = (head_ + 1) % vectors_.size();
  }
  vectors_[slot] = std::move(entry.x);
  entry.x.clear();
  meta_[slot] = std::move(entry);
}

void FlaggedStore::clear() {
  for (auto& v : vectors_) v.clear();
  head_ = 0;
  size_ = 0;
}

std::vector<FlaggedEntry> FlaggedStore::entries() const {
  std::vector<FlaggedEntry> out;
  out.reserve(size_);
  const std::size_t start = size_ < vectors_.size() ? 0 : head_;
  for (std::size_t i = 0; i < size_; ++i) {
    const std::size_t slot = (start + i) % vectors_.size();
    FlaggedEntry e = meta_[slot];
    e.x = vectors_[slot];
    out.push_back(std::move(e));
  }
  return out;
}

SimilarityResult similarity_check(std::span<const double> query, const FlaggedStore& store) {
  if (store.size() == 0) return {false, 0.0};
  const auto best = kernels::max_cosine(query, store.slots());
  return {best.similarity >= store.similarity_threshold(), best.similarity};
}

ResponsePayload respond(std::span<const double> probs, std::span<const double> query,
                        double suspicion, Disposition disposition, const TierConfig& tiers,
                        const FlaggedStore& store, LabelMode mode, std::uint64_t seed,
                        ResponseDetail* detail) {
  ResponseDetail d;
  d.similarity = similarity_check(query, store);
  d.escalated = disposition == Disposition::malicious || d.similarity.matched;
  d.tier = d.escalated ? Tier::high : tier_of(suspicion, tiers);
  d.epsilon = tier_epsilon(d.tier, tiers);

  Vector out = perturb_response(probs, d.epsilon, seed);
  if (d.escalated) {
    out = adaptive_label_scaling(out, tiers.scaling_strength);
    out = flip_label(out);
  }
  if (detail != nullptr) *detail = d;

  ResponsePayload payload;
  payload.mode = mode;
  if (mode == LabelMode::soft) {
    payload.probabilities = std::move(out);
  } else {
    payload.label = argmax(out);
  }
  return payload;
}

TierConfig recalibrate_thresholds(std::span<const RecalibrationSample> history,
                                  const TierConfig& current, const RecalibrationPolicy& policy) {
  if (history.empty()) throw InputError("recalibration needs a non-empty history");
  std::size_t benign = 0;
  std::size_t benign_above = 0;
  std::size_t malicious = 0;
  std::size_t missed = 0;
  for (const auto& s : history) {
    if (s.malicious) {
      ++malicious;
      if (s.suspicion <= current.tau1) ++missed;
    } else {
      ++benign;
      if (s.suspicion > current.tau1) ++benign_above;
    }
  }
  const double fp_rate = benign ? static_cast<double>(benign_above) / static_cast<double>(benign) : 0.0;
  const double miss_rate = malicious ? static_cast<double>(missed) / static_cast<double>(malicious) : 0.0;

  double delta = 0.0;
  if (fp_rate > policy.target_benign_rate) {
    const double excess = (fp_rate - policy.target_benign_rate) /
                          std::max(policy.target_benign_rate, 1e-9);
    delta = policy.max_step * std::min(1.0, excess);
  } else if (miss_rate > 0.0) {
    delta = -policy.max_step * miss_rate;
  }
  if (delta == 0.0) return current;

  TierConfig next = current;
  next.tau1 = std::clamp(current.tau1 + delta, 0.0, 1.0 - policy.min_gap);
  next.tau2 = std::clamp(current.tau2 + delta, next.tau1 + policy.min_gap, 1.0);
  return next;
}

namespace {

nlohmann::json entry_json(const FlaggedEntry& e) {
  return {{"t", e.timestamp},
          {"session", e.session_id},
          {"x", e.x},
          {"disposition", std::string(to_string(e.disposition))}};
}

}  // namespace

FlaggedLog::FlaggedLog(std::filesystem::path path) : path_(std::move(path)) {}

void FlaggedLog::append(const FlaggedEntry& entry) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw FormatError("cannot append to " + path_.string());
  out << entry_json(entry).dump() << '\n';
}

void FlaggedLog::compact(const FlaggedStore& store) {
  const auto tmp = std::filesystem::path(path_.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    for (const auto& e : store.entries()) out << entry_json(e).dump() << '\n';
  }
  std::filesystem::rename(tmp, path_);
}

FlaggedStore replay_flagged(const std::filesystem::path& path, std::size_t capacity,
                            double similarity_threshold) {
  FlaggedStore store(capacity, similarity_threshold);
  std::ifstream in(path);
  if (!in) return store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FlaggedEntry e;
      e.timestamp = j.at("t").get<double>();
      e.session_id = j.at("session").get<std::string>();
      e.x = j.at("x").get<Vector>();
      e.disposition = disposition_from_string(j.at("disposition").get<std::string>());
      store.add(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return store;
}

}  // namespace radep
