#include "radep/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "radep/errors.hpp"
#include "radep/rng.hpp"

namespace radep {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

PhaseAggregate aggregate(std::vector<double> values) {
  PhaseAggregate a;
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  a.max = values.back();
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(values.size())));
  a.p95 = values[std::max<std::size_t>(rank, 1) - 1];
  return a;
}

nlohmann::json aggregate_json(const PhaseAggregate& a) {
  return {{"mean_ms", a.mean}, {"p95_ms", a.p95}, {"max_ms", a.max}};
}

constexpr std::size_t kMaxTimingSamples = 1'000'000;

}  // namespace

PhaseTimings aggregate_timings(std::span<const PhaseSample> samples) {
  PhaseTimings t;
  t.requests = samples.size();
  std::vector<double> inf, det, resp, tot;
  for (const auto& s : samples) {
    inf.push_back(s.inference);
    det.push_back(s.detection);
    resp.push_back(s.response);
    tot.push_back(s.total);
  }
  t.inference = aggregate(std::move(inf));
  t.detection = aggregate(std::move(det));
  t.response = aggregate(std::move(resp));
  t.total = aggregate(std::move(tot));
  return t;
}

nlohmann::json timings_to_json(const PhaseTimings& t) {
  return {{"requests", t.requests},
          {"inference", aggregate_json(t.inference)},
          {"detection", aggregate_json(t.detection)},
          {"response", aggregate_json(t.response)},
          {"total", aggregate_json(t.total)}};
}

Gateway::Gateway(Model model, DetectionProfile profile, std::optional<WatermarkKey> watermark,
                 GatewayOptions options)
    : model_(std::move(model)),
      watermark_(std::move(watermark)),
      options_(std::move(options)),
      store_(options_.store_capacity, options_.similarity_threshold) {
  profile.validate(model_.num_classes());
  if (watermark_) watermark_->validate();
  profile_ = std::make_shared<const DetectionProfile>(std::move(profile));
  if (options_.flagged_log) log_.emplace(*options_.flagged_log);
}

Gateway::Session& Gateway::session_for(const std::string& id, LabelMode mode) {
  {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it != sessions_.end()) return *it->second;
  }
  std::unique_lock lock(sessions_mutex_);
  auto& slot = sessions_[id];
  if (!slot) {
    slot = std::make_unique<Session>();
    slot->mode = mode;
  }
  return *slot;
}

void Gateway::close_window(Session& s, double now) const {
  const auto profile = this->profile();
  s.last_closed = behavioral_score(s.window, profile.reference);
  s.closed_count += s.window.count();
  ++s.closed_windows;
  const double length = s.window.length();
  const double elapsed = std::floor((now - s.window.start()) / length);
  s.window = BehaviorWindow(s.window.session_id(), s.window.start() + elapsed * length, length,
                            model_.input_dim(), model_.num_classes());
}

QueryResult Gateway::handle_query(const std::string& session, std::span<const double> x,
                                  double now, std::optional<LabelMode> mode) {
  if (x.size() != model_.input_dim()) {
    throw InputError("expected " + std::to_string(model_.input_dim()) + " features, got " +
                     std::to_string(x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw InputError("features must be finite");
  }
  if (session.empty()) throw InputError("session token must not be empty");

  std::shared_ptr<const DetectionProfile> profile;
  {
    std::lock_guard lock(profile_mutex_);
    profile = profile_;
  }
  Session& s = session_for(session, mode.value_or(options_.default_mode));
  std::lock_guard session_lock(s.mutex);
  if (mode && *mode != s.mode) throw InputError("session was opened in another label mode");

  const std::uint64_t seed =
      derive_seed(derive_seed(options_.seed, hash_string(session)), s.stream++);
  QueryResult result;
  const auto t0 = Clock::now();

  // inference
  const Vector probs = model_.forward(x);
  double sigma = 0.0;
  const auto& weights = profile->weights;
  if (weights.alpha[3] > 0.0 && model_.dropout_rate() > 0.0) {
    sigma = mc_dropout_predict(model_, x, profile->mc_samples, derive_seed(seed, 1)).sigma;
  }
  const auto t1 = Clock::now();

  // detection
  if (!s.started) {
    s.window = BehaviorWindow(session, now, profile->reference.interval_length,
                              model_.input_dim(), model_.num_classes());
    s.started = true;
  } else if (now < s.window.start()) {
    throw InputError("query timestamp precedes the session's current window");
  } else if (!s.window.contains(now)) {
    close_window(s, now);
  }
  const int predicted = argmax(probs);
  s.window.add(x, predicted, now);
  ++s.queries;
  const auto scores = score_probabilities(probs, sigma, weights);
  const auto behavior = behavioral_score(s.window, profile->reference);
  const Disposition disposition = classify_query(scores.u, weights, behavior);
  ++s.dispositions[static_cast<std::size_t>(disposition)];
  const auto t2 = Clock::now();

  // response
  ResponsePayload payload;
  {
    std::shared_lock lock(store_mutex_);
    payload = respond(probs, x, scores.u, disposition, profile->tiers, store_, LabelMode::soft,
                      derive_seed(seed, 2), &result.detail);
  }
  if (watermark_ && is_carrier(x, *watermark_)) {
    payload.probabilities = watermark_response(payload.probabilities, x, *watermark_);
    result.watermarked = true;
  }
  if (s.mode == LabelMode::hard) {
    payload.label = argmax(payload.probabilities);
    payload.probabilities.clear();
  }
  payload.mode = s.mode;
  if (disposition != Disposition::benign) {
    FlaggedEntry entry{Vector(x.begin(), x.end()), disposition, now, session};
    std::unique_lock lock(store_mutex_);
    if (log_) log_->append(entry);
    store_.add(std::move(entry));
  }
  const auto t3 = Clock::now();

  result.payload = std::move(payload);
  result.record = QueryRecord{Vector(x.begin(), x.end()), now, session, predicted, scores,
                              disposition};
  result.timing = {ms_between(t0, t1), ms_between(t1, t2), ms_between(t2, t3), ms_between(t0, t3)};
  {
    std::lock_guard lock(timing_mutex_);
    if (options_.timing && samples_.size() < kMaxTimingSamples) samples_.push_back(result.timing);
    if (history_.size() < options_.history_limit) {
      history_.push_back({scores.u, disposition == Disposition::malicious});
    }
  }
  return result;
}

std::size_t Gateway::rotate_windows(double now) {
  std::shared_lock lock(sessions_mutex_);
  std::size_t rotated = 0;
  for (auto& [id, s] : sessions_) {
    std::lock_guard session_lock(s->mutex);
    if (s->started && now >= s->window.end()) {
      close_window(*s, now);
      ++rotated;
    }
  }
  return rotated;
}

std::optional<SessionStats> Gateway::session_stats(const std::string& session) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(session);
  if (it == sessions_.end()) return std::nullopt;
  Session& s = *it->second;
  std::lock_guard session_lock(s.mutex);
  SessionStats stats;
  stats.mode = s.mode;
  stats.window_count = s.started ? s.window.count() : 0;
  stats.total_count = s.closed_count + stats.window_count;
  stats.closed_windows = s.closed_windows;
  stats.benign = s.dispositions[0];
  stats.suspicious = s.dispositions[1];
  stats.malicious = s.dispositions[2];
  stats.last_closed_anomalous = s.last_closed.any();
  return stats;
}

std::vector<std::string> Gateway::sessions() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

PhaseTimings Gateway::timings() const {
  std::lock_guard lock(timing_mutex_);
  return aggregate_timings(samples_);
}

void Gateway::reset_timings() {
  std::lock_guard lock(timing_mutex_);
  samples_.clear();
}

DetectionProfile Gateway::profile() const {
  std::lock_guard lock(profile_mutex_);
  return *profile_;
}

void Gateway::set_tiers(const TierConfig& tiers) {
  tiers.validate();
  std::lock_guard lock(profile_mutex_);
  auto next = std::make_shared<DetectionProfile>(*profile_);
  next->tiers = tiers;
  profile_ = std::move(next);
}

TierConfig Gateway::recalibrate(const RecalibrationPolicy& policy) {
  std::vector<RecalibrationSample> history;
  {
    std::lock_guard lock(timing_mutex_);
    history.swap(history_);
  }
  const auto current = profile().tiers;
  if (history.empty()) return current;
  const auto next = recalibrate_thresholds(history, current, policy);
  set_tiers(next);
  return next;
}

std::size_t Gateway::flagged_count() const {
  std::shared_lock lock(store_mutex_);
  return store_.size();
}

std::vector<FlaggedEntry> Gateway::flagged_entries() const {
  std::shared_lock lock(store_mutex_);
  return store_.entries();
}

void Gateway::restore_flagged(std::vector<FlaggedEntry> entries) {
  std::unique_lock lock(store_mutex_);
  for (auto& e : entries) store_.add(std::move(e));
}

void Gateway::flush() const {
  if (!options_.flagged_log) return;
  std::unique_lock lock(store_mutex_);
  FlaggedLog(*options_.flagged_log).compact(store_);
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

GatewayConfig gateway_config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir) {
  try {
    if (j.at("format").get<std::string>() != "radep-gateway-config") {
      throw FormatError("not a gateway config");
    }
    const int version = j.at("version").get<int>();
    if (version != kGatewayConfigVersion) {
      throw FormatError("unsupported gateway config version " + std::to_string(version));
    }
    GatewayConfig c;
    c.model_path = resolve(j.at("model").get<std::string>(), base_dir);
    c.profile_path = resolve(j.at("profile").get<std::string>(), base_dir);
    if (j.contains("ownership_kit") && !j["ownership_kit"].is_null()) {
      c.kit_path = resolve(j["ownership_kit"].get<std::string>(), base_dir);
    }
    if (j.contains("flagged_log") && !j["flagged_log"].is_null()) {
      c.flagged_log = resolve(j["flagged_log"].get<std::string>(), base_dir);
    }
    c.store_capacity = j.value("store_capacity", c.store_capacity);
    c.similarity_threshold = j.value("similarity_threshold", c.similarity_threshold);
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.default_mode = label_mode_from_string(j.value("default_mode", std::string("soft")));
    c.timing = j.value("timing", c.timing);
    c.seed = j.value("seed", c.seed);
    if (c.port < 0 || c.port > 65535) throw FormatError("port out of range");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed gateway config: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("malformed gateway config: ") + e.what());
  }
}

nlohmann::json gateway_config_to_json(const GatewayConfig& c) {
  nlohmann::json j{{"format", "radep-gateway-config"},
                   {"version", kGatewayConfigVersion},
                   {"model", c.model_path.string()},
                   {"profile", c.profile_path.string()},
                   {"ownership_kit", nullptr},
                   {"flagged_log", nullptr},
                   {"store_capacity", c.store_capacity},
                   {"similarity_threshold", c.similarity_threshold},
                   {"host", c.host},
                   {"port", c.port},
                   {"default_mode", std::string(to_string(c.default_mode))},
                   {"timing", c.timing},
                   {"seed", c.seed}};
  if (c.kit_path) j["ownership_kit"] = c.kit_path->string();
  if (c.flagged_log) j["flagged_log"] = c.flagged_log->string();
  return j;
}

GatewayConfig load_gateway_config(const std::filesystem::path& path) {
  return gateway_config_from_json(read_json_file(path), path.parent_path());
}

std::unique_ptr<Gateway> build_gateway(const GatewayConfig& config) {
  Model model = load_model(config.model_path);
  DetectionProfile profile = load_profile(config.profile_path);
  try {
    profile.validate(model.num_classes());
  } catch (const InputError& e) {
    throw FormatError(std::string("profile does not fit the model: ") + e.what());
  }
  std::optional<WatermarkKey> key;
  if (config.kit_path) key = load_kit(*config.kit_path).key;
  GatewayOptions options;
  options.store_capacity = config.store_capacity;
  options.similarity_threshold = config.similarity_threshold;
  options.default_mode = config.default_mode;
  options.timing = config.timing;
  options.seed = config.seed;
  options.flagged_log = config.flagged_log;
  auto gateway = std::make_unique<Gateway>(std::move(model), std::move(profile), key, options);
  if (config.flagged_log && std::filesystem::exists(*config.flagged_log)) {
    // Earlier flagged queries are honoured after a restart.
    gateway->restore_flagged(
        replay_flagged(*config.flagged_log, config.store_capacity, config.similarity_threshold)
            .entries());
  }
  return gateway;
}

}  // namespace radep
