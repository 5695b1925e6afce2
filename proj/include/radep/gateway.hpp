#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "radep/detection.hpp"
#include "radep/model.hpp"
#include "radep/ownership.hpp"
#include "radep/profile.hpp"
#include "radep/response.hpp"

namespace radep {

struct GatewayOptions {
  std::size_t store_capacity = 4096;
  double similarity_threshold = 0.99;
  LabelMode default_mode = LabelMode::soft;
  bool timing = true;
  std::uint64_t seed = 0;
  /// Flagged queries are appended here as JSONL when set.
  std::optional<std::filesystem::path> flagged_log;
  /// Recalibration samples kept for recalibrate().
  std::size_t history_limit = 10000;
};

/// Durations in milliseconds.
struct PhaseSample {
  double inference = 0.0;
  double detection = 0.0;
  double response = 0.0;
  double total = 0.0;
};

struct PhaseAggregate {
  double mean = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

struct PhaseTimings {
  std::size_t requests = 0;
  PhaseAggregate inference;
  PhaseAggregate detection;
  PhaseAggregate response;
  PhaseAggregate total;
};

PhaseTimings aggregate_timings(std::span<const PhaseSample> samples);
nlohmann::json timings_to_json(const PhaseTimings& t);

struct SessionStats {
  LabelMode mode = LabelMode::soft;
  std::size_t window_count = 0;
  /// Queries across closed windows plus the current one.
  std::size_t total_count = 0;
  std::size_t closed_windows = 0;
  std::size_t benign = 0;
  std::size_t suspicious = 0;
  std::size_t malicious = 0;
  /// Final behavioral score of the most recently closed window.
  bool last_closed_anomalous = false;
};

struct QueryResult {
  ResponsePayload payload;
  QueryRecord record;
  ResponseDetail detail;
  bool watermarked = false;
  PhaseSample timing;
};

/// The defended inference service. Sessions are processed one query at a
/// time each; different sessions run in parallel.
class Gateway {
 public:
  Gateway(Model model, DetectionProfile profile, std::optional<WatermarkKey> watermark,
          GatewayOptions options = {});

  /// Throws InputError on a dimension mismatch. `now` is in seconds on the
  /// caller's clock. The session's mode is fixed by its first query.
  QueryResult handle_query(const std::string& session, std::span<const double> x, double now,
                           std::optional<LabelMode> mode = std::nullopt);

  /// Closes every window whose interval ended before now; returns how many.
  std::size_t rotate_windows(double now);

  std::optional<SessionStats> session_stats(const std::string& session) const;
  std::vector<std::string> sessions() const;

  PhaseTimings timings() const;
  void reset_timings();

  DetectionProfile profile() const;
  void set_tiers(const TierConfig& tiers);
  /// Applies recalibrate_thresholds to the recorded history and swaps the
  /// new tiers in.
  TierConfig recalibrate(const RecalibrationPolicy& policy = {});

  std::size_t flagged_count() const;
  std::vector<FlaggedEntry> flagged_entries() const;
  /// Loads entries into the store without logging them again.
  void restore_flagged(std::vector<FlaggedEntry> entries);
  /// Rewrites the flagged log from the in-memory store.
  void flush() const;

  const Model& model() const { return model_; }

 private:
  struct Session {
    std::mutex mutex;
    LabelMode mode = LabelMode::soft;
    BehaviorWindow window;
    bool started = false;
    std::size_t closed_count = 0;
    std::size_t closed_windows = 0;
    std::size_t queries = 0;
    std::array<std::size_t, 3> dispositions{};
    std::uint64_t stream = 0;
    BehavioralScore last_closed;
  };

  Session& session_for(const std::string& id, LabelMode mode);
  void close_window(Session& s, double now) const;

  const Model model_;
  std::shared_ptr<const DetectionProfile> profile_;
  mutable std::mutex profile_mutex_;
  const std::optional<WatermarkKey> watermark_;
  const GatewayOptions options_;

  mutable std::shared_mutex sessions_mutex_;
  std::unordered_map<std::string, std::unique_ptr<Session>> sessions_;

  mutable std::shared_mutex store_mutex_;
  FlaggedStore store_;
  std::optional<FlaggedLog> log_;

  mutable std::mutex timing_mutex_;
  std::vector<PhaseSample> samples_;
  std::vector<RecalibrationSample> history_;
};

struct GatewayConfig {
  std::filesystem::path model_path;
  std::filesystem::path profile_path;
  /// Watermarking is off without a kit.
  std::optional<std::filesystem::path> kit_path;
  std::optional<std::filesystem::path> flagged_log;
  std::size_t store_capacity = 4096;
  double similarity_threshold = 0.99;
  std::string host = "127.0.0.1";
  int port = 8080;
  LabelMode default_mode = LabelMode::soft;
  bool timing = true;
  std::uint64_t seed = 0;
};

inline constexpr int kGatewayConfigVersion = 1;

/// Relative paths resolve against base_dir.
GatewayConfig gateway_config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir = {});
nlohmann::json gateway_config_to_json(const GatewayConfig& config);
GatewayConfig load_gateway_config(const std::filesystem::path& path);

/// Loads and version-checks every referenced file; throws on any failure.
std::unique_ptr<Gateway> build_gateway(const GatewayConfig& config);

// Wire protocol, JSON over HTTP:
//   POST /v1/query   {"session": s, "mode": "soft"|"hard", "features": [...]}
//                 -> {"status": "ok", "probabilities": [...]} or
//                    {"status": "ok", "label": k}
//                    errors: {"status": "error", "error": msg} with 400/500
//   GET  /v1/health  -> {"status": "ok"}
//   GET  /v1/metrics -> timing summary (loopback clients only)
class GatewayServer {
 public:
  explicit GatewayServer(Gateway& gateway);
  ~GatewayServer();

  /// Binds host:port (port 0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving until SIGINT/SIGTERM, then flushes the flagged store and
/// prints the timing summary to stdout.
int serve(const GatewayConfig& config);

/// Oracle that talks to a running gateway over HTTP.
std::function<ResponsePayload(std::span<const double>)> http_oracle(const std::string& host,
                                                                    int port,
                                                                    std::string session,
                                                                    LabelMode mode);

}  // namespace radep
