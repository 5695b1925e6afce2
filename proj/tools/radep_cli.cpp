#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "radep/evaluation.hpp"
#include "radep/rng.hpp"

using namespace radep;
using nlohmann::json;

namespace {

struct Endpoint {
  std::string host;
  int port = 0;
};

Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw InputError("endpoint must be host:port");
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

BenchmarkConfig load_benchmark(const std::string& path) {
  if (path.empty()) return {};
  auto c = benchmark_config_from_json(read_json_file(path));
  c.validate();
  return c;
}

void emit(const json& report, const std::string& path) {
  if (!path.empty()) write_json_file(report, path);
}

VictimOracle::QueryFn victim_from(const std::string& model, const std::string& endpoint,
                                  const std::string& session, LabelMode mode,
                                  std::optional<Model>& holder) {
  if (!endpoint.empty()) {
    const auto ep = parse_endpoint(endpoint);
    return http_oracle(ep.host, ep.port, session, mode);
  }
  if (model.empty()) throw InputError("give --model or --endpoint");
  holder = load_model(model);
  return model_oracle(*holder, mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radep: model-extraction defense gateway and attack simulators"};
  app.require_subcommand(1);

  // config
  auto* cfg = app.add_subcommand("config", "write default configuration files");
  std::string cfg_gateway, cfg_benchmark;
  cfg->add_option("--gateway", cfg_gateway, "gateway config to write");
  cfg->add_option("--benchmark", cfg_benchmark, "benchmark config to write");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the defended gateway over HTTP");
  std::string serve_config;
  serve_cmd->add_option("--config", serve_config, "gateway config file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a victim on the synthetic benchmark");
  std::string bench_path, out_path, report_path, kit_path;
  std::uint64_t seed = 0, data_seed = 1000;
  bool adversarial = false;
  train_cmd->add_option("--config", bench_path, "benchmark config");
  train_cmd->add_option("--out", out_path, "model file to write")->required();
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--data-seed", data_seed);
  train_cmd->add_flag("--adversarial", adversarial, "progressive adversarial training");
  train_cmd->add_option("--kit", kit_path, "embed a backdoor and write the ownership kit here");
  train_cmd->add_option("--report", report_path, "JSON report");

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "fit detection weights, tau and behavior reference");
  std::string model_path;
  cal_cmd->add_option("--config", bench_path, "benchmark config");
  cal_cmd->add_option("--model", model_path, "victim model")->required();
  cal_cmd->add_option("--out", out_path, "profile file to write")->required();
  cal_cmd->add_option("--seed", seed);
  cal_cmd->add_option("--data-seed", data_seed);
  cal_cmd->add_option("--report", report_path, "JSON report");

  // attack
  auto* atk_cmd = app.add_subcommand("attack", "run an extraction attack");
  std::string kind = "jbda_tr", mode_name = "soft", endpoint, session = "attacker";
  atk_cmd->add_option("--kind", kind, "jbda_tr | knockoffnet | cloudleak");
  atk_cmd->add_option("--mode", mode_name, "soft | hard");
  atk_cmd->add_option("--model", model_path, "local victim model");
  atk_cmd->add_option("--endpoint", endpoint, "gateway host:port");
  atk_cmd->add_option("--session", session);
  atk_cmd->add_option("--config", bench_path, "benchmark config");
  atk_cmd->add_option("--seed", seed);
  atk_cmd->add_option("--data-seed", data_seed);
  atk_cmd->add_option("--out", out_path, "substitute model to write");
  atk_cmd->add_option("--report", report_path, "JSON report");

  // verify
  auto* ver_cmd = app.add_subcommand("verify", "check a suspect model for the ownership signature");
  std::string owner_path;
  bool hard_label = false;
  std::size_t probes = 2000;
  ver_cmd->add_option("--kit", kit_path, "ownership kit")->required();
  ver_cmd->add_option("--endpoint", endpoint, "suspect served over the gateway protocol");
  ver_cmd->add_option("--model", model_path, "suspect model file");
  ver_cmd->add_option("--owner", owner_path, "owner model for watermark residuals");
  ver_cmd->add_flag("--hard-label", hard_label);
  ver_cmd->add_option("--probes", probes, "watermark probes drawn from the benchmark distribution");
  ver_cmd->add_option("--config", bench_path, "benchmark config");
  ver_cmd->add_option("--data-seed", data_seed);
  ver_cmd->add_option("--seed", seed);
  ver_cmd->add_option("--report", report_path, "JSON report");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "attack x mode x defense grid");
  int seeds = 1;
  eval_cmd->add_option("--config", bench_path, "benchmark config");
  eval_cmd->add_option("--seeds", seeds)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--report", report_path, "JSON report");

  // overhead
  auto* ovh_cmd = app.add_subcommand("overhead", "per-phase gateway latency");
  std::string profile_path;
  std::size_t queries = 5000;
  ovh_cmd->add_option("--config", bench_path, "benchmark config");
  ovh_cmd->add_option("--model", model_path, "victim model")->required();
  ovh_cmd->add_option("--profile", profile_path, "detection profile")->required();
  ovh_cmd->add_option("--queries", queries);
  ovh_cmd->add_option("--data-seed", data_seed);
  ovh_cmd->add_option("--report", report_path, "JSON report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cfg->parsed()) {
      if (!cfg_gateway.empty()) {
        GatewayConfig g;
        g.model_path = "victim.bin";
        g.profile_path = "profile.json";
        write_json_file(gateway_config_to_json(g), cfg_gateway);
      }
      if (!cfg_benchmark.empty()) write_json_file(benchmark_config_to_json({}), cfg_benchmark);
      return 0;
    }

    if (serve_cmd->parsed()) return serve(load_gateway_config(serve_config));

    const auto config = load_benchmark(bench_path);

    if (train_cmd->parsed()) {
      const auto data = make_benchmark(config, data_seed);
      json report{{"seed", seed}, {"data_seed", data_seed}, {"adversarial", adversarial}};
      Model model;
      if (adversarial) {
        auto h = harden_victim(data, config, seed);
        model = std::move(h.model);
        for (const auto& r : h.rounds) {
          report["rounds"].push_back({{"round", r.round},
                                      {"clean_loss", r.clean_loss},
                                      {"adversarial_loss", r.adversarial_loss},
                                      {"attack_success_rate", r.attack_success_rate},
                                      {"pool_size", r.pool_size}});
        }
      } else {
        model = train_victim(data, config, seed);
      }
      if (!kit_path.empty()) {
        OwnershipKit kit;
        kit.triggers = generate_trigger_set(32, config.dim, config.classes, data.train,
                                            derive_seed(seed, 17));
        model = embed_backdoor(model, kit.triggers, data, {});
        kit.key = make_watermark_key(derive_seed(seed, 31), 0.05, 0.1, model, data.validation);
        save_kit(kit, kit_path);
        report["trigger_accuracy"] = trigger_accuracy(model, kit.triggers);
      }
      report["test_accuracy"] = test_accuracy(model, data.test);
      report["fgsm_flip_rate"] = fgsm_flip_rate(model, data.test, config.hardening_attack.epsilon);
      save_model(model, out_path);
      emit(report, report_path);
      std::printf("test accuracy %.4f, fgsm flip rate at eps %.2f: %.4f\n",
                  report["test_accuracy"].get<double>(), config.hardening_attack.epsilon,
                  report["fgsm_flip_rate"].get<double>());
      return 0;
    }

    if (cal_cmd->parsed()) {
      const auto data = make_benchmark(config, data_seed);
      const auto model = load_model(model_path);
      ProfileReport pr;
      const auto profile = build_profile(model, data, config, seed, &pr);
      save_profile(profile, out_path);
      const auto& c = pr.calibration;
      json report{{"profile", profile_to_json(profile)},
                  {"balanced_accuracy", c.balanced_accuracy},
                  {"false_positive_rate", c.false_positive_rate},
                  {"true_positive_rate", c.true_positive_rate},
                  {"low_confidence", c.low_confidence},
                  {"inverted", c.inverted},
                  {"benign_samples", pr.benign_samples},
                  {"adversarial_samples", pr.adversarial_samples},
                  {"reference_windows", pr.reference_windows}};
      emit(report, report_path);
      std::printf("alpha [%.1f %.1f %.1f %.1f] tau %.2f, calibration balanced accuracy %.4f%s%s\n",
                  c.weights.alpha[0], c.weights.alpha[1], c.weights.alpha[2], c.weights.alpha[3],
                  c.weights.tau, c.balanced_accuracy, c.low_confidence ? " (low confidence)" : "",
                  c.inverted ? " (inverted)" : "");
      return 0;
    }

    if (atk_cmd->parsed()) {
      const auto mode = label_mode_from_string(mode_name);
      const auto attack = attack_kind_from_string(kind);
      std::optional<Model> local;
      VictimOracle oracle(victim_from(model_path, endpoint, session, mode, local), mode, SIZE_MAX);
      const auto r = run_attack(attack, oracle, config, data_seed, seed);
      const auto data = make_benchmark(config, data_seed);
      json report{{"attack", kind}, {"mode", mode_name}, {"queries", r.queries_used},
                  {"truncated", r.truncated}, {"training_set_size", r.training_set_size},
                  {"substitute_accuracy", test_accuracy(r.substitute, data.test)}};
      if (local) {
        std::vector<Vector> xs;
        for (const auto& e : data.test) xs.push_back(e.x);
        report["fidelity"] = fidelity(*local, r.substitute, xs);
      }
      if (!out_path.empty()) save_model(r.substitute, out_path);
      emit(report, report_path);
      std::printf("%s/%s: %zu queries, substitute accuracy %.4f\n", kind.c_str(), mode_name.c_str(),
                  r.queries_used, report["substitute_accuracy"].get<double>());
      return 0;
    }

    if (ver_cmd->parsed()) {
      const auto kit = load_kit(kit_path);
      const auto mode = hard_label ? LabelMode::hard : LabelMode::soft;
      std::optional<Model> local, owner;
      const auto oracle = victim_from(model_path, endpoint,
                                      "ownership-verifier-" + std::string(to_string(mode)), mode, local);
      if (!owner_path.empty()) owner = load_model(owner_path);
      // in-distribution probes; off-distribution ones would mostly be flagged by a defended suspect
      const auto probe_set = attacker_seeds(config, data_seed, probes, derive_seed(seed, 5));
      const auto v = verify_ownership(oracle, mode, kit.triggers, kit.key, probe_set,
                                      kit.thresholds, owner ? &*owner : nullptr, seed);
      json details = json::array();
      for (const auto& d : v.details) {
        details.push_back({{"expected", d.expected}, {"observed", d.observed}, {"matched", d.matched}});
      }
      json report{{"decision", to_string(v.decision)},
                  {"trigger_match_rate", v.trigger_match_rate},
                  {"watermark_score", v.watermark_score},
                  {"watermark_available", v.watermark_available},
                  {"carrier_probes", v.carrier_probes},
                  {"coverage", v.coverage},
                  {"details", details}};
      emit(report, report_path);
      std::printf("%s: trigger match %.3f (threshold %.2f), watermark z %.2f%s (threshold %.1f), "
                  "coverage %.3f\n",
                  std::string(to_string(v.decision)).c_str(), v.trigger_match_rate,
                  kit.thresholds.trigger, v.watermark_score,
                  v.watermark_available ? "" : " unavailable", kit.thresholds.watermark, v.coverage);
      return v.decision == OwnershipDecision::verified ? 0 : 3;
    }

    if (eval_cmd->parsed()) {
      json report = json::array();
      for (int s = 0; s < seeds; ++s) {
        const auto ds = data_seed + static_cast<std::uint64_t>(s);
        const auto data = make_benchmark(config, ds);
        const auto victim = train_victim(data, config, static_cast<std::uint64_t>(s));
        const auto profile = build_profile(victim, data, config, static_cast<std::uint64_t>(s));
        const auto rows = defense_grid(data, victim, profile, config, ds, static_cast<std::uint64_t>(s));
        report.push_back({{"data_seed", ds}, {"victim_accuracy", test_accuracy(victim, data.test)},
                          {"rows", grid_to_json(rows)}});
        std::printf("seed %d (victim accuracy %.4f)\n%s\n", s, test_accuracy(victim, data.test),
                    grid_table(rows).c_str());
      }
      emit(report, report_path);
      return 0;
    }

    if (ovh_cmd->parsed()) {
      const auto data = make_benchmark(config, data_seed);
      const auto model = load_model(model_path);
      const auto profile = load_profile(profile_path);
      auto gw = make_defended_gateway(model, profile, config, 0);
      const auto t = measure_overhead(gw, data.test, queries);
      emit(timings_to_json(t), report_path);
      std::cout << timings_to_json(t).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
