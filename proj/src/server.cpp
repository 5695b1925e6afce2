#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "radep/errors.hpp"
#include "radep/gateway.hpp"

namespace radep {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"status", "error"}, {"error", message}});
}

bool is_loopback(const std::string& addr) {
  return addr == "127.0.0.1" || addr == "::1" || addr == "::ffff:127.0.0.1";
}

}  // namespace

struct GatewayServer::Impl {
  Gateway& gateway;
  httplib::Server server;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  explicit Impl(Gateway& g) : gateway(g) {
    server.set_tcp_nodelay(true);
    server.Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
      handle_query(req, res);
    });
    server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });
    server.Get("/v1/metrics", [this](const httplib::Request& req, httplib::Response& res) {
      if (!is_loopback(req.remote_addr)) {
        send_error(res, 403, "metrics are only served to loopback clients");
        return;
      }
      auto body = timings_to_json(gateway.timings());
      body["flagged"] = gateway.flagged_count();
      body["sessions"] = gateway.sessions().size();
      send_json(res, 200, body);
    });
  }

  double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }

  void handle_query(const httplib::Request& req, httplib::Response& res) {
    std::string session;
    std::optional<LabelMode> mode;
    Vector features;
    try {
      const auto body = nlohmann::json::parse(req.body);
      session = body.at("session").get<std::string>();
      if (body.contains("mode")) mode = label_mode_from_string(body["mode"].get<std::string>());
      features = body.at("features").get<Vector>();
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
      return;
    } catch (const InputError& e) {
      send_error(res, 400, e.what());
      return;
    }
    try {
      const auto result = gateway.handle_query(session, features, now(), mode);
      nlohmann::json out{{"status", "ok"}};
      if (result.payload.mode == LabelMode::soft) {
        out["probabilities"] = result.payload.probabilities;
      } else {
        out["label"] = result.payload.label;
      }
      send_json(res, 200, out);
    } catch (const InputError& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception&) {
      send_error(res, 500, "internal error");
    }
  }
};

GatewayServer::GatewayServer(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {}
GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void GatewayServer::listen() { impl_->server.listen_after_bind(); }
void GatewayServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}
bool GatewayServer::running() const { return impl_->server.is_running(); }

namespace {

std::atomic<bool> g_stop_requested{false};

extern "C" void on_signal(int) { g_stop_requested = true; }

}  // namespace

int serve(const GatewayConfig& config) {
  std::unique_ptr<Gateway> gateway;
  try {
    gateway = build_gateway(config);
  } catch (const std::exception& e) {
    std::cerr << "startup failed: " << e.what() << '\n';
    return 2;
  }
  GatewayServer server(*gateway);
  int port = 0;
  try {
    port = server.bind(config.host, config.port);
  } catch (const std::exception& e) {
    std::cerr << "startup failed: " << e.what() << '\n';
    return 2;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << config.host << ':' << port << '\n';

  std::thread watcher([&server] {
    while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen();
  g_stop_requested = true;
  watcher.join();

  gateway->flush();
  std::cout << timings_to_json(gateway->timings()).dump(2) << '\n';
  return 0;
}

std::function<ResponsePayload(std::span<const double>)> http_oracle(const std::string& host,
                                                                    int port,
                                                                    std::string session,
                                                                    LabelMode mode) {
  auto client = std::make_shared<httplib::Client>(host, port);
  client->set_keep_alive(true);
  client->set_tcp_nodelay(true);
  return [client, session = std::move(session), mode](std::span<const double> x) {
    const nlohmann::json body{{"session", session},
                              {"mode", std::string(to_string(mode))},
                              {"features", Vector(x.begin(), x.end())}};
    const auto res = client->Post("/v1/query", body.dump(), "application/json");
    if (!res) throw std::runtime_error("gateway unreachable");
    const auto reply = nlohmann::json::parse(res->body);
    if (res->status != 200) {
      throw std::runtime_error("gateway error: " + reply.value("error", std::string("unknown")));
    }
    ResponsePayload r;
    r.mode = mode;
    if (mode == LabelMode::soft) {
      r.probabilities = reply.at("probabilities").get<Vector>();
    } else {
      r.label = reply.at("label").get<int>();
    }
    return r;
  };
}

}  // namespace radep
