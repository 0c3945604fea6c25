// hubgated: serves the hub API and the edge proxy over one simulated deployment.
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "hubgate/deployment.hpp"
#include "hubgate/error.hpp"
#include "hubgate/server.hpp"

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hubgated: multi-tenant session hub over a simulated cluster", "hubgated"};
  std::string config_path;
  hubgate::server::ServerOptions opts;
  std::string tls_cert, tls_key;
  std::optional<std::uint64_t> seed;
  bool random_tokens = false;
  app.add_option("-c,--config", config_path, "Deployment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--api-host", opts.api_host, "Hub API listen host");
  app.add_option("--api-port", opts.api_port, "Hub API listen port (0 = any)");
  app.add_option("--proxy-host", opts.proxy_host, "Edge proxy listen host");
  app.add_option("--proxy-port", opts.proxy_port, "Edge proxy listen port (0 = any)");
  app.add_option("--tls-cert", tls_cert, "PEM certificate for the proxy front");
  app.add_option("--tls-key", tls_key, "PEM private key for the proxy front");
  app.add_option("--tick-seconds", opts.tick_seconds, "Logical seconds advanced per tick (0 = manual clock)");
  app.add_option("--tick-ms", opts.tick_interval_ms, "Wall milliseconds between ticks")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed for the simulated cluster");
  app.add_flag("--random-tokens", random_tokens, "Seed the token generator from the OS");
  CLI11_PARSE(app, argc, argv);

  if (tls_cert.empty() != tls_key.empty()) {
    std::cerr << "--tls-cert and --tls-key go together\n";
    return 2;
  }
  if (!tls_cert.empty()) {
    opts.tls_cert = tls_cert;
    opts.tls_key = tls_key;
  }

  try {
    nlohmann::json raw = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      raw = nlohmann::json::parse(in);
    }
    auto config = hubgate::deploy::parse_config(raw);
    if (seed) config.seed = *seed;
    if (random_tokens) config.deterministic_tokens = false;
    hubgate::deploy::Deployment deployment(config);
    hubgate::server::Server server(deployment, opts);
    server.start();
    std::cout << "hubgated: spawner " << hubgate::hub::spawner_kind_name(config.spawner) << ", api on "
              << opts.api_host << ':' << server.api_port() << ", proxy on " << opts.proxy_host << ':'
              << server.proxy_port() << (opts.tls_cert ? " (https)" : "") << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  } catch (const hubgate::Error& e) {
    std::cerr << e.name() << ": " << e.detail() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ConfigError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
