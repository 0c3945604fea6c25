#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "hubgate/api.hpp"
#include "hubgate/deployment.hpp"

namespace hubgate::server {

struct ServerOptions {
  std::string api_host = "127.0.0.1";
  int api_port = 8081;  // 0 picks a free port
  std::string proxy_host = "0.0.0.0";
  int proxy_port = 8000;
  std::optional<std::string> tls_cert;  // both set -> proxy front speaks HTTPS
  std::optional<std::string> tls_key;
  LogicalTime tick_seconds = 0;  // logical seconds per tick; 0 disables the ticker
  int tick_interval_ms = 1000;
};

bool tls_available() noexcept;

// Runs the hub API and the edge proxy front on their own listeners. Requests
// to /hub/... on the proxy port are forwarded to the API listener over HTTP.
class Server {
 public:
  Server(deploy::Deployment& deployment, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds both listeners and starts serving on background threads. Throws ConfigError.
  void start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

  int api_port() const noexcept { return api_port_; }
  int proxy_port() const noexcept { return proxy_port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int api_port_ = 0;
  int proxy_port_ = 0;
};

}  // namespace hubgate::server
