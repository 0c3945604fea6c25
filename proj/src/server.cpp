#include "hubgate/server.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <mutex>

#include <httplib.h>

namespace hubgate::server {

using nlohmann::json;

bool tls_available() noexcept {
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
  return true;
#else
  return false;
#endif
}

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

std::string bearer_of(const httplib::Request& req) {
  const auto auth = req.get_header_value("Authorization");
  constexpr std::string_view kPrefix = "Bearer ";
  if (auth.size() > kPrefix.size() && auth.compare(0, kPrefix.size(), kPrefix) == 0) {
    return auth.substr(kPrefix.size());
  }
  return {};
}

// Hub traffic goes to the API listener over loopback HTTP; session backends are
// simulated and answered in-process.
class ServerTransport final : public proxy::Transport {
 public:
  ServerTransport(deploy::Deployment& d, Endpoint hub, const std::atomic<int>& api_port)
      : d_(d), hub_(std::move(hub)), api_port_(api_port) {}

  std::optional<proxy::HttpResponse> send(const Endpoint& backend, const proxy::HttpRequest& request) override {
    if (backend == hub_) return forward_to_hub(request);
    std::lock_guard lock(d_.mutex());
    auto user = d_.backend_owner(backend);
    if (!user) return std::nullopt;
    return proxy::HttpResponse{200, {{"Content-Type", "text/plain"}}, "OK-" + *user};
  }

 private:
  std::optional<proxy::HttpResponse> forward_to_hub(const proxy::HttpRequest& request) {
    httplib::Client cli("127.0.0.1", api_port_.load());
    cli.set_connection_timeout(5);
    httplib::Request req;
    req.method = request.method;
    req.path = request.path;
    req.body = request.body;
    for (const auto& [k, v] : request.headers) req.headers.emplace(k, v);
    auto res = cli.send(req);
    if (!res) return std::nullopt;
    proxy::HttpResponse out{res->status, {}, res->body};
    for (const auto& [k, v] : res->headers) out.headers.emplace_back(k, v);
    return out;
  }

  deploy::Deployment& d_;
  Endpoint hub_;
  const std::atomic<int>& api_port_;
};

}  // namespace

struct Server::Impl {
  Impl(deploy::Deployment& d, ServerOptions o)
      : deployment(d),
        options(std::move(o)),
        api(d),
        transport(d, d.config().hub_backend, api_port),
        edge(d.routes(), transport, 2) {}

  deploy::Deployment& deployment;
  ServerOptions options;
  api::HubApi api;
  std::atomic<int> api_port{0};
  ServerTransport transport;
  proxy::EdgeProxy edge;

  httplib::Server api_server;
  std::unique_ptr<httplib::Server> proxy_server;
  std::thread api_thread;
  std::thread proxy_thread;
  std::thread ticker;

  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;
};

Server::Server(deploy::Deployment& deployment, ServerOptions options)
    : impl_(std::make_unique<Impl>(deployment, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& im = *impl_;
  auto& d = im.deployment;

  const auto api_handler = [&im](const httplib::Request& req, httplib::Response& res) {
    api::ApiRequest r{req.method, req.path, {}, req.body, bearer_of(req)};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    auto out = im.api.handle(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  im.api_server.Get(R"(/.*)", api_handler);
  im.api_server.Post(R"(/.*)", api_handler);
  im.api_server.Put(R"(/.*)", api_handler);
  im.api_server.Delete(R"(/.*)", api_handler);

  if (im.options.tls_cert && im.options.tls_key) {
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
    im.proxy_server = std::make_unique<httplib::SSLServer>(im.options.tls_cert->c_str(), im.options.tls_key->c_str());
    if (!im.proxy_server->is_valid()) throw Error(Errc::ConfigError, "cannot load TLS certificate or key");
#else
    throw Error(Errc::Unsupported, "built without TLS support");
#endif
  } else {
    im.proxy_server = std::make_unique<httplib::Server>();
  }

  im.edge.on_backend_down([&d](const std::string& session_id, const Endpoint& backend) {
    std::lock_guard lock(d.mutex());
    d.cluster().log("proxy", "backend_down", {{"session", session_id}, {"backend", backend.to_string()}});
    d.hub().post({session_id, hub::EventKind::BackendDown, backend, {}});
  });
  const auto proxy_handler = [&im, &d](const httplib::Request& req, httplib::Response& res) {
    proxy::HttpRequest r{req.method, req.target.empty() ? req.path : req.target, {}, req.body};
    for (const auto& [k, v] : req.headers) r.headers.emplace_back(k, v);
    auto out = im.edge.forward(r);
    {
      std::lock_guard lock(d.mutex());
      d.settle();
    }
    res.status = out.status;
    std::string type = "text/plain";
    for (const auto& [k, v] : out.headers) {
      if (iequals(k, "Content-Type")) {
        type = v;
      } else if (!iequals(k, "Content-Length")) {
        res.set_header(k, v);
      }
    }
    res.set_content(out.body, type);
  };
  auto& ps = *im.proxy_server;
  ps.Get(R"(/.*)", proxy_handler);
  ps.Post(R"(/.*)", proxy_handler);
  ps.Put(R"(/.*)", proxy_handler);
  ps.Delete(R"(/.*)", proxy_handler);
  ps.Patch(R"(/.*)", proxy_handler);
  ps.Options(R"(/.*)", proxy_handler);

  const auto bind = [](httplib::Server& s, const std::string& host, int port) {
    const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
    if (bound <= 0) throw Error(Errc::ConfigError, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  };
  api_port_ = bind(im.api_server, im.options.api_host, im.options.api_port);
  im.api_port = api_port_;
  proxy_port_ = bind(*im.proxy_server, im.options.proxy_host, im.options.proxy_port);

  im.api_thread = std::thread([&im] { im.api_server.listen_after_bind(); });
  im.proxy_thread = std::thread([&im] { im.proxy_server->listen_after_bind(); });
  im.api_server.wait_until_ready();
  im.proxy_server->wait_until_ready();

  if (im.options.tick_seconds > 0) {
    im.ticker = std::thread([&im, &d] {
      std::unique_lock lock(im.stop_mu);
      while (!im.stopped) {
        if (im.stop_cv.wait_for(lock, std::chrono::milliseconds(im.options.tick_interval_ms),
                                [&im] { return im.stopped; })) {
          break;
        }
        std::lock_guard dl(d.mutex());
        d.advance(im.options.tick_seconds);
      }
    });
  }
}

void Server::stop() {
  if (!impl_) return;
  auto& im = *impl_;
  {
    std::lock_guard lock(im.stop_mu);
    im.stopped = true;
  }
  im.stop_cv.notify_all();
  im.api_server.stop();
  if (im.proxy_server) im.proxy_server->stop();
  for (auto* t : {&im.api_thread, &im.proxy_thread, &im.ticker}) {
    if (t->joinable()) t->join();
  }
}

void Server::wait() {
  auto& im = *impl_;
  std::unique_lock lock(im.stop_mu);
  im.stop_cv.wait(lock, [&im] { return im.stopped; });
}

}  // namespace hubgate::server
