#include "hubgate/proxy.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "hubgate/error.hpp"

namespace hubgate::proxy {

void to_json(nlohmann::json& j, const Route& r) {
  j = {{"prefix", r.prefix}, {"backend", r.backend}, {"session_id", r.session_id}};
}

void from_json(const nlohmann::json& j, Route& r) {
  j.at("prefix").get_to(r.prefix);
  j.at("backend").get_to(r.backend);
  j.at("session_id").get_to(r.session_id);
}

void to_json(nlohmann::json& j, const TableSnapshot& t) {
  auto routes = nlohmann::json::array();
  for (const auto& [_, r] : t.routes) routes.push_back(r);
  j = {{"version", t.version}, {"hub_backend", t.hub_backend}, {"routes", std::move(routes)}};
}

bool valid_prefix(std::string_view prefix) noexcept {
  if (prefix.size() < 2 || prefix.front() != '/' || prefix.back() != '/') return false;
  if (prefix.find("//") != std::string_view::npos) return false;
  return std::none_of(prefix.begin(), prefix.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '?' || c == '#';
  });
}

namespace {

bool is_hub_path(std::string_view path) {
  return path == "/hub" || path.substr(0, kHubPrefix.size()) == kHubPrefix;
}

}  // namespace

Resolution resolve(const TableSnapshot& table, std::string_view path) {
  if (auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
  if (is_hub_path(path)) return {Target::Hub, table.hub_backend, "", std::string(kHubPrefix)};

  // Candidate prefixes of the path are exactly its "/"-terminated heads, so
  // walk them from longest to shortest instead of scanning the table.
  std::string probe(path);
  if (probe.empty() || probe.back() != '/') probe.push_back('/');
  for (std::size_t end = probe.size(); end > 0; end = probe.rfind('/', end - 2) + 1) {
    auto it = table.routes.find(probe.substr(0, end));
    if (it != table.routes.end()) {
      return {Target::Backend, it->second.backend, it->second.session_id, it->first};
    }
    if (end == 1) break;
  }
  return {};
}

RoutingTable::RoutingTable(Endpoint hub_backend) {
  auto initial = std::make_shared<TableSnapshot>();
  initial->hub_backend = std::move(hub_backend);
  current_ = std::move(initial);
}

std::uint64_t RoutingTable::add_route(const std::string& prefix, const Endpoint& backend,
                                      const std::string& session_id) {
  if (!valid_prefix(prefix)) throw Error(Errc::MalformedPrefix, prefix);
  if (prefix.substr(0, kHubPrefix.size()) == kHubPrefix) {
    throw Error(Errc::DuplicatePrefix, prefix + " is owned by the hub");
  }
  std::lock_guard lock(mu_);
  if (current_->routes.count(prefix)) throw Error(Errc::DuplicatePrefix, prefix);
  auto next = std::make_shared<TableSnapshot>(*current_);
  next->routes.emplace(prefix, Route{prefix, backend, session_id});
  ++next->version;
  current_ = next;
  return next->version;
}

std::uint64_t RoutingTable::remove_route(const std::string& prefix) {
  std::lock_guard lock(mu_);
  if (!current_->routes.count(prefix)) throw Error(Errc::UnknownPrefix, prefix);
  auto next = std::make_shared<TableSnapshot>(*current_);
  next->routes.erase(prefix);
  ++next->version;
  current_ = next;
  return next->version;
}

std::shared_ptr<const TableSnapshot> RoutingTable::snapshot() const {
  std::lock_guard lock(mu_);
  return current_;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Headers strip_hop_by_hop(const Headers& headers) {
  std::set<std::string> drop = {"connection", "keep-alive",          "transfer-encoding",
                                "te",         "trailer",             "upgrade",
                                "proxy-authenticate", "proxy-authorization"};
  for (const auto& [name, value] : headers) {
    if (lower(name) != "connection") continue;
    std::size_t start = 0;
    while (start <= value.size()) {
      auto comma = value.find(',', start);
      if (comma == std::string::npos) comma = value.size();
      auto token = lower(trim(std::string_view(value).substr(start, comma - start)));
      if (!token.empty()) drop.insert(token);
      start = comma + 1;
    }
  }
  Headers out;
  for (const auto& h : headers) {
    if (!drop.count(lower(h.first))) out.push_back(h);
  }
  return out;
}

EdgeProxy::EdgeProxy(const RoutingTable& table, Transport& transport, std::size_t replicas)
    : table_(table), transport_(transport), served_(replicas == 0 ? 1 : replicas) {}

HttpResponse EdgeProxy::forward(const HttpRequest& request) {
  const auto replica = next_.fetch_add(1) % served_.size();
  served_[replica].fetch_add(1);

  const auto snap = table_.snapshot();
  const Resolution res = resolve(*snap, request.path);
  if (res.target == Target::NoRoute) {
    return {404, {{"Content-Type", "text/plain"}}, "NoRoute: " + request.path + "\n"};
  }

  HttpRequest upstream = request;
  upstream.headers = strip_hop_by_hop(request.headers);
  upstream.headers.emplace_back("X-Forwarded-By", "edge-" + std::to_string(replica));

  auto response = transport_.send(res.backend, upstream);
  if (!response) {
    if (res.target == Target::Backend && backend_down_) backend_down_(res.session_id, res.backend);
    return {502, {{"Content-Type", "text/plain"}},
            "BackendUnreachable: " + res.backend.to_string() + "\n"};
  }
  response->headers = strip_hop_by_hop(response->headers);
  return *response;
}

std::vector<std::uint64_t> EdgeProxy::served_per_replica() const {
  std::vector<std::uint64_t> out;
  out.reserve(served_.size());
  for (const auto& c : served_) out.push_back(c.load());
  return out;
}

}  // namespace hubgate::proxy
