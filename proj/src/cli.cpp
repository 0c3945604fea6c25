#include "hubgate/cli.hpp"

#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "hubgate/scenario.hpp"

namespace hubgate::cli {

using nlohmann::json;

api::ApiResponse http_call(const std::string& server, const api::ApiRequest& request) {
  httplib::Client client(server);
  client.set_connection_timeout(5);
  client.set_read_timeout(120);
  httplib::Request req;
  req.method = request.method;
  std::string path = request.path;
  if (!request.query.empty()) {
    httplib::Params params(request.query.begin(), request.query.end());
    path = httplib::append_query_params(path, params);
  }
  req.path = path;
  req.body = request.body;
  if (!request.body.empty()) req.headers.emplace("Content-Type", "application/json");
  if (!request.bearer.empty()) req.headers.emplace("Authorization", "Bearer " + request.bearer);
  auto res = client.send(req);
  if (!res) {
    throw Error(Errc::BackendUnreachable, server + ": " + httplib::to_string(res.error()));
  }
  api::ApiResponse out{res->status, nullptr};
  if (!res->body.empty()) {
    try {
      out.body = json::parse(res->body);
    } catch (const json::parse_error&) {
      out.body = res->body;
    }
  }
  return out;
}

namespace {

// Left-aligned columns sized to their widest cell.
void print_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << cells[c];
      if (c + 1 < cells.size()) out << std::string(width[c] - cells[c].size() + 2, ' ');
    }
    out << '\n';
  };
  line(header);
  for (const auto& row : rows) line(row);
}

std::string cell(const json& j) {
  if (j.is_null()) return "-";
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "yes" : "no";
  if (j.is_number_float()) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << j.get<double>();
    return s.str();
  }
  if (j.is_object() && j.contains("host") && j.contains("port")) {
    return j["host"].get<std::string>() + ":" + std::to_string(j["port"].get<int>());
  }
  return j.dump();
}

std::string field(const json& j, const char* key) { return j.contains(key) ? cell(j.at(key)) : "-"; }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, path + ": " + e.what());
  }
}

void render_actions(std::ostream& out, const json& actions) {
  for (const auto& a : actions) {
    const auto kind = a.value("kind", std::string("MIGRATE"));
    const auto name = a.contains("pod") ? a["pod"].get<std::string>() : a.value("service", std::string("?"));
    out << kind << ' ' << name;
    if (a.contains("from")) out << ' ' << cell(a["from"]);
    if (a.contains("to")) out << " -> " << cell(a["to"]);
    out << '\n';
  }
}

struct Globals {
  std::string server;
  std::string token;
  std::string output = "table";
};

class Dispatcher {
 public:
  Dispatcher(Globals g, std::ostream& out, const HttpCall& call) : g_(std::move(g)), out_(out), call_(call) {}

  json request(const std::string& method, const std::string& path, const json& body = nullptr,
               std::map<std::string, std::string> query = {}) {
    api::ApiRequest r{method, path, std::move(query), body.is_null() ? std::string() : body.dump(), g_.token};
    auto res = call_(g_.server, r);
    if (res.status >= 400) {
      Errc code = Errc::ConfigError;
      std::string name = "HttpError";
      if (res.body.is_object() && res.body.contains("error")) name = res.body["error"].get<std::string>();
      std::string message = res.body.is_object() ? res.body.value("message", std::string()) : std::string();
      if (errc_from_name(name, code)) throw Error(code, message);
      throw Error(Errc::ConfigError, name + " (HTTP " + std::to_string(res.status) + ")");
    }
    return res.body;
  }

  bool json_output() const { return g_.output == "json"; }
  void emit_json(const json& j) { out_ << j.dump(2) << '\n'; }

  std::ostream& out_stream() { return out_; }

 private:
  Globals g_;
  std::ostream& out_;
  const HttpCall& call_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::map<std::string, std::string>& env, const HttpCall& call) {
  CLI::App app{"hubctl: operate a running hubgate hub", "hubctl"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  Globals g;
  std::optional<std::string> server_flag;
  std::optional<std::string> token_flag;
  app.add_option("--server", server_flag, "Hub API base URL (env HUBCTL_SERVER)");
  app.add_option("--token", token_flag, "Admin bearer token (env HUBCTL_TOKEN)");
  app.add_option("--output,-o", g.output, "Output format")->check(CLI::IsMember({"table", "json"}));

  // nodes
  auto* nodes = app.add_subcommand("nodes", "Node lifecycle");
  nodes->require_subcommand(1, 1);
  auto* nodes_list = nodes->add_subcommand("list", "List nodes");
  std::string node_id;
  deploy::NodeConfig join_cfg;
  auto* nodes_join = nodes->add_subcommand("join", "Join a node");
  nodes_join->add_option("node", node_id, "Node id")->required();
  nodes_join->add_option("--cpus", join_cfg.capacity.cpus, "CPU count")->check(CLI::PositiveNumber);
  nodes_join->add_option("--memory", join_cfg.capacity.memory, "Memory in MiB")->check(CLI::PositiveNumber);
  nodes_join->add_option("--slots", join_cfg.slots, "Batch slots")->check(CLI::PositiveNumber);
  nodes_join->add_flag("--master", join_cfg.master, "Join as swarm master");
  nodes_join->add_option("--device-blocks", join_cfg.device_blocks, "Storage device size in blocks");
  auto* nodes_drain = nodes->add_subcommand("drain", "Cordon a node and migrate its workloads");
  nodes_drain->add_option("node", node_id, "Node id")->required();
  auto* nodes_kill = nodes->add_subcommand("kill", "Inject a node failure");
  nodes_kill->add_option("node", node_id, "Node id")->required();
  auto* nodes_restore = nodes->add_subcommand("restore", "Bring a failed node back");
  nodes_restore->add_option("node", node_id, "Node id")->required();

  // sessions / quota / routes / status
  auto* sessions = app.add_subcommand("sessions", "Sessions");
  sessions->require_subcommand(1, 1);
  auto* sessions_list = sessions->add_subcommand("list", "List sessions");
  bool active_only = false;
  sessions_list->add_flag("--active", active_only, "Only non-terminal sessions");
  auto* quota = app.add_subcommand("quota", "Storage quotas");
  quota->require_subcommand(1, 1);
  auto* quota_report = quota->add_subcommand("report", "Per-user usage, fullest first");
  auto* routes = app.add_subcommand("routes", "Proxy routing table");
  routes->require_subcommand(1, 1);
  auto* routes_list = routes->add_subcommand("list", "List routes");
  auto* status = app.add_subcommand("status", "Hub summary");

  // apply / scenario / clock / login
  std::string file;
  auto* apply = app.add_subcommand("apply", "Apply a pod manifest");
  apply->add_option("-f,--file", file, "Manifest JSON")->required();
  auto* scenario = app.add_subcommand("scenario", "Scenarios");
  scenario->require_subcommand(1, 1);
  auto* scenario_run = scenario->add_subcommand("run", "Run a scenario file");
  std::optional<std::uint64_t> seed;
  bool live = false;
  bool local = false;
  scenario_run->add_option("file", file, "Scenario JSON")->required();
  scenario_run->add_option("--seed", seed, "Seed for the simulated cluster");
  scenario_run->add_flag("--live", live, "Run against the server's own deployment");
  scenario_run->add_flag("--local", local, "Run in-process without a server");
  auto* clock = app.add_subcommand("clock", "Logical clock");
  clock->require_subcommand(1, 1);
  auto* clock_advance = clock->add_subcommand("advance", "Advance the logical clock");
  LogicalTime seconds = 0;
  clock_advance->add_option("seconds", seconds, "Logical seconds")->required()->check(CLI::NonNegativeNumber);
  auto* login = app.add_subcommand("login", "Obtain a token");
  std::string user;
  std::string secret;
  login->add_option("user", user, "Username")->required();
  login->add_option("--secret,--password", secret, "Password");

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 consumes a reversed vector
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  if (local && live) {
    err << "error: --local and --live are exclusive\n";
    return kExitUsage;
  }

  const auto env_or = [&env](const char* key, const std::string& fallback) {
    auto it = env.find(key);
    return it == env.end() || it->second.empty() ? fallback : it->second;
  };
  g.server = server_flag ? *server_flag : env_or("HUBCTL_SERVER", kDefaultServer);
  g.token = token_flag ? *token_flag : env_or("HUBCTL_TOKEN", "");

  Dispatcher d(g, out, call);
  try {
    if (nodes_list->parsed()) {
      auto body = d.request("GET", "/hub/api/admin/nodes");
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        std::vector<std::vector<std::string>> rows;
        for (const auto& n : body) {
          std::string load = n.contains("pods") ? std::to_string(n["pods"].size())
                             : n.contains("running") ? cell(n["running"])
                                                      : field(n, "used_slots");
          rows.push_back({field(n, "node_id"), field(n, "alive"), field(n, "cordoned"),
                          n.contains("capacity") ? cell(n["capacity"]["cpus"]) : "-",
                          n.contains("capacity") ? cell(n["capacity"]["memory"]) : "-", load});
        }
        print_table(out, {"NODE", "ALIVE", "CORDONED", "CPUS", "MEMORY", "LOAD"}, rows);
      }
    } else if (nodes_join->parsed()) {
      join_cfg.id = node_id;
      auto body = d.request("POST", "/hub/api/admin/nodes", json(join_cfg));
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << "joined " << node_id << '\n';
      }
    } else if (nodes_drain->parsed()) {
      auto body = d.request("POST", "/hub/api/admin/nodes/" + node_id + "/drain");
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        render_actions(out, body.at("actions"));
        out << "drained " << node_id << '\n';
      }
    } else if (nodes_kill->parsed() || nodes_restore->parsed()) {
      const std::string verb = nodes_kill->parsed() ? "kill" : "restore";
      auto body = d.request("POST", "/hub/api/admin/nodes/" + node_id + "/" + verb);
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << verb << ' ' << node_id << ": affected " << body.value("affected", json::array()).dump() << '\n';
      }
    } else if (sessions_list->parsed()) {
      std::map<std::string, std::string> q;
      if (active_only) q["active"] = "1";
      auto body = d.request("GET", "/hub/api/sessions", nullptr, q);
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        std::vector<std::vector<std::string>> rows;
        for (const auto& s : body) {
          rows.push_back({field(s, "session_id"), field(s, "username"), field(s, "spawner_kind"), field(s, "state"),
                          field(s, "backend"), field(s, "failure_reason")});
        }
        print_table(out, {"SESSION", "USER", "KIND", "STATE", "BACKEND", "REASON"}, rows);
      }
    } else if (quota_report->parsed()) {
      auto body = d.request("GET", "/hub/api/admin/quota");
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : body) {
          rows.push_back({field(r, "username"), field(r, "used"), field(r, "quota"), field(r, "percent"),
                          r.value("flagged", false) ? "WARN" : ""});
        }
        print_table(out, {"USER", "USED_MIB", "QUOTA_MIB", "PERCENT", "FLAG"}, rows);
      }
    } else if (routes_list->parsed()) {
      auto body = d.request("GET", "/hub/api/routes");
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << "version " << body.value("version", 0) << '\n';
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : body.at("routes")) rows.push_back({field(r, "prefix"), field(r, "backend"), field(r, "session_id")});
        print_table(out, {"PREFIX", "BACKEND", "SESSION"}, rows);
      }
    } else if (status->parsed()) {
      auto body = d.request("GET", "/hub/api/status");
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << "spawner " << field(body, "spawner") << ", t=" << field(body, "now") << ", routes "
            << field(body, "routes") << ", pool " << field(body, "pool_health") << '\n';
        for (const auto& [state, count] : body.at("sessions").items()) {
          if (count.get<int>() > 0) out << "  " << state << ' ' << count.get<int>() << '\n';
        }
      }
    } else if (apply->parsed()) {
      auto body = d.request("POST", "/hub/api/admin/apply", read_json_file(file));
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        render_actions(out, body.at("actions"));
        for (const auto& u : body.at("unschedulable")) out << "UNSCHEDULABLE " << field(u, "pod") << ": " << field(u, "reason") << '\n';
      }
    } else if (scenario_run->parsed()) {
      const auto sc = read_json_file(file);
      json report;
      if (local) {
        report = scenario::run(scenario::parse(sc), seed);
      } else {
        json body = {{"scenario", sc}, {"live", live}};
        if (seed) body["seed"] = *seed;
        report = d.request("POST", "/hub/api/admin/scenario", body);
      }
      if (d.json_output()) {
        d.emit_json(report);
      } else {
        const auto& a = report.at("asserts");
        out << (report.value("ok", false) ? "PASS" : "FAIL") << ": " << a.value("passed", 0) << " asserts passed, "
            << a.value("failed", 0) << " failed, " << report.at("steps").size() << " steps recorded\n";
        for (const auto& f : a.at("failures")) out << "  step " << field(f, "step") << ' ' << field(f, "check") << ": " << field(f, "detail") << '\n';
        for (const auto& s : report.at("steps")) {
          if (!s.value("ok", true) && s.value("error", std::string()) != "AssertionFailed") out << "  step " << field(s, "i") << ' ' << field(s, "op") << ": " << field(s, "error") << '\n';
        }
      }
      if (!report.value("ok", false)) return kExitDomain;
    } else if (clock_advance->parsed()) {
      auto body = d.request("POST", "/hub/api/admin/clock", {{"seconds", seconds}});
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << "t=" << body.value("now", 0) << '\n';
      }
    } else if (login->parsed()) {
      auto body = d.request("POST", "/hub/api/login", {{"username", user}, {"secret", secret}});
      if (d.json_output()) {
        d.emit_json(body);
      } else {
        out << body.value("token", "") << '\n';
      }
    }
  } catch (const Error& e) {
    err << e.name();
    if (!e.detail().empty()) err << ": " << e.detail();
    err << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    err << "ConfigError: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace hubgate::cli
