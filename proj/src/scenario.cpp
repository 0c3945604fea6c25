#include "hubgate/scenario.hpp"

#include <fstream>
#include <map>

#include "hubgate/error.hpp"

namespace hubgate::scenario {

using nlohmann::json;

Scenario parse(const json& j) {
  Scenario s;
  const json* steps = nullptr;
  if (j.is_array()) {
    steps = &j;
  } else if (j.is_object()) {
    if (auto c = j.find("config"); c != j.end()) {
      if (!c->is_object()) throw Error(Errc::ScenarioParseError, "'config' must be an object");
      s.config = *c;
    }
    auto st = j.find("steps");
    if (st == j.end()) throw Error(Errc::ScenarioParseError, "missing 'steps'");
    steps = &*st;
  }
  if (!steps || !steps->is_array()) throw Error(Errc::ScenarioParseError, "steps must be an array");
  for (const auto& step : *steps) {
    if (!step.is_object() || !step.contains("op") || !step["op"].is_string()) {
      throw Error(Errc::ScenarioParseError, "every step needs a string 'op': " + step.dump());
    }
    s.steps.push_back(step);
  }
  return s;
}

Scenario load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ScenarioParseError, "cannot open " + path.string());
  try {
    return parse(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(Errc::ScenarioParseError, path.string() + ": " + e.what());
  }
}

namespace {

constexpr const char* kAssertionFailed = "AssertionFailed";

json substitute(const json& j, const std::string& var, const std::string& value) {
  if (j.is_string()) {
    auto s = j.get<std::string>();
    const auto pattern = "{" + var + "}";
    for (auto pos = s.find(pattern); pos != std::string::npos; pos = s.find(pattern, pos + value.size())) {
      s.replace(pos, pattern.size(), value);
    }
    return s;
  }
  if (j.is_array() || j.is_object()) {
    json out = j;
    for (auto it = out.begin(); it != out.end(); ++it) *it = substitute(*it, var, value);
    return out;
  }
  return j;
}

template <typename T>
T arg(const json& step, const char* key) {
  auto it = step.find(key);
  if (it == step.end()) throw Error(Errc::ScenarioParseError, std::string("step '") + step.value("op", "") +
                                                                   "' needs '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::ScenarioParseError, std::string("bad '") + key + "': " + e.what());
  }
}

class Runner {
 public:
  explicit Runner(deploy::Deployment& d) : d_(d) {}

  json run(const std::vector<json>& steps) {
    exec_all(steps);
    json report = {{"ok", failed_ == 0 && step_errors_ == 0},
                   {"steps", std::move(steps_)},
                   {"asserts", {{"passed", passed_}, {"failed", failed_}, {"failures", failures_}}},
                   {"final", d_.status()}};
    return report;
  }

 private:
  void exec_all(const std::vector<json>& steps) {
    for (const auto& step : steps) {
      if (step.value("op", "") == "repeat") {
        repeat(step);
      } else {
        exec(step);
      }
    }
  }

  void repeat(const json& step) {
    const auto count = arg<int>(step, "count");
    const auto from = step.value("from", 1);
    const auto var = step.value("var", std::string("i"));
    const auto body = arg<std::vector<json>>(step, "steps");
    for (int i = from; i < from + count; ++i) {
      std::vector<json> expanded;
      for (const auto& s : body) expanded.push_back(substitute(s, var, std::to_string(i)));
      exec_all(expanded);
    }
  }

  // A string value "${label.key.key}" is replaced by that path in the result of
  // the step labelled `label`, keeping its JSON type.
  json resolve_refs(const json& j) const {
    if (j.is_string()) {
      const auto& s = j.get_ref<const std::string&>();
      if (s.size() > 3 && s.rfind("${", 0) == 0 && s.back() == '}') return lookup(s.substr(2, s.size() - 3));
      return j;
    }
    if (j.is_array() || j.is_object()) {
      json out = j;
      for (auto it = out.begin(); it != out.end(); ++it) {
        if (it.key() != "steps") *it = resolve_refs(*it);
      }
      return out;
    }
    return j;
  }

  json lookup(const std::string& ref) const {
    const auto dot = ref.find('.');
    auto it = labels_.find(ref.substr(0, dot));
    if (it == labels_.end()) throw Error(Errc::ScenarioParseError, "unknown label in ${" + ref + "}");
    const json* cur = &it->second;
    for (auto pos = dot; pos != std::string::npos;) {
      const auto next = ref.find('.', pos + 1);
      const auto key = ref.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
      if (!cur->is_object() || !cur->contains(key)) {
        throw Error(Errc::ScenarioParseError, "${" + ref + "} does not resolve");
      }
      cur = &(*cur)[key];
      pos = next;
    }
    return *cur;
  }

  void exec(const json& raw) {
    const auto op = raw.value("op", "");
    const auto expect_error = raw.value("expect_error", std::string());
    json entry = {{"i", index_++}, {"op", op}, {"t", d_.cluster().now()}};
    if (raw.contains("label")) entry["label"] = raw["label"];
    assert_detail_.reset();
    try {
      const json step = resolve_refs(raw);
      json result = dispatch(op, step);
      if (raw.contains("label")) labels_[raw["label"].get<std::string>()] = result;
      if (assert_detail_) {
        // Failed asserts are verdicts, not step errors: the run carries on.
        entry["ok"] = false;
        entry["error"] = kAssertionFailed;
        entry["message"] = *assert_detail_;
      } else if (!expect_error.empty()) {
        entry["ok"] = false;
        entry["error"] = "expected " + expect_error;
        ++step_errors_;
      } else {
        entry["ok"] = true;
      }
      if (!result.is_null()) entry["result"] = std::move(result);
    } catch (const Error& e) {
      const bool expected = !expect_error.empty() && e.name() == expect_error;
      entry["ok"] = expected;
      entry["error"] = e.name();
      entry["message"] = e.detail();
      if (!expected) ++step_errors_;
    }
    d_.cluster().log("scenario", "step", {{"i", entry["i"]}, {"op", op}, {"ok", entry["ok"]}});
    if (raw.value("record", true) || !entry["ok"].get<bool>()) steps_.push_back(std::move(entry));
  }

  std::string session_of(const json& step) {
    if (step.contains("session")) return arg<std::string>(step, "session");
    const auto user = arg<std::string>(step, "user");
    auto it = sessions_.find(user);
    if (it == sessions_.end()) throw Error(Errc::UnknownSession, "no session started for " + user);
    return it->second;
  }

  const std::string& token_of(const std::string& user) {
    auto it = tokens_.find(user);
    if (it != tokens_.end()) return it->second;
    return tokens_[user] = d_.login(user, password_of(user)).token;
  }

  std::string password_of(const std::string& user) const {
    for (const auto& u : d_.config().users) {
      if (u.username == user) return u.password;
    }
    return {};
  }

  json dispatch(const std::string& op, const json& step) {
    if (op == "join") {
      deploy::NodeConfig n;
      json spec = step;
      spec["id"] = arg<std::string>(step, "node");
      from_json(spec, n);
      return d_.join_node(n);
    }
    if (op == "login") {
      const auto token = step.contains("code") ? d_.login_oauth(arg<std::string>(step, "code"))
                                               : d_.login(arg<std::string>(step, "user"),
                                                          step.value("password", password_of(step.value("user", ""))));
      tokens_[token.username] = token.token;
      return {{"user", token.username}};
    }
    if (op == "spawn") {
      const auto user = arg<std::string>(step, "user");
      auto options = step.value("options", json::object()).get<hub::SpawnOptions>();
      auto record = d_.spawn(token_of(user), options);
      sessions_[user] = record.session_id;
      return {{"session", record.session_id}, {"state", hub::state_name(record.state)}};
    }
    if (op == "stop") {
      const auto id = session_of(step);
      const auto user = d_.hub().get_session(id).username;
      auto record = d_.stop(token_of(step.value("as", user)), id);
      return {{"session", id}, {"state", hub::state_name(record.state)}};
    }
    if (op == "write_data") {
      d_.write_user_file(arg<std::string>(step, "user"), arg<std::string>(step, "file"),
                         arg<std::string>(step, "content"));
      return nullptr;
    }
    if (op == "kill_node") return fault(d_.kill_node(arg<std::string>(step, "node")));
    if (op == "restore_node") return fault(d_.restore_node(arg<std::string>(step, "node")));
    if (op == "kill_random_node") return fault(d_.kill_node(random_node(step.value("workers_only", true))));
    if (op == "drop_backend") return fault(d_.drop_backend(session_of(step)));
    if (op == "drain") return d_.drain_node(arg<std::string>(step, "node"));
    if (op == "apply") return d_.apply_manifest(arg<json>(step, "manifest"));
    if (op == "advance_clock") {
      d_.advance(arg<LogicalTime>(step, "seconds"));
      return {{"now", d_.cluster().now()}};
    }
    if (op == "request") return request(step);
    if (op == "assert") {
      check(step);
      return nullptr;
    }
    throw Error(Errc::ScenarioParseError, "unknown op '" + op + "'");
  }

  json fault(const sim::FaultReport& r) {
    return {{"target", r.fault.target}, {"affected", r.affected}};
  }

  NodeId random_node(bool workers_only) {
    std::vector<NodeId> alive;
    for (const auto& n : d_.list_nodes()) {
      if (!n.value("alive", true)) continue;
      if (workers_only && n.value("is_master", false)) continue;
      alive.push_back(n.at("node_id").get<NodeId>());
    }
    if (alive.empty()) throw Error(Errc::UnknownTarget, "no alive node");
    std::uniform_int_distribution<std::size_t> pick(0, alive.size() - 1);
    return alive[pick(d_.cluster().rng())];
  }

  json request(const json& step) {
    std::string path = step.contains("path") ? arg<std::string>(step, "path")
                                             : d_.hub().route_prefix_for(arg<std::string>(step, "user"));
    auto response = d_.get(path);
    json out = {{"path", path}, {"status", response.status}, {"body", response.body}};
    if (step.contains("expect_status") && response.status != step["expect_status"].get<int>()) {
      throw Error(Errc::BackendUnreachable, path + " returned " + std::to_string(response.status));
    }
    return out;
  }

  void record(bool ok, const json& step, const std::string& detail) {
    if (ok) {
      ++passed_;
      return;
    }
    ++failed_;
    assert_detail_ = detail;
    failures_.push_back({{"step", index_ - 1},
                         {"error", kAssertionFailed},
                         {"check", step.value("check", "")},
                         {"detail", detail}});
  }

  void check(const json& step) {
    const auto what = arg<std::string>(step, "check");
    if (what == "session_state") {
      const auto who = step.contains("session") ? arg<std::string>(step, "session") : arg<std::string>(step, "user");
      const auto want = arg<std::string>(step, "state");
      std::optional<hub::SessionState> got;
      if (step.contains("session")) {
        try {
          got = d_.hub().get_session(who).state;
        } catch (const Error&) {
        }
      } else if (auto it = sessions_.find(who); it != sessions_.end()) {
        got = d_.hub().get_session(it->second).state;
      }
      if (!got) {
        record(false, step, who + ": no session");
      } else {
        record(hub::state_name(*got) == want, step, who + ": " + std::string(hub::state_name(*got)) + " != " + want);
      }
    } else if (what == "equals") {
      const auto got = arg<json>(step, "actual");
      const auto want = arg<json>(step, "value");
      record(got == want, step, got.dump() + " != " + want.dump());
    } else if (what == "route") {
      const auto user = arg<std::string>(step, "user");
      const bool want = step.value("exists", true);
      auto r = d_.routes().resolve(d_.hub().route_prefix_for(user));
      const bool got = r.target == proxy::Target::Backend;
      record(got == want, step, user + ": route " + (got ? "present" : "absent"));
    } else if (what == "serves") {
      const auto user = arg<std::string>(step, "user");
      auto response = d_.get(d_.hub().route_prefix_for(user));
      record(response.status == 200 && response.body == "OK-" + user, step,
             user + ": " + std::to_string(response.status) + " " + response.body);
    } else if (what == "all_running_serve") {
      std::size_t bad = 0;
      std::string first;
      for (const auto& s : d_.hub().list_sessions(false)) {
        if (s.state != hub::SessionState::Running) continue;
        auto response = d_.get(d_.hub().route_prefix_for(s.username));
        if (response.status != 200 || response.body != "OK-" + s.username) {
          if (!bad++) first = s.username + " -> " + std::to_string(response.status);
        }
      }
      record(bad == 0, step, std::to_string(bad) + " sessions not served, first " + first);
    } else if (what == "file") {
      const auto user = arg<std::string>(step, "user");
      const auto file = arg<std::string>(step, "file");
      std::string got;
      try {
        got = d_.read_user_file(user, file);
      } catch (const Error& e) {
        record(false, step, user + "/" + file + ": " + std::string(e.name()));
        return;
      }
      record(got == arg<std::string>(step, "content"), step, user + "/" + file + " content differs");
    } else if (what == "pool_health") {
      const auto want = arg<std::string>(step, "value");
      record(d_.pool_health() == want, step, "pool " + d_.pool_health());
    } else if (what == "running_count" || what == "state_count") {
      hub::SessionState state = hub::SessionState::Running;
      if (what == "state_count" && !hub::parse_state(arg<std::string>(step, "state"), state)) {
        throw Error(Errc::ScenarioParseError, "unknown state");
      }
      const auto want = arg<std::size_t>(step, "value");
      const auto got = d_.hub().count_in_state(state);
      record(got == want, step, std::to_string(got) + " != " + std::to_string(want));
    } else if (what == "listeners") {
      if (!d_.batch()) throw Error(Errc::Unsupported, "listeners exist only for batch");
      const auto& sched = d_.batch()->scheduler();
      auto listeners = sched.listeners();
      bool ok = true;
      std::string detail;
      for (const auto& l : listeners) {
        if (l.host != sched.hub_host()) {
          ok = false;
          detail = "listener on " + l.host;
        }
      }
      if (step.contains("count") && listeners.size() != step["count"].get<std::size_t>()) {
        ok = false;
        detail += " count " + std::to_string(listeners.size());
      }
      record(ok, step, detail);
    } else if (what == "invariants") {
      auto problems = d_.check_invariants();
      record(problems.empty(), step, problems.empty() ? "" : problems.front());
    } else {
      throw Error(Errc::ScenarioParseError, "unknown check '" + what + "'");
    }
  }

  deploy::Deployment& d_;
  std::map<std::string, std::string> tokens_;
  std::map<std::string, std::string> sessions_;
  std::map<std::string, json> labels_;
  std::optional<std::string> assert_detail_;
  json steps_ = json::array();
  json failures_ = json::array();
  std::size_t index_ = 0;
  std::size_t passed_ = 0;
  std::size_t failed_ = 0;
  std::size_t step_errors_ = 0;
};

}  // namespace

json run_steps(deploy::Deployment& deployment, const std::vector<json>& steps) {
  std::lock_guard lock(deployment.mutex());
  return Runner(deployment).run(steps);
}

json run(const Scenario& scenario, std::optional<std::uint64_t> seed) {
  auto config = deploy::parse_config(scenario.config);
  if (seed) config.seed = *seed;
  config.deterministic_tokens = true;
  deploy::Deployment d(config);
  json report = Runner(d).run(scenario.steps);
  report["seed"] = config.seed;
  report["event_log"] = d.cluster().event_log();
  return report;
}

}  // namespace hubgate::scenario
