#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "hubgate/deployment.hpp"
#include "hubgate/error.hpp"

namespace hubgate::api {

// HTTP status for a domain error.
int http_status(Errc code) noexcept;

struct ApiRequest {
  std::string method = "GET";
  std::string path;  // without query string
  std::map<std::string, std::string> query;
  std::string body;
  std::string bearer;  // token from "Authorization: Bearer ..."
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// {"error": <name>, "message": <detail>}
ApiResponse error_response(const Error& e);

// The hub's JSON API, independent of any socket layer:
//   POST   /hub/api/login                    {username, secret} -> token
//   GET    /hub/oauth/callback?code=...      -> token
//   POST   /hub/api/sessions                 {options} -> SessionRecord (201)
//   GET    /hub/api/sessions                 all for admins, own otherwise
//   GET    /hub/api/sessions/{id}
//   DELETE /hub/api/sessions/{id}
//   GET    /hub/api/quota                    caller's row
//   GET    /hub/api/routes                   (admin) version + routes
//   GET    /hub/api/status
//   admin: GET|POST /hub/api/admin/nodes, POST /hub/api/admin/nodes/{id}/{drain,kill,restore},
//          GET /hub/api/admin/quota, POST /hub/api/admin/apply, POST /hub/api/admin/scenario,
//          POST /hub/api/admin/clock, PUT|GET /hub/api/admin/files/{user}/{name}
class HubApi {
 public:
  explicit HubApi(deploy::Deployment& deployment) : d_(deployment) {}

  ApiResponse handle(const ApiRequest& request);

 private:
  ApiResponse route(const ApiRequest& request);
  const hub::UserAccount& caller(const ApiRequest& request) const;
  const hub::UserAccount& admin(const ApiRequest& request) const;
  ApiResponse admin_route(const ApiRequest& request, const std::vector<std::string>& parts);

  deploy::Deployment& d_;
};

}  // namespace hubgate::api
