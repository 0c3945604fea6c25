#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hubgate/api.hpp"

namespace hubgate::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kDefaultServer = "http://127.0.0.1:8081";

// One API round trip. Transport failures surface as BackendUnreachable.
using HttpCall = std::function<api::ApiResponse(const std::string& server, const api::ApiRequest& request)>;

// Plain HTTP (or HTTPS when built with TLS) against the server URL.
api::ApiResponse http_call(const std::string& server, const api::ApiRequest& request);

// hubctl entry point. args excludes the program name. Returns 0 on success, 1
// on a domain error (the error name is printed verbatim), 2 on a usage error.
// HUBCTL_SERVER / HUBCTL_TOKEN from env fill in --server / --token.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::map<std::string, std::string>& env = {}, const HttpCall& call = http_call);

}  // namespace hubgate::cli
