#include <cstdlib>
#include <iostream>

#include "hubgate/cli.hpp"

int main(int argc, char** argv) {
  std::map<std::string, std::string> env;
  for (const char* key : {"HUBCTL_SERVER", "HUBCTL_TOKEN"}) {
    if (const char* v = std::getenv(key)) env[key] = v;
  }
  return hubgate::cli::run({argv + 1, argv + argc}, std::cout, std::cerr, env);
}
