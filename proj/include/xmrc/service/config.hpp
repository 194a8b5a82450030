#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmrc/error.hpp"

namespace xmrc::service {

/// A login account. Either a clear password (hashed at startup and then
/// dropped) or a libsodium password hash string.
struct Account {
  std::string username;
  std::string password;
  std::string password_hash;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "xmrc-data";
  std::size_t workers = 2;
  std::vector<Account> accounts{{"EMBC", "EMBC2021", ""}};
  std::size_t max_upload_bytes = std::size_t{256} << 20;
  std::chrono::seconds token_ttl{24 * 3600};
  std::chrono::milliseconds lease_timeout{60'000};
  std::filesystem::path ui_dir;  // empty: /ui not mounted
};

/// Keys mirror the struct fields; token_ttl is in seconds, lease_timeout in
/// milliseconds. Missing keys keep their defaults, unknown keys are rejected.
inline ServiceConfig parse_config(const nlohmann::json& j) {
  ServiceConfig c;
  if (!j.is_object()) raise(Errc::InvalidParams, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "host") {
        c.host = v.get<std::string>();
      } else if (key == "port") {
        c.port = v.get<int>();
      } else if (key == "data_dir") {
        c.data_dir = v.get<std::string>();
      } else if (key == "workers") {
        c.workers = v.get<std::size_t>();
      } else if (key == "max_upload_bytes") {
        c.max_upload_bytes = v.get<std::size_t>();
      } else if (key == "token_ttl") {
        c.token_ttl = std::chrono::seconds(v.get<std::int64_t>());
      } else if (key == "lease_timeout") {
        c.lease_timeout = std::chrono::milliseconds(v.get<std::int64_t>());
      } else if (key == "ui_dir") {
        c.ui_dir = v.get<std::string>();
      } else if (key == "accounts") {
        c.accounts.clear();
        for (const auto& a : v) {
          c.accounts.push_back({a.at("username").get<std::string>(), a.value("password", std::string{}),
                                a.value("password_hash", std::string{})});
        }
      } else {
        raise(Errc::InvalidParams, "unknown config key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::InvalidParams, std::string("bad config value: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) raise(Errc::InvalidParams, "port out of range");
  if (c.workers < 1) raise(Errc::InvalidParams, "workers must be >= 1");
  if (c.accounts.empty()) raise(Errc::InvalidParams, "at least one account is required");
  for (const auto& a : c.accounts) {
    if (a.username.empty() || (a.password.empty() && a.password_hash.empty())) {
      raise(Errc::InvalidParams, "account needs a username and a password or password_hash");
    }
  }
  return c;
}

inline ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::Io, "cannot open config " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(Errc::InvalidParams, "config is not valid JSON: " + path.string());
  return parse_config(j);
}

}  // namespace xmrc::service
