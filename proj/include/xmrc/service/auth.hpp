#pragma once

#include <sodium.h>

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "xmrc/error.hpp"
#include "xmrc/service/config.hpp"

namespace xmrc::service {

using Clock = std::function<std::chrono::system_clock::time_point()>;

inline Clock system_clock() {
  return [] { return std::chrono::system_clock::now(); };
}

namespace detail {

inline void sodium_ready() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

/// n random bytes, lowercase hex.
inline std::string random_hex(std::size_t n) {
  sodium_ready();
  std::vector<unsigned char> buf(n);
  randombytes_buf(buf.data(), n);
  std::string hex(2 * n + 1, '\0');
  sodium_bin2hex(hex.data(), hex.size(), buf.data(), n);
  hex.pop_back();
  return hex;
}

}  // namespace detail

inline std::string hash_password(const std::string& password) {
  detail::sodium_ready();
  char out[crypto_pwhash_STRBYTES];
  if (crypto_pwhash_str(out, password.data(), password.size(), crypto_pwhash_OPSLIMIT_INTERACTIVE,
                        crypto_pwhash_MEMLIMIT_INTERACTIVE) != 0) {
    throw std::runtime_error("password hashing ran out of memory");
  }
  return out;
}

/// Bearer tokens are 128-bit random values held in memory with an expiry.
class Authenticator {
 public:
  Authenticator(const std::vector<Account>& accounts, std::chrono::seconds ttl, Clock clock)
      : ttl_(ttl), clock_(std::move(clock)) {
    for (const auto& a : accounts) {
      hashes_[a.username] = a.password_hash.empty() ? hash_password(a.password) : a.password_hash;
    }
  }

  struct Token {
    std::string value;
    std::chrono::system_clock::time_point expires;
  };

  Token login(const std::string& username, const std::string& password) {
    const auto it = hashes_.find(username);
    // Same message for unknown user and wrong password.
    if (it == hashes_.end() ||
        crypto_pwhash_str_verify(it->second.c_str(), password.data(), password.size()) != 0) {
      raise(Errc::Unauthorized, "invalid credentials");
    }
    Token t{detail::random_hex(16), clock_() + ttl_};
    std::lock_guard lock(mu_);
    purge_expired();
    tokens_[t.value] = {username, t.expires};
    return t;
  }

  /// Account name behind a live token.
  std::string authenticate(const std::string& token) {
    std::lock_guard lock(mu_);
    const auto it = tokens_.find(token);
    if (it == tokens_.end()) raise(Errc::Unauthorized, "missing or invalid token");
    if (clock_() >= it->second.expires) {
      tokens_.erase(it);
      raise(Errc::Unauthorized, "token expired");
    }
    return it->second.username;
  }

 private:
  struct Session {
    std::string username;
    std::chrono::system_clock::time_point expires;
  };

  void purge_expired() {
    const auto now = clock_();
    std::erase_if(tokens_, [&](const auto& kv) { return now >= kv.second.expires; });
  }

  std::map<std::string, std::string> hashes_;
  std::chrono::seconds ttl_;
  Clock clock_;
  std::mutex mu_;
  std::map<std::string, Session> tokens_;
};

}  // namespace xmrc::service
