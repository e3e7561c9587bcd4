#pragma once

// Minimal structured logger writing "level=... msg=... key=value" lines to
// stderr. The threshold comes from CTXVEC_LOG (error|warn|info|debug).

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace ctxvec::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level level_from_env() {
  const char* env = std::getenv("CTXVEC_LOG");
  if (env == nullptr) return Level::Info;
  std::string_view v(env);
  if (v == "error") return Level::Error;
  if (v == "warn") return Level::Warn;
  if (v == "debug") return Level::Debug;
  return Level::Info;
}

inline Level& threshold() {
  static Level lvl = level_from_env();
  return lvl;
}

inline const char* name(Level l) {
  switch (l) {
    case Level::Error: return "error";
    case Level::Warn: return "warn";
    case Level::Info: return "info";
    case Level::Debug: return "debug";
  }
  return "info";
}

namespace detail {
inline void append(std::ostringstream&) {}

template <typename K, typename V, typename... Rest>
void append(std::ostringstream& os, const K& key, const V& value, const Rest&... rest) {
  os << ' ' << key << '=' << value;
  append(os, rest...);
}
}  // namespace detail

// Usage: log::write(Level::Info, "loaded scenes", "count", n, "dropped", k);
template <typename... KV>
void write(Level l, std::string_view msg, const KV&... kv) {
  if (static_cast<int>(l) > static_cast<int>(threshold())) return;
  std::ostringstream os;
  os << "level=" << name(l) << " msg=\"" << msg << '"';
  detail::append(os, kv...);
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << os.str() << '\n';
}

template <typename... KV>
void error(std::string_view msg, const KV&... kv) { write(Level::Error, msg, kv...); }
template <typename... KV>
void warn(std::string_view msg, const KV&... kv) { write(Level::Warn, msg, kv...); }
template <typename... KV>
void info(std::string_view msg, const KV&... kv) { write(Level::Info, msg, kv...); }
template <typename... KV>
void debug(std::string_view msg, const KV&... kv) { write(Level::Debug, msg, kv...); }

}  // namespace ctxvec::log
