#pragma once

#include <atomic>
#include <cstdio>
#include <string_view>

namespace unigrf {

inline std::atomic<bool>& warnings_enabled() {
  static std::atomic<bool> enabled{true};
  return enabled;
}

inline void warn(std::string_view message) {
  if (!warnings_enabled().load()) return;
  std::fprintf(stderr, "unigrf: warning: %.*s\n", static_cast<int>(message.size()), message.data());
}

}  // namespace unigrf
