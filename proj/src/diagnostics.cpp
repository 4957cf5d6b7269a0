#include "refdrop/diagnostics.hpp"

#include <iostream>
#include <mutex>
#include <set>

namespace refdrop {

namespace {

std::mutex& handler_mutex() {
  static std::mutex m;
  return m;
}

WarningHandler& current_handler() {
  static WarningHandler h;
  return h;
}

void default_warning(const std::string& message) {
  static std::set<std::string> seen;
  if (seen.insert(message).second) std::cerr << "warning: " << message << '\n';
}

}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(handler_mutex());
  return std::exchange(current_handler(), std::move(handler));
}

void warn(const std::string& message) {
  std::lock_guard lock(handler_mutex());
  if (current_handler()) {
    current_handler()(message);
  } else {
    default_warning(message);
  }
}

}  // namespace refdrop
