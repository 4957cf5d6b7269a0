#pragma once

#include <functional>
#include <string>

namespace refdrop {

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink and returns the previous one.
/// Passing an empty handler restores the default, which writes each distinct
/// message to stderr once.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(const std::string& message);

}  // namespace refdrop
