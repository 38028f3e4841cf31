#pragma once

#include <functional>
#include <string>

namespace stepforge::log {

using Sink = std::function<void(const std::string&)>;

/// Replaces the warning sink (default: one line on standard error) and
/// returns the previous one. An empty sink restores the default.
Sink set_warning_sink(Sink sink);

void warn(const std::string& message);

}  // namespace stepforge::log
