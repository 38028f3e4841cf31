#include "stepforge/log.hpp"

#include <iostream>
#include <mutex>

namespace stepforge::log {

namespace {

std::mutex mu;
Sink current;

}  // namespace

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(mu);
  Sink previous = std::move(current);
  current = std::move(sink);
  return previous;
}

void warn(const std::string& message) {
  std::lock_guard lock(mu);
  if (current) {
    current(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace stepforge::log
