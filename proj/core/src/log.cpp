#include "mhad/log.hpp"

#include <iostream>
#include <mutex>

namespace mhad {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink() {
  static WarningSink s = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}

}  // namespace

WarningSink set_warning_sink(WarningSink next) {
  std::lock_guard lock(sink_mutex());
  auto prev = std::move(sink());
  sink() = std::move(next);
  return prev;
}

void warn(std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(message);
}

}  // namespace mhad
