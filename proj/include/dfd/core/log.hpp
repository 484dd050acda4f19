#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace dfd {

// Library-wide logger. Writes to stderr so that CLI stdout stays parseable.
inline spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto existing = spdlog::get("dfd");
    if (existing) return existing;
    auto created = spdlog::stderr_color_mt("dfd");
    created->set_pattern("[%l] %v");
    return created;
  }();
  return *logger;
}

}  // namespace dfd
