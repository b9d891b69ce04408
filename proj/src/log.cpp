#include "vlo/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

#include <cstdlib>
#include <memory>
#include <string>

namespace vlo {

namespace {

spdlog::level::level_enum level_from_env() {
  const char* raw = std::getenv("VLO_LOG");
  if (!raw) return spdlog::level::info;
  const std::string s(raw);
  if (s == "trace") return spdlog::level::trace;
  if (s == "debug") return spdlog::level::debug;
  if (s == "info") return spdlog::level::info;
  if (s == "warn" || s == "warning") return spdlog::level::warn;
  if (s == "error") return spdlog::level::err;
  if (s == "off") return spdlog::level::off;
  return spdlog::level::info;
}

}  // namespace

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_color_mt("vlo");
    l->set_level(level_from_env());
    return l;
  }();
  return *logger;
}

}  // namespace vlo
