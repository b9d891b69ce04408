#pragma once

#include <spdlog/spdlog.h>

namespace vlo {

// Global stderr logger. Level is taken from the VLO_LOG environment variable
// (trace|debug|info|warn|error|off), default info. Created lazily so library
// users never have to initialize anything. stdout stays reserved for command
// output.
spdlog::logger& log();

}  // namespace vlo
