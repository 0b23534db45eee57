#pragma once

#include <stdexcept>
#include <string>

namespace lego {

// Error categories map 1:1 onto process exit codes (see legoslam.h).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DatasetError : std::runtime_error {
  explicit DatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrackingLost : std::runtime_error {
  explicit TrackingLost(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lego
