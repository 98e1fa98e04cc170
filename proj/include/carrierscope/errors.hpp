#pragma once

#include <stdexcept>
#include <string>

namespace carrierscope {

// Error categories map 1:1 onto CLI exit codes: usage 2, I/O 3, validation 4.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace carrierscope
