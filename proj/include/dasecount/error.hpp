#pragma once

#include <stdexcept>
#include <string>

namespace dasecount {

/// Every failure the library reports carries a short machine-readable
/// category ("validation", "format", "io", ...) next to the message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& detail)
      : std::runtime_error(detail), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& d) : Error("validation", d) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& d) : Error("config", d) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& d) : Error("format", d) {}
};
struct CorruptionError : Error {
  explicit CorruptionError(const std::string& d) : Error("corruption", d) {}
};
struct IoError : Error {
  explicit IoError(const std::string& d) : Error("io", d) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& d) : Error("shape", d) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& d) : Error("training", d) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& d) : Error("divergence", d) {}
};
struct RangeError : Error {
  explicit RangeError(const std::string& d) : Error("range", d) {}
};

}  // namespace dasecount
