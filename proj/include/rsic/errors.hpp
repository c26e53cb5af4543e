#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rsic {

// Invalid or inconsistent configuration (unknown backbone, bad head count, ...).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite activation or loss.
class NumericError : public std::runtime_error {
  public:
    NumericError(const std::string& where, std::size_t layer)
        : std::runtime_error("non-finite values in " + where + " layer " + std::to_string(layer)), layer_(layer) {}
    explicit NumericError(const std::string& message) : std::runtime_error(message) {}

    std::size_t layer() const { return layer_; }

  private:
    std::size_t layer_ = 0;
};

}  // namespace rsic
