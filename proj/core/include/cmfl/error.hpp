#pragma once

#include <stdexcept>
#include <string>

namespace cmfl {

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed, missing or inconsistent data on disk or in memory (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while training or evaluating (CLI exit code 4).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cmfl
