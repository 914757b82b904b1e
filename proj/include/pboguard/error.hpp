#pragma once

#include <stdexcept>
#include <string>

namespace pboguard {

// Malformed or inconsistent input data (CSV contents, ragged trial coverage,
// missing CVIX values). The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad experiment configuration. The CLI maps this to exit code 1, together
// with std::invalid_argument raised on violated preconditions.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pboguard
