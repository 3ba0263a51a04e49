#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qtrack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical invariant (trace, Hermiticity, positivity, normalization) failed.
class NumericalInvariantError : public Error {
public:
    using Error::Error;
};

/// Every particle weight vanished; the caller may reinitialize the ensemble.
class DegenerateEnsemble : public Error {
public:
    using Error::Error;
};

/// Config validation failure. Carries every violation found, not just the first.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) {
            out += "\n  - ";
            out += s;
        }
        return out;
    }

    std::vector<std::string> violations_;
};

}  // namespace qtrack
