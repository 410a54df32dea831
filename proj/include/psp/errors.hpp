#pragma once

#include <stdexcept>
#include <string>

namespace psp {

/// Base error. Every failure mode carries a stable category tag so the CLI
/// can report machine-readable errors and map them to exit codes.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

/// Incompatible tensor shapes (e.g. matmul inner dimensions).
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

/// Invalid configuration: bad hyperparameter, non-integral conv output, ...
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

/// Problems with dataset contents (missing files, out-of-range labels, ...).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

/// Malformed binary container (IDX file, checkpoint).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

/// API contract violation (non-scalar objective, empty record, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

/// Operation asked to run on a network topology it does not support.
class UnsupportedTopologyError : public Error {
public:
    explicit UnsupportedTopologyError(const std::string& msg)
        : Error("unsupported-topology", msg) {}
};

/// Training produced a non-finite loss.
class DivergedError : public Error {
public:
    explicit DivergedError(const std::string& msg) : Error("diverged", msg) {}
};

}  // namespace psp
