#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace noisehgnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
   public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. log of a non-positive value).
class DomainError : public Error {
   public:
    using Error::Error;
};

/// Caller broke an API contract (non-scalar loss, stale tensor handle, double backward, ...).
class ContractError : public Error {
   public:
    using Error::Error;
};

/// A metapath does not compose with the graph's edge-type signatures.
class SpecError : public Error {
   public:
    using Error::Error;
};

/// Malformed input data. `line()` is 0 when the problem is not tied to a line.
class ParseError : public Error {
   public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what), file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

   private:
    std::string file_;
    std::size_t line_;
};

/// Invalid experiment configuration; `field()` is a dotted path into the config document.
class ConfigError : public Error {
   public:
    ConfigError(const std::string& field, const std::string& what) : Error(field + ": " + what), field_(field) {}

    const std::string& field() const noexcept { return field_; }

   private:
    std::string field_;
};

/// A loss component became non-finite during training.
class DivergenceError : public Error {
   public:
    DivergenceError(int epoch, const std::string& component)
        : Error("non-finite " + component + " at epoch " + std::to_string(epoch)), epoch_(epoch), component_(component) {}

    int epoch() const noexcept { return epoch_; }
    const std::string& component() const noexcept { return component_; }

   private:
    int epoch_;
    std::string component_;
};

}  // namespace noisehgnn
