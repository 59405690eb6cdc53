#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pvp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A hyperparameter or argument is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A caller violated a documented precondition (non-scalar loss, empty label set, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Tensor extents do not fit the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed user input (missing EOS, unknown class, bad CSV cell).
class InputError : public Error {
public:
    using Error::Error;
};

/// A binary file is malformed. Carries the byte offset where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// A checkpoint was produced against different frozen encoders.
class IncompatibleError : public Error {
public:
    using Error::Error;
};

/// Network failure talking to an LLM endpoint. Retryable.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace pvp
