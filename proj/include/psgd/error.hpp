#pragma once

#include <stdexcept>
#include <cstdint>
#include <string>

namespace psgd {

enum class ErrorKind {
    precondition,
    not_positive_definite,
    singular,
    numeric_fault,
    parse,
    config,
    io,
    checkpoint,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::precondition: return "precondition violation";
        case ErrorKind::not_positive_definite: return "not positive definite";
        case ErrorKind::singular: return "singular";
        case ErrorKind::numeric_fault: return "numeric fault";
        case ErrorKind::parse: return "parse error";
        case ErrorKind::config: return "configuration error";
        case ErrorKind::io: return "i/o error";
        case ErrorKind::checkpoint: return "checkpoint error";
    }
    return "error";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised by the optimizer when a gradient component is NaN or infinite.
class NumericFault : public Error {
public:
    NumericFault(std::uint64_t iteration, const std::string& what)
        : Error(ErrorKind::numeric_fault, what + " at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    std::uint64_t iteration() const noexcept { return iteration_; }

private:
    std::uint64_t iteration_;
};

inline void require(bool condition, const std::string& what,
                    ErrorKind kind = ErrorKind::precondition) {
    if (!condition) throw Error(kind, what);
}

} // namespace psgd
