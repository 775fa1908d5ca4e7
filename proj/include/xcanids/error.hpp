#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xcanids {

// Error taxonomy shared by every module. The CLI maps every Error subclass
// to exit 2 (bad input data); anything else escaping to main is an internal
// fault (exit 3).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input text. Carries a 1-based line number when the source is
// line oriented, 0 when it is not.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Well-formed input that violates a semantic contract: duplicate AID,
// out-of-range value, mismatched shapes, unknown signal name.
class DataError : public Error {
public:
    using Error::Error;
};

// Input that uses a feature we deliberately reject: multiplexed signals,
// extended arbitration ids, CAN FD payloads.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

}  // namespace xcanids
