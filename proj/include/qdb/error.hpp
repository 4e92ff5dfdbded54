#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qdb {

// Numeric values of the first six codes are the wire-protocol error codes.
enum class ErrorCode : uint16_t {
    kNotFound = 1,
    kAlreadyExists = 2,
    kUnavailable = 3,
    kTimeout = 4,
    kUsage = 5,
    kInternal = 6,
    kStaleTransaction = 7,
    kDeadlockTimeout = 8,
    kCorruptLog = 9,
    kIo = 10,
    // The operation failed and rolled back its transaction (e.g. a same-transaction trigger raised).
    kTransactionAborted = 11,
};

const char* to_string(ErrorCode code);

// Code reported on the wire for an engine error.
uint16_t wire_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

 private:
    ErrorCode code_;
};

// Raised by storage when a write, sync or rename fails (or is injected to fail).
class IoError : public Error {
 public:
    explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

}  // namespace qdb
