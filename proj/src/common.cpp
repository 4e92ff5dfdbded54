#include "qdb/bytes.hpp"
#include "qdb/clock.hpp"
#include "qdb/error.hpp"
#include "qdb/types.hpp"

namespace qdb {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::kNotFound: return "not-found";
        case ErrorCode::kAlreadyExists: return "already-exists";
        case ErrorCode::kUnavailable: return "unavailable";
        case ErrorCode::kTimeout: return "timeout";
        case ErrorCode::kUsage: return "usage";
        case ErrorCode::kInternal: return "internal";
        case ErrorCode::kStaleTransaction: return "stale-transaction";
        case ErrorCode::kDeadlockTimeout: return "deadlock-timeout";
        case ErrorCode::kCorruptLog: return "corrupt-log";
        case ErrorCode::kIo: return "io-failure";
        case ErrorCode::kTransactionAborted: return "transaction-aborted";
    }
    return "unknown";
}

uint16_t wire_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::kNotFound:
        case ErrorCode::kAlreadyExists:
        case ErrorCode::kUnavailable:
        case ErrorCode::kTimeout:
        case ErrorCode::kUsage:
        case ErrorCode::kInternal:
            return static_cast<uint16_t>(code);
        case ErrorCode::kStaleTransaction: return 5;
        case ErrorCode::kDeadlockTimeout: return 4;
        case ErrorCode::kIo: return 3;
        case ErrorCode::kCorruptLog: return 6;
        case ErrorCode::kTransactionAborted: return 6;
    }
    return 6;
}

const char* to_string(Durability d) { return d == Durability::kDurable ? "durable" : "volatile"; }
const char* to_string(Ordering o) { return o == Ordering::kFifo ? "fifo" : "priority"; }

const char* to_string(QueueState s) {
    switch (s) {
        case QueueState::kActive: return "ACTIVE";
        case QueueState::kStopped: return "STOPPED";
        case QueueState::kBroken: return "BROKEN";
    }
    return "?";
}

std::optional<QueueState> parse_queue_state(std::string_view s) {
    if (s == "ACTIVE") return QueueState::kActive;
    if (s == "STOPPED") return QueueState::kStopped;
    if (s == "BROKEN") return QueueState::kBroken;
    return std::nullopt;
}

const char* to_string(IsolationMode m) {
    return m == IsolationMode::kSerializable ? "serializable" : "read_past";
}

const char* to_string(Visibility v) {
    switch (v) {
        case Visibility::kVisible: return "VISIBLE";
        case Visibility::kUncommittedInsert: return "UNCOMMITTED_INSERT";
        case Visibility::kUncommittedDelete: return "UNCOMMITTED_DELETE";
    }
    return "?";
}

std::shared_ptr<Clock> default_clock() {
    static auto clock = std::make_shared<SteadyClock>();
    return clock;
}

std::string to_hex(std::string_view bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out.push_back(kDigits[c >> 4]);
        out.push_back(kDigits[c & 0xf]);
    }
    return out;
}

std::optional<std::string> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = nibble(hex[i]);
        int lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<char>((hi << 4) | lo));
    }
    return out;
}

}  // namespace qdb
