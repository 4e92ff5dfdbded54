#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace qdb {

using Lsn = uint64_t;
using TxnId = uint64_t;
using QueueId = uint64_t;
using MessageId = uint64_t;

inline constexpr TxnId kNoTxn = 0;

enum class Durability : uint8_t { kDurable = 0, kVolatile = 1 };
enum class Ordering : uint8_t { kFifo = 0, kPriority = 1 };
enum class QueueState : uint8_t { kActive = 0, kStopped = 1, kBroken = 2 };

// Per-dequeue isolation. Wire encoding: 0 = READ_PAST, 1 = SERIALIZABLE.
enum class IsolationMode : uint8_t { kReadPastDequeue = 0, kSerializable = 1 };

enum class Visibility : uint8_t {
    kVisible = 0,
    kUncommittedInsert = 1,
    kUncommittedDelete = 2,
};

const char* to_string(Durability d);
const char* to_string(Ordering o);
const char* to_string(QueueState s);
const char* to_string(IsolationMode m);
const char* to_string(Visibility v);

std::optional<QueueState> parse_queue_state(std::string_view s);

struct QueueDescriptor {
    QueueId queue_id = 0;
    std::string name;
    Durability durability = Durability::kDurable;
    Ordering ordering = Ordering::kFifo;
    QueueState state = QueueState::kActive;
    Lsn created_lsn = 0;
};

// Payloads are opaque byte strings carried in std::string.
struct Message {
    MessageId message_id = 0;
    QueueId queue_id = 0;
    int64_t priority = 0;
    std::string payload;
    uint64_t enqueue_seq = 0;
    // Number of times a dequeue of this message was rolled back.
    uint32_t redeliveries = 0;
};

// How long a dequeue may wait for a message to become visible.
struct WaitSpec {
    std::chrono::milliseconds timeout{0};

    static WaitSpec no_wait() { return {}; }
    static WaitSpec wait(std::chrono::milliseconds t) { return {t}; }
    bool waits() const { return timeout.count() > 0; }
};

}  // namespace qdb
