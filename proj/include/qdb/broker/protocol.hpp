#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdb/bytes.hpp"
#include "qdb/error.hpp"
#include "qdb/types.hpp"

namespace qdb::broker {

/*
 * Frame: u32 body_len | body, body = u8 opcode | fields (little-endian).
 *
 * Requests                                   Success reply (same opcode)
 *   0x01 BEGIN                               u64 txn_id
 *   0x02 COMMIT  u64 txn                     -
 *   0x03 ABORT   u64 txn                     -
 *   0x10 ENQUEUE u64 txn|0, str16 queue,
 *                i64 priority, str32 payload u64 message_id
 *   0x11 DEQUEUE u64 txn|0, str16 queue,
 *                u8 isolation, u32 wait_ms   u8 found [u64 id, i64 priority,
 *                                            u64 enqueue_seq, u32 redeliveries, str32 payload]
 *   0x12 POLL    str16 queue, u8 include_dirty
 *                [u8 include_payload, u64 message_id|0]
 *                                            u32 count, per entry: u64 id, i64 priority,
 *                                            u8 visibility, u64 writer_txn, u64 enqueue_seq,
 *                                            u8 has_payload [str32 payload]
 *   0x20 STATS   str16 queue (empty = all)   str32 json report
 *   0x30 CREATE_QUEUE  str16 name, u8 durability, u8 ordering      u64 queue_id
 *   0x31 DESTROY_QUEUE u64 txn|0, str16 name                       -
 *   0x32 LIST                                u32 count, per queue: u64 id, str16 name,
 *                                            u8 durability, u8 ordering, u8 state
 *   0x40 POOL_CONTROL  str16 queue, u8 action, str32 settings      str32 json status
 *   0x41 POOL_STATUS   str16 queue (empty = all)                   str32 json
 *   0x50 CHECKPOINT                          u64 lsn
 *   0x7F ERROR   u16 code, str16 message     (reply only)
 *
 * POOL_CONTROL actions: 0 attach, 1 start, 2 stop, 3 redefine; settings are
 * "key=value" lines using the pool.* keys of the config file (without prefix).
 */
enum class Opcode : uint8_t {
    kBegin = 0x01,
    kCommit = 0x02,
    kAbort = 0x03,
    kEnqueue = 0x10,
    kDequeue = 0x11,
    kPoll = 0x12,
    kStats = 0x20,
    kCreateQueue = 0x30,
    kDestroyQueue = 0x31,
    kList = 0x32,
    kPoolControl = 0x40,
    kPoolStatus = 0x41,
    kCheckpoint = 0x50,
    kError = 0x7F,
};

enum class PoolAction : uint8_t { kAttach = 0, kStart = 1, kStop = 2, kRedefine = 3 };

inline constexpr uint32_t kMaxFrameBody = 8u << 20;

std::string error_body(uint16_t code, std::string_view message);
// Builds a frame (length prefix included) around `body`.
std::string frame(std::string_view body);

// Raised by the client when the broker answers with an ERROR frame.
ErrorCode error_from_wire(uint16_t code);

// Blocking socket helpers. read_frame returns nullopt on EOF or a reset
// connection and throws Error(kUsage) for a length above `max_body`.
bool write_all(int fd, std::string_view bytes);
std::optional<std::string> read_frame(int fd, uint32_t max_body = kMaxFrameBody);

struct Endpoint {
    std::string host = "127.0.0.1";
    uint16_t port = 0;
};
// "host:port" or ":port" or "port".
Endpoint parse_endpoint(const std::string& s);

}  // namespace qdb::broker
