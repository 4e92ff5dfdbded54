#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdb/types.hpp"

namespace qdb::wal {

/*
 * On-disk framing shared by the log ("QDBL") and checkpoint images ("QDBC"):
 *
 *   header : magic[4] | u32 format version
 *   record : u32 body_len | body[body_len] | u32 crc32(body)
 *   body   : u64 lsn | u64 txn_id | u8 kind | kind-specific fields
 *
 * Kind-specific fields (all little-endian, byte strings u32-length-prefixed):
 *   INSERT        u64 queue_id | u64 message_id | i64 priority | str payload
 *   DELETE        u64 queue_id | u64 message_id
 *   CREATE_QUEUE  u64 queue_id | str name | u8 durability | u8 ordering
 *   DESTROY_QUEUE u64 queue_id
 *   CHECKPOINT    u64 checkpoint_lsn | u64 next_txn_id | u64 next_message_id | u64 next_queue_id
 *   BEGIN, COMMIT, ABORT carry nothing.
 */

inline constexpr char kLogMagic[4] = {'Q', 'D', 'B', 'L'};
inline constexpr char kCheckpointMagic[4] = {'Q', 'D', 'B', 'C'};
inline constexpr uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 8;

enum class RecordKind : uint8_t {
    kBegin = 1,
    kInsert = 2,
    kDelete = 3,
    kCommit = 4,
    kAbort = 5,
    kCheckpoint = 6,
    kCreateQueue = 7,
    kDestroyQueue = 8,
};

const char* to_string(RecordKind kind);

struct LogRecord {
    Lsn lsn = 0;
    TxnId txn_id = 0;
    RecordKind kind = RecordKind::kBegin;

    QueueId queue_id = 0;
    MessageId message_id = 0;
    int64_t priority = 0;
    std::string payload;

    // CREATE_QUEUE
    std::string queue_name;
    Durability durability = Durability::kDurable;
    Ordering ordering = Ordering::kFifo;

    // CHECKPOINT
    Lsn checkpoint_lsn = 0;
    TxnId next_txn_id = 0;
    MessageId next_message_id = 0;
    QueueId next_queue_id = 0;

    static LogRecord begin(TxnId txn);
    static LogRecord commit(TxnId txn);
    static LogRecord abort(TxnId txn);
    static LogRecord insert(TxnId txn, QueueId q, MessageId m, int64_t priority, std::string payload);
    static LogRecord erase(TxnId txn, QueueId q, MessageId m);
    static LogRecord create_queue(TxnId txn, QueueId q, std::string name, Durability d, Ordering o);
    static LogRecord destroy_queue(TxnId txn, QueueId q);

    bool operator==(const LogRecord&) const = default;
};

uint32_t crc32(std::string_view data);

std::string file_header(const char (&magic)[4]);

// Appends one framed record to `out`.
void encode_record(const LogRecord& rec, std::string& out);

// Decodes a record body (without length prefix and crc). nullopt when malformed.
std::optional<LogRecord> decode_body(std::string_view body);

enum class FrameStatus { kOk, kTruncated, kBadChecksum, kMalformed };

struct Frame {
    FrameStatus status = FrameStatus::kTruncated;
    LogRecord record;
    // Bytes consumed by the frame when the length prefix was readable.
    std::size_t frame_size = 0;
};

// Reads the frame at the start of `data`.
Frame read_frame(std::string_view data);

}  // namespace qdb::wal
