#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "qdb/storage.hpp"
#include "qdb/types.hpp"
#include "qdb/wal/log_record.hpp"

namespace qdb::wal {

inline constexpr const char* kLogFileName = "wal.log";
inline constexpr const char* kCheckpointFileName = "checkpoint.qdbc";
inline constexpr const char* kCheckpointTempName = "checkpoint.qdbc.tmp";

struct LogScan {
    std::vector<LogRecord> records;
    // Length of the prefix made of a valid header and whole valid records.
    uint64_t valid_size = 0;
    bool torn_tail = false;
};

// Parses a log file image. A checksum failure followed by nothing that decodes
// as a COMMIT is a torn tail and is cut off; a damaged record with a valid
// COMMIT behind it throws kCorruptLog.
LogScan scan_log(std::string_view bytes);

struct RecoveredMessage {
    MessageId message_id = 0;
    int64_t priority = 0;
    std::string payload;
    uint64_t enqueue_seq = 0;

    bool operator==(const RecoveredMessage&) const = default;
};

struct RecoveredQueue {
    QueueDescriptor descriptor;
    // Keyed by message id; dequeue order is derived from (priority, enqueue_seq).
    std::map<MessageId, RecoveredMessage> messages;
};

// Committed state reconstructed from a checkpoint image and the log.
struct EngineState {
    Lsn checkpoint_lsn = 0;
    Lsn last_lsn = 0;
    TxnId next_txn_id = 1;
    MessageId next_message_id = 1;
    QueueId next_queue_id = 1;
    std::map<QueueId, RecoveredQueue> queues;

    uint64_t log_valid_size = 0;
    bool log_torn = false;
    std::size_t committed_transactions = 0;
    std::size_t discarded_transactions = 0;
};

struct CheckpointImage {
    Lsn lsn_at_checkpoint = 0;
    TxnId next_txn_id = 1;
    MessageId next_message_id = 1;
    QueueId next_queue_id = 1;
    std::vector<QueueDescriptor> queues;
    // (queue, message) pairs for durable queues only.
    std::vector<std::pair<QueueId, RecoveredMessage>> messages;
};

std::string encode_checkpoint(const CheckpointImage& image);
CheckpointImage decode_checkpoint(std::string_view bytes);

// Writes the image to a temporary file, syncs it and renames it into place.
void write_checkpoint(Storage& storage, const std::filesystem::path& dir,
                      const CheckpointImage& image);

// Replays `log` over the optional checkpoint image. Pure: touches no files.
EngineState replay(const CheckpointImage* image, const LogScan& log);

// Reads the checkpoint image and log from `dir` and replays them. Does not
// modify any file; the caller truncates the torn tail when it reopens the log.
EngineState recover(Storage& storage, const std::filesystem::path& dir);

}  // namespace qdb::wal
