#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include "qdb/storage.hpp"
#include "qdb/wal/log_record.hpp"

namespace qdb::wal {

struct WalOptions {
    // A flush leader waits at most this long for committers that have appended
    // but not yet asked for a flush.
    std::chrono::microseconds group_commit_wait{1000};
    std::size_t group_commit_batch = 64;
};

struct BatchLsns {
    Lsn last_record = 0;     // lsn of the final record in the batch (0 when empty)
    Lsn first_reserved = 0;  // first of the reserved lsns (0 when none)
};

// Append-only redo log with group commit. Records live in an in-memory buffer
// until flush_through() writes and syncs them; the first flusher to arrive
// becomes the leader and writes everything buffered, so concurrent committers
// share one physical flush.
class Wal {
 public:
    // `valid_size` is the recovered length of the existing log (0 = start a new
    // log); bytes past it are a torn tail and are truncated.
    Wal(std::shared_ptr<Storage> storage, std::filesystem::path path, Lsn last_lsn,
        uint64_t valid_size, WalOptions options = {});
    ~Wal();

    Wal(const Wal&) = delete;
    Wal& operator=(const Wal&) = delete;

    Lsn append(LogRecord& rec);

    // Appends `records` contiguously (assigning their lsns) and reserves
    // `reserve` further lsns that are never written. A batch containing a COMMIT
    // counts towards group-commit pressure until it is flushed.
    BatchLsns append_batch(std::span<LogRecord> records, std::size_t reserve = 0);

    void flush_through(Lsn lsn);

    // Drops every record and restarts the file after a checkpoint image that
    // covers all lsns up to last_lsn() has been made durable.
    void reset_after_checkpoint();

    Lsn last_lsn() const;
    Lsn durable_lsn() const;
    uint64_t size_bytes() const;
    uint64_t physical_flushes() const;
    uint64_t records_appended() const;
    bool failed() const;

 private:
    void check_usable() const;
    void fail();

    std::shared_ptr<Storage> storage_;
    std::filesystem::path path_;
    WalOptions options_;
    std::unique_ptr<AppendFile> file_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::string buffer_;
    std::size_t buffered_commits_ = 0;
    std::size_t flush_waiters_ = 0;
    bool flushing_ = false;
    bool failed_ = false;
    Lsn last_lsn_ = 0;
    Lsn durable_lsn_ = 0;
    uint64_t file_size_ = 0;
    uint64_t physical_flushes_ = 0;
    uint64_t records_appended_ = 0;
};

}  // namespace qdb::wal
