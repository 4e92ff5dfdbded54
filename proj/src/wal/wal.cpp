#include "qdb/wal/wal.hpp"

#include "qdb/error.hpp"

namespace qdb::wal {

Wal::Wal(std::shared_ptr<Storage> storage, std::filesystem::path path, Lsn last_lsn,
         uint64_t valid_size, WalOptions options)
    : storage_(std::move(storage)), path_(std::move(path)), options_(options),
      last_lsn_(last_lsn), durable_lsn_(last_lsn) {
    file_ = storage_->open_append(path_, valid_size == 0);
    if (valid_size == 0) {
        std::string header = file_header(kLogMagic);
        file_->append(std::as_bytes(std::span(header)));
        file_->sync();
    } else if (file_->size() > valid_size) {
        file_->truncate(valid_size);
    }
    file_size_ = file_->size();
}

Wal::~Wal() = default;

void Wal::check_usable() const {
    if (failed_) throw Error(ErrorCode::kUnavailable, "log is in failed state");
}

void Wal::fail() {
    failed_ = true;
    buffer_.clear();
    cv_.notify_all();
}

Lsn Wal::append(LogRecord& rec) {
    return append_batch(std::span(&rec, 1)).last_record;
}

BatchLsns Wal::append_batch(std::span<LogRecord> records, std::size_t reserve) {
    std::lock_guard lk(mu_);
    check_usable();
    BatchLsns out;
    bool has_commit = false;
    for (auto& rec : records) {
        rec.lsn = ++last_lsn_;
        encode_record(rec, buffer_);
        has_commit = has_commit || rec.kind == RecordKind::kCommit;
        out.last_record = rec.lsn;
    }
    records_appended_ += records.size();
    if (reserve > 0) {
        out.first_reserved = last_lsn_ + 1;
        last_lsn_ += reserve;
    }
    if (has_commit) ++buffered_commits_;
    return out;
}

void Wal::flush_through(Lsn lsn) {
    std::unique_lock lk(mu_);
    if (durable_lsn_ >= lsn) return;
    check_usable();
    ++flush_waiters_;
    struct WaiterGuard {
        std::size_t& n;
        ~WaiterGuard() { --n; }
    } guard{flush_waiters_};

    while (durable_lsn_ < lsn) {
        check_usable();
        if (flushing_) {
            cv_.wait(lk);
            continue;
        }
        // Leader. Give committers that appended but have not reached
        // flush_through yet a bounded chance to join this flush.
        auto deadline = std::chrono::steady_clock::now() + options_.group_commit_wait;
        while (buffered_commits_ > flush_waiters_ && flush_waiters_ < options_.group_commit_batch &&
               !flushing_ && !failed_) {
            if (cv_.wait_until(lk, deadline) == std::cv_status::timeout) break;
        }
        if (flushing_) continue;
        check_usable();

        flushing_ = true;
        std::string batch;
        batch.swap(buffer_);
        Lsn upto = last_lsn_;
        buffered_commits_ = 0;
        lk.unlock();
        try {
            if (!batch.empty()) {
                file_->append(std::as_bytes(std::span(batch)));
                file_->sync();
            }
        } catch (const IoError&) {
            lk.lock();
            flushing_ = false;
            fail();
            throw;
        }
        lk.lock();
        flushing_ = false;
        durable_lsn_ = std::max(durable_lsn_, upto);
        if (!batch.empty()) {
            ++physical_flushes_;
            file_size_ += batch.size();
        }
        cv_.notify_all();
    }
}

void Wal::reset_after_checkpoint() {
    std::lock_guard lk(mu_);
    check_usable();
    try {
        file_->truncate(kHeaderSize);
    } catch (const IoError&) {
        fail();
        throw;
    }
    buffer_.clear();
    buffered_commits_ = 0;
    durable_lsn_ = last_lsn_;
    file_size_ = kHeaderSize;
}

Lsn Wal::last_lsn() const {
    std::lock_guard lk(mu_);
    return last_lsn_;
}

Lsn Wal::durable_lsn() const {
    std::lock_guard lk(mu_);
    return durable_lsn_;
}

uint64_t Wal::size_bytes() const {
    std::lock_guard lk(mu_);
    return file_size_ + buffer_.size();
}

uint64_t Wal::physical_flushes() const {
    std::lock_guard lk(mu_);
    return physical_flushes_;
}

uint64_t Wal::records_appended() const {
    std::lock_guard lk(mu_);
    return records_appended_;
}

bool Wal::failed() const {
    std::lock_guard lk(mu_);
    return failed_;
}

}  // namespace qdb::wal
