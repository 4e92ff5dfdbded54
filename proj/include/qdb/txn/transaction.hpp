#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "qdb/lockmgr/lock_manager.hpp"
#include "qdb/types.hpp"
#include "qdb/wal/wal.hpp"

namespace qdb {

enum class TxnState : uint8_t { kActive, kCommitting, kCommitted, kAborted };
const char* to_string(TxnState s);

// One pending queue-store mutation. Nothing reaches the log until commit.
struct Effect {
    enum class Kind : uint8_t { kInsert, kDelete, kCreateQueue, kDestroyQueue };

    Kind kind = Kind::kInsert;
    QueueId queue_id = 0;
    MessageId message_id = 0;
    int64_t priority = 0;
    std::string payload;
    bool durable = true;

    // kCreateQueue
    std::string queue_name;
    Durability durability = Durability::kDurable;
    Ordering ordering = Ordering::kFifo;

    // Assigned at commit: log lsn of the record (inserts use it as enqueue_seq).
    Lsn lsn = 0;
};

class Transaction {
 public:
    Transaction(TxnId id, std::string session) : id_(id), session_(std::move(session)) {}

    TxnId id() const { return id_; }
    TxnState state() const { return state_.load(); }
    const std::string& session() const { return session_; }

    const std::vector<Effect>& effects() const { return effects_; }
    std::vector<Effect>& effects() { return effects_; }
    void add_effect(Effect e) { effects_.push_back(std::move(e)); }

    // Work to run after the commit point, in registration order. Dropped on abort.
    void defer(std::function<void()> fn) { deferred_.push_back(std::move(fn)); }

    // Serializes operations driven through this handle.
    std::mutex& op_mutex() { return op_mu_; }

    int trigger_depth = 0;

 private:
    friend class TxnManager;

    TxnId id_;
    std::string session_;
    std::atomic<TxnState> state_{TxnState::kActive};
    std::vector<Effect> effects_;
    std::vector<std::function<void()>> deferred_;
    std::mutex op_mu_;
};

using TxnPtr = std::shared_ptr<Transaction>;

// Implemented by the queue store: makes committed effects visible and undoes
// provisional ones. Each returns the queues whose available count rose from zero.
class TxnParticipant {
 public:
    virtual ~TxnParticipant() = default;
    virtual std::vector<QueueId> apply_commit(Transaction& txn) = 0;
    virtual std::vector<QueueId> rollback(Transaction& txn) = 0;
};

struct TxnCounters {
    uint64_t begun = 0;
    uint64_t committed = 0;
    uint64_t aborted = 0;
    uint64_t logged_commits = 0;
};

// begin/commit/abort with strict two-phase locking and redo-only logging.
//
// Commit: append BEGIN, effects, COMMIT as one contiguous batch; flush
// (group commit); apply effects; release locks; run deferred work. The
// quiesce() gate is held shared from append to apply so a checkpoint never
// observes a commit that is logged but not yet applied.
class TxnManager {
 public:
    TxnManager(wal::Wal& wal, lock::LockManager& locks, TxnParticipant& participant, TxnId next_id);

    TxnPtr begin(std::string session = {});
    void commit(Transaction& txn);
    void abort(Transaction& txn);

    // Blocks new commits from logging until the returned lock is released.
    std::unique_lock<std::shared_mutex> quiesce();

    // Called once when a log failure puts the engine in the failed state.
    void set_failure_handler(std::function<void()> fn) { on_failure_ = std::move(fn); }
    void set_unavailable(bool v) { unavailable_ = v; }

    TxnId next_txn_id() const { return next_id_.load(); }
    TxnCounters counters() const;
    std::size_t active_count() const;

 private:
    void rollback_and_release(Transaction& txn);

    wal::Wal& wal_;
    lock::LockManager& locks_;
    TxnParticipant& participant_;
    std::atomic<TxnId> next_id_;
    std::atomic<bool> unavailable_{false};
    std::shared_mutex commit_gate_;
    std::function<void()> on_failure_;

    mutable std::mutex stats_mu_;
    TxnCounters counters_;
    std::size_t active_ = 0;
};

}  // namespace qdb
