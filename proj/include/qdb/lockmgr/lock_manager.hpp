#pragma once

/*
 * Record- and queue-granularity lock manager.
 *
 * Two modes (S, X) with the usual matrix:
 *
 *          | S | X |
 *       S  | Y | N |
 *       X  | N | N |
 *
 * and four ways to ask for a lock:
 *   WAIT          block (FIFO) until compatible or the deadline passes
 *   READ_PAST     grant if compatible right now, otherwise report Skipped; never queues
 *   READ_THROUGH  S only; takes no lock, reports the current X holder (dirty writer)
 *   NOTIFY        QUEUE_HEAD only; waits for the next state-change signal on the queue
 */

#include <chrono>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qdb/clock.hpp"
#include "qdb/types.hpp"

namespace qdb::lock {

enum class ResourceKind : uint8_t { kQueueHead = 0, kRecord = 1, kCatalog = 2 };

struct ResourceId {
    ResourceKind kind = ResourceKind::kRecord;
    QueueId queue_id = 0;
    MessageId message_id = 0;  // RECORD only

    static ResourceId queue_head(QueueId q) { return {ResourceKind::kQueueHead, q, 0}; }
    static ResourceId record(QueueId q, MessageId m) { return {ResourceKind::kRecord, q, m}; }
    static ResourceId catalog(QueueId q) { return {ResourceKind::kCatalog, q, 0}; }

    auto operator<=>(const ResourceId&) const = default;
    std::string to_string() const;
};

enum class LockMode : uint8_t { kShared = 0, kExclusive = 1 };
enum class AccessVariant : uint8_t { kWait = 0, kReadPast = 1, kReadThrough = 2, kNotify = 3 };

constexpr bool compatible(LockMode held, LockMode requested) {
    return held == LockMode::kShared && requested == LockMode::kShared;
}

const char* to_string(LockMode m);
const char* to_string(AccessVariant v);

enum class AcquireStatus { kGranted, kSkipped, kDirtyGranted, kTimedOut };
const char* to_string(AcquireStatus s);

struct AcquireResult {
    AcquireStatus status = AcquireStatus::kGranted;
    // READ_THROUGH: the transaction holding X on the resource, kNoTxn if none.
    TxnId dirty_writer = kNoTxn;
};

enum class NotifyReason : uint8_t { kNonEmpty = 0, kDestroyed = 1, kStopped = 2 };
const char* to_string(NotifyReason r);

// Edge-triggered notification channel for one queue. Consumers snapshot
// sequence(), re-inspect the queue, then wait_beyond(snapshot); spurious
// wake-ups are possible, lost transitions are not.
class Subscription {
 public:
    Subscription(std::string session, QueueId queue) : session_(std::move(session)), queue_(queue) {}

    uint64_t sequence() const;
    NotifyReason last_reason() const;
    // True once sequence() > seen; false on timeout.
    bool wait_beyond(uint64_t seen, Duration timeout) const;

    const std::string& session() const { return session_; }
    QueueId queue() const { return queue_; }

    void deliver(NotifyReason reason);

 private:
    std::string session_;
    QueueId queue_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    uint64_t seq_ = 0;
    NotifyReason reason_ = NotifyReason::kNonEmpty;
};

struct LockEvent {
    enum class Kind { kGranted, kSkipped, kWaitEnqueued, kTimedOut, kDirtyRead, kReleased };
    Kind kind;
    TxnId txn;
    ResourceId resource;
    LockMode mode;
    AccessVariant variant;
};

struct LockTableSummary {
    std::size_t resources = 0;
    std::size_t holders = 0;
    std::size_t waiters = 0;
    std::size_t subscribers = 0;
    uint64_t total_waits = 0;
    uint64_t total_timeouts = 0;
};

class LockManager {
 public:
    LockManager(std::shared_ptr<Clock> clock, Duration default_timeout);
    ~LockManager();

    LockManager(const LockManager&) = delete;
    LockManager& operator=(const LockManager&) = delete;

    // A transaction must be registered before acquiring; release_all ends it.
    void register_txn(TxnId txn);

    // Throws kStaleTransaction for unregistered txns, kUsage for invalid
    // mode/variant pairs and kDeadlockTimeout once the txn is a timeout victim.
    AcquireResult acquire(TxnId txn, const ResourceId& resource, LockMode mode,
                          AccessVariant variant, std::optional<Duration> timeout = std::nullopt);

    // Releases everything `txn` holds, grants newly compatible waiters in FIFO
    // order, then signals subscribers of each queue in `became_nonempty`.
    void release_all(TxnId txn, std::span<const QueueId> became_nonempty = {});

    std::shared_ptr<Subscription> subscribe_notify(std::string session, QueueId queue);
    void signal(QueueId queue, NotifyReason reason);

    // Removes waiters past their deadline and marks their txns abort-required.
    std::vector<TxnId> detect_timeout_victims();

    bool abort_required(TxnId txn) const;
    bool is_registered(TxnId txn) const;
    std::vector<std::pair<TxnId, LockMode>> holders(const ResourceId& resource) const;
    std::size_t waiter_count(const ResourceId& resource) const;

    // Returns a description of every invariant violation found; empty when sound.
    std::vector<std::string> audit() const;
    // One line per resource: resource, holders with modes, waiters in order.
    std::string dump() const;
    LockTableSummary summary() const;
    uint64_t lock_waits(QueueId queue) const;

    void set_observer(std::function<void(const LockEvent&)> observer);
    Duration default_timeout() const { return default_timeout_; }

 private:
    struct Waiter {
        TxnId txn;
        LockMode mode;
        TimePoint deadline;
        bool granted = false;
        bool victim = false;
    };
    struct Entry {
        std::vector<std::pair<TxnId, LockMode>> holders;
        std::list<std::shared_ptr<Waiter>> waiters;
    };
    struct TxnLocks {
        std::vector<ResourceId> held;
        bool abort_required = false;
    };

    bool compatible_with_others(const Entry& e, TxnId txn, LockMode mode) const;
    void grant(Entry& e, const ResourceId& r, TxnId txn, LockMode mode);
    void grant_waiters(Entry& e, const ResourceId& r);
    void emit(LockEvent::Kind kind, TxnId txn, const ResourceId& r, LockMode m, AccessVariant v);
    AcquireResult wait_for_notify(const ResourceId& resource, Duration timeout);

    std::shared_ptr<Clock> clock_;
    Duration default_timeout_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<ResourceId, Entry> table_;
    std::unordered_map<TxnId, TxnLocks> txns_;
    std::unordered_map<QueueId, uint64_t> waits_by_queue_;
    uint64_t total_waits_ = 0;
    uint64_t total_timeouts_ = 0;
    std::function<void(const LockEvent&)> observer_;

    mutable std::mutex sub_mu_;
    std::unordered_map<QueueId, std::vector<std::weak_ptr<Subscription>>> subscribers_;
};

}  // namespace qdb::lock
