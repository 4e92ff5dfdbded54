#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "qdb/clock.hpp"
#include "qdb/lockmgr/lock_manager.hpp"
#include "qdb/storage.hpp"
#include "qdb/txn/transaction.hpp"
#include "qdb/types.hpp"
#include "qdb/wal/recovery.hpp"
#include "qdb/wal/wal.hpp"

namespace qdb {

namespace triggers {
class TriggerRegistry;
}
namespace pool {
class Executor;
class PoolManager;
struct PoolOptions;
}  // namespace pool

struct EngineOptions {
    std::filesystem::path data_dir;
    // Defaults to PosixStorage honouring `sync`.
    std::shared_ptr<Storage> storage;
    bool sync = true;
    // Defaults to the steady clock.
    std::shared_ptr<Clock> clock;
    wal::WalOptions wal;
    Duration lock_timeout = std::chrono::seconds(5);
    std::size_t max_payload = 1u << 20;
    uint64_t checkpoint_threshold = 64ull << 20;
    bool checkpoint_on_close = true;
    std::size_t executor_threads = 2;
    // Pool scaling ticks run on a background thread unless disabled.
    bool pool_auto_tick = true;
    Duration pool_tick_interval = std::chrono::milliseconds(100);
};

struct PollFilter {
    std::optional<MessageId> message_id;

    static PollFilter all() { return {}; }
    static PollFilter by_id(MessageId m) { return {m}; }
};

struct PollOptions {
    bool include_dirty = false;
    // Payloads of committed entries (VISIBLE, UNCOMMITTED_DELETE).
    bool include_payload = false;
    // Payloads of other transactions' uncommitted inserts as well.
    bool unsafe_dirty_payload = false;
};

struct PollEntry {
    MessageId message_id = 0;
    int64_t priority = 0;
    Visibility visibility = Visibility::kVisible;
    TxnId writer_txn = kNoTxn;
    uint64_t enqueue_seq = 0;
    uint32_t redeliveries = 0;
    std::optional<std::string> payload;
};

struct QueueStats {
    QueueDescriptor descriptor;
    uint64_t depth_visible = 0;
    uint64_t depth_dirty = 0;
    uint64_t enqueue_count = 0;
    uint64_t dequeue_count = 0;
    uint64_t lock_waits = 0;
};

struct CheckpointInfo {
    Lsn lsn = 0;
    std::size_t queues = 0;
    std::size_t messages = 0;
};

// Committed contents of every queue, for state comparison in tests and tools.
struct EngineSnapshot {
    struct Queue {
        std::string name;
        Durability durability = Durability::kDurable;
        Ordering ordering = Ordering::kFifo;
        // Dequeue order.
        std::vector<std::tuple<MessageId, int64_t, std::string>> messages;

        bool operator==(const Queue&) const = default;
    };
    std::vector<Queue> queues;  // sorted by name

    bool operator==(const EngineSnapshot&) const = default;
    uint64_t hash() const;
};

// The queue store: queues as a database class with create / enqueue /
// dequeue / poll / destroy over the transactional substrate.
class Engine final : private TxnParticipant {
 public:
    static std::unique_ptr<Engine> open(EngineOptions options);

    // Destroying without close() behaves like a crash after the last flush.
    ~Engine() override;

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    // Clean shutdown: stops pools, drains trigger work and checkpoints.
    void close();

    TxnPtr begin(std::string session = {});
    void commit(Transaction& txn);
    void abort(Transaction& txn);

    // Auto-committed catalog change; CREATE_QUEUE is logged for every durability.
    QueueDescriptor create_queue(const std::string& name, Durability durability, Ordering ordering);
    void destroy_queue(Transaction& txn, const std::string& name);
    void destroy_queue(const std::string& name);

    MessageId enqueue(Transaction& txn, const std::string& queue, int64_t priority, std::string payload);
    std::optional<Message> dequeue(Transaction& txn, const std::string& queue, IsolationMode isolation,
                                   WaitSpec wait = WaitSpec::no_wait());
    // Takes one specific visible message, skipping (not waiting) if it is locked.
    std::optional<Message> dequeue_by_id(Transaction& txn, const std::string& queue, MessageId id);

    std::vector<PollEntry> poll(const std::string& queue, PollFilter filter = PollFilter::all(),
                                PollOptions options = {});
    QueueStats stats(const std::string& queue);
    std::vector<QueueDescriptor> list_queues();
    std::optional<QueueDescriptor> find_queue(const std::string& name);
    void set_queue_state(const std::string& name, QueueState state);

    std::shared_ptr<lock::Subscription> subscribe(const std::string& session, const std::string& queue);

    CheckpointInfo checkpoint();
    EngineSnapshot snapshot();

    bool failed() const { return failed_.load(); }
    Lsn last_checkpoint_lsn() const { return last_checkpoint_lsn_.load(); }
    const wal::EngineState& recovery_summary() const { return recovered_; }
    const EngineOptions& options() const { return options_; }

    lock::LockManager& locks() { return *locks_; }
    TxnManager& txns() { return *txns_; }
    wal::Wal& log() { return *wal_; }
    triggers::TriggerRegistry& triggers() { return *triggers_; }
    pool::PoolManager& pools() { return *pools_; }
    pool::Executor& executor() { return *executor_; }
    Clock& clock() { return *options_.clock; }

 private:
    struct OrderKey {
        int64_t priority;
        uint64_t seq;
        MessageId id;

        bool operator<(const OrderKey& o) const {
            if (priority != o.priority) return priority > o.priority;
            if (seq != o.seq) return seq < o.seq;
            return id < o.id;
        }
    };
    struct Entry {
        MessageId id = 0;
        int64_t priority = 0;
        std::string payload;
        uint64_t seq = 0;
        TxnId inserter = kNoTxn;  // set while the insert is uncommitted
        TxnId deleter = kNoTxn;   // set while a dequeue is uncommitted
        uint32_t redeliveries = 0;
    };
    struct QueueData {
        QueueDescriptor desc;
        std::mutex mu;
        std::map<OrderKey, Entry> entries;
        std::unordered_map<MessageId, OrderKey> index;
        uint64_t available = 0;  // committed and not provisionally deleted
        uint64_t dirty_inserts = 0;
        uint64_t dirty_deletes = 0;
        uint64_t enqueue_count = 0;
        uint64_t dequeue_count = 0;
        bool destroyed = false;
    };
    using QueuePtr = std::shared_ptr<QueueData>;

    explicit Engine(EngineOptions options);
    void start();

    std::vector<QueueId> apply_commit(Transaction& txn) override;
    std::vector<QueueId> rollback(Transaction& txn) override;

    QueuePtr lookup(const std::string& name);
    QueuePtr lookup(QueueId id);
    void check_txn(Transaction& txn);
    void check_operational(QueueData& q);
    void acquire_or_throw(Transaction& txn, const lock::ResourceId& r, lock::LockMode mode);
    std::optional<Message> take_first(Transaction& txn, QueueData& q);
    std::optional<Message> take_entry(Transaction& txn, QueueData& q, Entry& e);
    void fire_triggers(Transaction& txn, QueueData& q, MessageId id, bool on_enqueue);
    void maybe_checkpoint();
    void mark_failed();

    EngineOptions options_;
    wal::EngineState recovered_;
    int lock_fd_ = -1;

    std::unique_ptr<wal::Wal> wal_;
    std::unique_ptr<lock::LockManager> locks_;
    std::unique_ptr<TxnManager> txns_;
    std::unique_ptr<pool::Executor> executor_;
    std::unique_ptr<triggers::TriggerRegistry> triggers_;
    std::unique_ptr<pool::PoolManager> pools_;

    std::shared_mutex catalog_mu_;
    std::unordered_map<std::string, QueuePtr> by_name_;
    std::unordered_map<QueueId, QueuePtr> by_id_;
    std::set<std::string> pending_names_;

    std::atomic<MessageId> next_message_id_{1};
    std::atomic<QueueId> next_queue_id_{1};
    std::atomic<bool> failed_{false};
    std::atomic<bool> closed_{false};
    std::atomic<bool> checkpoint_running_{false};
    std::atomic<Lsn> last_checkpoint_lsn_{0};
    std::mutex checkpoint_mu_;
};

}  // namespace qdb
