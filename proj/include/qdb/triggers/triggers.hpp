#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "qdb/txn/transaction.hpp"
#include "qdb/types.hpp"

namespace qdb {
class Engine;
}

namespace qdb::triggers {

enum class Event : uint8_t { kOnEnqueue = 0, kOnDequeue = 1 };
enum class Timing : uint8_t { kImmediate = 0, kDeferred = 1 };
enum class Scope : uint8_t { kSameTxn = 0, kNewTopLevel = 1 };

const char* to_string(Event e);
const char* to_string(Timing t);
const char* to_string(Scope s);

using TriggerId = uint64_t;

struct FiringContext {
    TriggerId trigger_id = 0;
    QueueId queue_id = 0;
    std::string queue_name;
    MessageId message_id = 0;
    Event event = Event::kOnEnqueue;
    // SAME_TXN: the firing transaction. NEW_TOP_LEVEL: the fresh transaction
    // the handler runs in; the registry commits it when the handler returns.
    Transaction* txn = nullptr;
    TxnId firing_txn = kNoTxn;
};

// Throwing from a handler signals failure.
using Handler = std::function<void(Engine&, const FiringContext&)>;

struct TriggerSpec {
    std::string queue;
    Event event = Event::kOnEnqueue;
    Timing timing = Timing::kImmediate;
    Scope scope = Scope::kSameTxn;
    Handler handler;
    std::string name;
};

struct TriggerStatus {
    TriggerId id = 0;
    std::string name;
    QueueId queue_id = 0;
    Event event = Event::kOnEnqueue;
    Timing timing = Timing::kImmediate;
    Scope scope = Scope::kSameTxn;
    uint64_t fired = 0;
    uint64_t failures = 0;
    uint32_t consecutive_failures = 0;
    bool suspended = false;
};

inline constexpr uint32_t kSuspendAfterFailures = 5;
inline constexpr int kMaxTriggerDepth = 8;

class TriggerRegistry {
 public:
    explicit TriggerRegistry(Engine& engine);

    // Throws kUsage for (DEFERRED, SAME_TXN) or a missing handler, kNotFound for an unknown queue.
    TriggerId register_trigger(TriggerSpec spec);
    // Waits for in-flight firings of the trigger; later operations never see it.
    void unregister(TriggerId id);

    // Called by the queue store after an operation on `queue`. SAME_TXN handler
    // failures propagate to the caller, which aborts the firing transaction.
    void fire(Transaction& txn, const QueueDescriptor& queue, MessageId message, Event event);

    // Clears suspension and the consecutive-failure count.
    void resume(TriggerId id);
    void drop_queue(QueueId queue);

    std::vector<TriggerStatus> list() const;
    std::optional<TriggerStatus> status(TriggerId id) const;

 private:
    struct Registered {
        TriggerId id = 0;
        QueueId queue_id = 0;
        TriggerSpec spec;
        // Held shared by each firing, exclusively by unregister.
        std::shared_mutex run_mu;
        bool active = true;
        std::atomic<uint64_t> fired{0};
        std::atomic<uint64_t> failures{0};
        std::atomic<uint32_t> consecutive{0};
        std::atomic<bool> suspended{false};
    };
    using Ptr = std::shared_ptr<Registered>;

    std::vector<Ptr> matching(QueueId queue, Event event) const;
    void run_top_level(const Ptr& t, FiringContext ctx, int depth);
    static TriggerStatus describe(const Registered& r);

    Engine& engine_;
    mutable std::mutex mu_;
    std::vector<Ptr> triggers_;  // registration order
    TriggerId next_id_ = 1;
};

}  // namespace qdb::triggers
