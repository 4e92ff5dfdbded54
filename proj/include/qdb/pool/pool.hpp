#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "qdb/clock.hpp"
#include "qdb/lockmgr/lock_manager.hpp"
#include "qdb/txn/transaction.hpp"
#include "qdb/types.hpp"

namespace qdb {
class Engine;
}

namespace qdb::pool {

enum class PolicyKind : uint8_t { kPeriodic = 0, kEvent = 1, kBatch = 2 };

struct Policy {
    PolicyKind kind = PolicyKind::kEvent;
    Duration interval{0};   // PERIODIC
    uint64_t threshold = 1; // BATCH

    static Policy periodic(Duration every) { return {PolicyKind::kPeriodic, every, 1}; }
    static Policy event() { return {}; }
    static Policy batch(uint64_t n) { return {PolicyKind::kBatch, Duration{0}, n}; }

    bool operator==(const Policy&) const = default;
};

const char* to_string(PolicyKind k);
std::string describe(const Policy& p);

struct ScalingInput {
    uint64_t depth = 0;
    uint64_t busy = 0;
    uint64_t current = 0;
    uint64_t min = 0;
    uint64_t max = 1;
    // Servers idle for at least idle_shrink_after.
    uint64_t idle_expired = 0;
    Policy policy;
};

struct ScalingDecision {
    enum class Kind : uint8_t { kNone, kGrow, kShrink };
    Kind kind = Kind::kNone;
    uint64_t k = 0;

    static ScalingDecision none() { return {}; }
    static ScalingDecision grow(uint64_t k) { return {Kind::kGrow, k}; }
    static ScalingDecision shrink(uint64_t k) { return {Kind::kShrink, k}; }
    bool operator==(const ScalingDecision&) const = default;
};

// Pure sizing rule. Grow by min(depth - busy, max - current) when
// depth > busy and current < max (BATCH pools sitting at min also need
// depth >= threshold); otherwise shrink expired idle servers down to min.
ScalingDecision scale_tick(const ScalingInput& in);

// Failure timestamps inside a trailing window: f counts at time t iff t - f < window.
class FailureWindow {
 public:
    explicit FailureWindow(Duration window) : window_(window) {}

    // Records a failure and returns how many are inside the window at `ts`.
    std::size_t record(TimePoint ts);
    std::size_t count(TimePoint now) const;
    const std::deque<TimePoint>& entries() const { return entries_; }
    void clear() { entries_.clear(); }
    void set_window(Duration w) { window_ = w; }

 private:
    void prune(TimePoint now);

    Duration window_;
    std::deque<TimePoint> entries_;
};

// Worker body: runs inside the dequeue transaction. Returning false or
// throwing counts as a failure and aborts the transaction.
using WorkerHandler = std::function<bool(Engine&, Transaction&, const Message&)>;

struct ServerPoolConfig {
    std::string queue;
    uint64_t min_servers = 1;
    uint64_t max_servers = 1;
    Policy policy;
    uint32_t failure_limit = 3;
    Duration failure_window = std::chrono::seconds(10);
    Duration idle_shrink_after = std::chrono::seconds(30);
    WorkerHandler handler;
    IsolationMode isolation = IsolationMode::kReadPastDequeue;
    // Messages whose dequeue was rolled back more often than this go to <queue>.DLQ.
    uint32_t max_redelivery = 10;
    // Label reported in status (e.g. the built-in handler spec).
    std::string handler_name;
};

// Throws kUsage describing the first violated bound.
void validate(const ServerPoolConfig& cfg);

enum class PoolState : uint8_t { kRunning = 0, kStopped = 1, kBroken = 2 };
const char* to_string(PoolState s);

enum class FailureOutcome : uint8_t { kReplaced, kBroken };

struct PoolStatus {
    uint64_t pool_id = 0;
    std::string queue;
    PoolState state = PoolState::kStopped;
    uint64_t min_servers = 0;
    uint64_t max_servers = 0;
    Policy policy;
    std::string handler_name;
    uint64_t current_servers = 0;
    uint64_t busy_servers = 0;
    // Retired servers still finishing their last message.
    uint64_t draining_servers = 0;
    std::vector<TimePoint> recent_failures;
    uint64_t dispatched_count = 0;
    uint64_t completed_count = 0;
    uint64_t failed_count = 0;
    uint64_t dead_lettered = 0;
    ScalingDecision last_decision;
};

struct PoolOptions {
    bool auto_tick = true;
    Duration tick_interval = std::chrono::milliseconds(100);
    // Real-time bound on a worker's dequeue wait and idle back-off.
    std::chrono::milliseconds worker_poll{20};
};

enum class Control : uint8_t { kStart, kStop, kRedefine };

// Server pools attached to queues: one pool per queue, each with its own
// workers, sizing, failure accounting and dispatch gate.
class PoolManager {
 public:
    PoolManager(Engine& engine, PoolOptions options);
    ~PoolManager();

    PoolManager(const PoolManager&) = delete;
    PoolManager& operator=(const PoolManager&) = delete;

    uint64_t attach(ServerPoolConfig cfg);
    PoolStatus control(const std::string& queue, Control action, std::optional<ServerPoolConfig> redefine = std::nullopt);
    PoolStatus start(const std::string& queue) { return control(queue, Control::kStart); }
    PoolStatus stop(const std::string& queue) { return control(queue, Control::kStop); }
    PoolStatus redefine(const std::string& queue, ServerPoolConfig cfg) {
        return control(queue, Control::kRedefine, std::move(cfg));
    }

    PoolStatus status(const std::string& queue) const;
    std::vector<PoolStatus> list() const;
    bool has_pool(const std::string& queue) const;
    std::optional<ServerPoolConfig> config(const std::string& queue) const;

    // One sizing and dispatch-gate step for every pool (or one) at clock.now().
    void tick();
    ScalingDecision tick(const std::string& queue);

    FailureOutcome report_worker_failure(const std::string& queue, TimePoint ts);

    void on_queue_destroyed(QueueId queue);
    void shutdown();

 private:
    struct Worker {
        uint64_t id = 0;
        std::thread thread;
        std::atomic<bool> retire{false};
        std::atomic<bool> busy{false};
        std::atomic<bool> exited{false};
        TimePoint idle_since{};
    };
    using WorkerPtr = std::shared_ptr<Worker>;

    struct Pool {
        uint64_t id = 0;
        QueueId queue_id = 0;
        ServerPoolConfig cfg;
        mutable std::mutex mu;
        PoolState state = PoolState::kRunning;
        FailureWindow failures{std::chrono::seconds(10)};
        std::vector<WorkerPtr> workers;
        uint64_t next_worker = 1;
        uint64_t dispatched = 0;
        uint64_t completed = 0;
        uint64_t failed = 0;
        uint64_t dead_lettered = 0;
        uint64_t permits = 0;
        int64_t last_period = -1;
        ScalingDecision last_decision;
        std::shared_ptr<lock::Subscription> sub;
        uint64_t sub_seen = 0;
        TimePoint last_tick{};
    };
    using PoolPtr = std::shared_ptr<Pool>;

    PoolPtr find(const std::string& queue) const;
    void spawn(const PoolPtr& p, uint64_t n);
    void retire_all(Pool& p);
    void join_exited(Pool& p);
    std::vector<WorkerPtr> take_workers(Pool& p);
    void join(std::vector<WorkerPtr>& ws);
    ScalingDecision tick_pool(const PoolPtr& p);
    PoolStatus describe(const Pool& p) const;
    void worker_loop(PoolPtr p, WorkerPtr w);
    bool process(Pool& p, Worker& w, Transaction& txn, const Message& m);
    FailureOutcome record_failure(Pool& p, TimePoint ts);
    void ticker_loop();

    Engine& engine_;
    PoolOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, PoolPtr> pools_;
    uint64_t next_pool_id_ = 1;

    std::mutex tick_mu_;
    std::condition_variable tick_cv_;
    std::atomic<bool> stopping_{false};
    std::thread ticker_;
};

// Thrown by handlers to simulate a server crash; the pool treats it as a failure.
struct WorkerCrash : std::runtime_error {
    WorkerCrash() : std::runtime_error("worker crash (injected)") {}
    explicit WorkerCrash(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qdb::pool
