#include "qdb/pool/pool.hpp"

#include <algorithm>

#include "qdb/engine.hpp"
#include "qdb/error.hpp"

namespace qdb::pool {

const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::kPeriodic: return "PERIODIC";
        case PolicyKind::kEvent: return "EVENT";
        case PolicyKind::kBatch: return "BATCH";
    }
    return "?";
}

std::string describe(const Policy& p) {
    switch (p.kind) {
        case PolicyKind::kPeriodic:
            return "PERIODIC(" +
                   std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(p.interval).count()) +
                   "ms)";
        case PolicyKind::kEvent: return "EVENT";
        case PolicyKind::kBatch: return "BATCH(" + std::to_string(p.threshold) + ")";
    }
    return "?";
}

const char* to_string(PoolState s) {
    switch (s) {
        case PoolState::kRunning: return "RUNNING";
        case PoolState::kStopped: return "STOPPED";
        case PoolState::kBroken: return "BROKEN";
    }
    return "?";
}

ScalingDecision scale_tick(const ScalingInput& in) {
    if (in.depth > in.busy && in.current < in.max) {
        bool gated = in.policy.kind == PolicyKind::kBatch && in.current <= in.min &&
                     in.depth < in.policy.threshold;
        if (!gated) return ScalingDecision::grow(std::min(in.depth - in.busy, in.max - in.current));
    }
    if (in.current > in.min && in.idle_expired > 0) {
        return ScalingDecision::shrink(std::min(in.idle_expired, in.current - in.min));
    }
    return ScalingDecision::none();
}

void FailureWindow::prune(TimePoint now) {
    while (!entries_.empty() && now - entries_.front() >= window_) entries_.pop_front();
}

std::size_t FailureWindow::record(TimePoint ts) {
    entries_.push_back(ts);
    std::sort(entries_.begin(), entries_.end());
    prune(ts);
    return count(ts);
}

std::size_t FailureWindow::count(TimePoint now) const {
    return std::count_if(entries_.begin(), entries_.end(),
                         [&](TimePoint f) { return f <= now && now - f < window_; });
}

void validate(const ServerPoolConfig& cfg) {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::kUsage, "invalid pool config: " + msg); };
    if (cfg.queue.empty()) fail("queue name is empty");
    if (cfg.max_servers < 1) fail("max_servers must be at least 1");
    if (cfg.min_servers > cfg.max_servers) fail("min_servers exceeds max_servers");
    if (cfg.failure_limit < 1) fail("failure_limit must be at least 1");
    if (cfg.failure_window <= Duration::zero()) fail("failure_window must be positive");
    if (cfg.idle_shrink_after < Duration::zero()) fail("idle_shrink_after must not be negative");
    if (cfg.policy.kind == PolicyKind::kBatch && cfg.policy.threshold < 1) fail("batch threshold must be at least 1");
    if (cfg.policy.kind == PolicyKind::kPeriodic && cfg.policy.interval <= Duration::zero()) {
        fail("periodic interval must be positive");
    }
    if (!cfg.handler) fail("no handler");
}

PoolManager::PoolManager(Engine& engine, PoolOptions options) : engine_(engine), options_(options) {
    if (options_.auto_tick) ticker_ = std::thread([this] { ticker_loop(); });
}

PoolManager::~PoolManager() { shutdown(); }

void PoolManager::ticker_loop() {
    auto last = std::chrono::steady_clock::now();
    std::unique_lock lk(tick_mu_);
    while (!stopping_) {
        tick_cv_.wait_for(lk, std::chrono::milliseconds(5));
        if (stopping_) break;
        lk.unlock();
        bool due = std::chrono::steady_clock::now() - last >= options_.tick_interval;
        if (due) last = std::chrono::steady_clock::now();
        std::vector<PoolPtr> pools;
        {
            std::lock_guard g(mu_);
            for (auto& [name, p] : pools_) pools.push_back(p);
        }
        for (auto& p : pools) {
            bool notified = p->sub && p->sub->sequence() != p->sub_seen;
            if (notified) p->sub_seen = p->sub->sequence();
            if (due || notified) {
                try {
                    tick_pool(p);
                } catch (const Error&) {
                }
            }
        }
        lk.lock();
    }
}

PoolManager::PoolPtr PoolManager::find(const std::string& queue) const {
    std::lock_guard lk(mu_);
    auto it = pools_.find(queue);
    if (it == pools_.end()) throw Error(ErrorCode::kNotFound, "no pool attached to queue '" + queue + "'");
    return it->second;
}

bool PoolManager::has_pool(const std::string& queue) const {
    std::lock_guard lk(mu_);
    return pools_.count(queue) > 0;
}

std::optional<ServerPoolConfig> PoolManager::config(const std::string& queue) const {
    std::lock_guard lk(mu_);
    auto it = pools_.find(queue);
    if (it == pools_.end()) return std::nullopt;
    std::lock_guard pl(it->second->mu);
    return it->second->cfg;
}

uint64_t PoolManager::attach(ServerPoolConfig cfg) {
    validate(cfg);
    auto desc = engine_.find_queue(cfg.queue);
    if (!desc) throw Error(ErrorCode::kNotFound, "queue '" + cfg.queue + "' not found");
    if (desc->state != QueueState::kActive) {
        throw Error(ErrorCode::kUnavailable, "queue '" + cfg.queue + "' is " + to_string(desc->state));
    }
    auto p = std::make_shared<Pool>();
    p->queue_id = desc->queue_id;
    p->failures.set_window(cfg.failure_window);
    p->cfg = std::move(cfg);
    p->sub = engine_.subscribe("pool:" + p->cfg.queue, p->cfg.queue);
    p->sub_seen = p->sub->sequence();
    {
        std::lock_guard lk(mu_);
        if (stopping_) throw Error(ErrorCode::kUnavailable, "pool manager is shut down");
        if (pools_.count(p->cfg.queue)) {
            throw Error(ErrorCode::kAlreadyExists, "queue '" + p->cfg.queue + "' already has a pool");
        }
        p->id = next_pool_id_++;
        pools_[p->cfg.queue] = p;
    }
    std::lock_guard pl(p->mu);
    spawn(p, p->cfg.min_servers);
    return p->id;
}

void PoolManager::spawn(const PoolPtr& p, uint64_t n) {
    // Caller holds p->mu.
    for (uint64_t i = 0; i < n; ++i) {
        auto w = std::make_shared<Worker>();
        w->id = p->next_worker++;
        w->idle_since = engine_.clock().now();
        p->workers.push_back(w);
        w->thread = std::thread([this, p, w] { worker_loop(p, w); });
    }
}

void PoolManager::retire_all(Pool& p) {
    for (auto& w : p.workers) w->retire = true;
}

void PoolManager::join_exited(Pool& p) {
    for (auto it = p.workers.begin(); it != p.workers.end();) {
        if ((*it)->exited) {
            if ((*it)->thread.joinable()) (*it)->thread.join();
            it = p.workers.erase(it);
        } else {
            ++it;
        }
    }
}

std::vector<PoolManager::WorkerPtr> PoolManager::take_workers(Pool& p) {
    std::vector<WorkerPtr> out;
    out.swap(p.workers);
    return out;
}

void PoolManager::join(std::vector<WorkerPtr>& ws) {
    for (auto& w : ws) {
        if (!w->thread.joinable()) continue;
        if (w->thread.get_id() == std::this_thread::get_id()) {
            w->thread.detach();
        } else {
            w->thread.join();
        }
    }
    ws.clear();
}

PoolStatus PoolManager::describe(const Pool& p) const {
    // Caller holds p.mu.
    PoolStatus s;
    s.pool_id = p.id;
    s.queue = p.cfg.queue;
    s.state = p.state;
    s.min_servers = p.cfg.min_servers;
    s.max_servers = p.cfg.max_servers;
    s.policy = p.cfg.policy;
    s.handler_name = p.cfg.handler_name;
    for (const auto& w : p.workers) {
        if (w->exited) continue;
        if (w->retire) {
            ++s.draining_servers;
        } else {
            ++s.current_servers;
        }
        if (w->busy) ++s.busy_servers;
    }
    TimePoint now = engine_.clock().now();
    for (TimePoint f : p.failures.entries()) {
        if (f <= now && now - f < p.cfg.failure_window) s.recent_failures.push_back(f);
    }
    s.dispatched_count = p.dispatched;
    s.completed_count = p.completed;
    s.failed_count = p.failed;
    s.dead_lettered = p.dead_lettered;
    s.last_decision = p.last_decision;
    return s;
}

PoolStatus PoolManager::status(const std::string& queue) const {
    auto p = find(queue);
    std::lock_guard lk(p->mu);
    return describe(*p);
}

std::vector<PoolStatus> PoolManager::list() const {
    std::vector<PoolPtr> pools;
    {
        std::lock_guard lk(mu_);
        for (const auto& [name, p] : pools_) pools.push_back(p);
    }
    std::vector<PoolStatus> out;
    for (const auto& p : pools) {
        std::lock_guard lk(p->mu);
        out.push_back(describe(*p));
    }
    return out;
}

void PoolManager::tick() {
    std::vector<PoolPtr> pools;
    {
        std::lock_guard lk(mu_);
        for (const auto& [name, p] : pools_) pools.push_back(p);
    }
    for (auto& p : pools) tick_pool(p);
}

ScalingDecision PoolManager::tick(const std::string& queue) { return tick_pool(find(queue)); }

ScalingDecision PoolManager::tick_pool(const PoolPtr& p) {
    uint64_t depth = 0;
    try {
        depth = engine_.stats(p->cfg.queue).depth_visible;
    } catch (const Error&) {
        return ScalingDecision::none();
    }
    std::lock_guard lk(p->mu);
    join_exited(*p);
    if (p->state != PoolState::kRunning) {
        p->last_decision = ScalingDecision::none();
        return p->last_decision;
    }
    TimePoint now = engine_.clock().now();
    p->last_tick = now;

    ScalingInput in;
    in.depth = depth;
    in.min = p->cfg.min_servers;
    in.max = p->cfg.max_servers;
    in.policy = p->cfg.policy;
    std::vector<WorkerPtr> idle;
    for (const auto& w : p->workers) {
        if (w->retire) continue;
        ++in.current;
        if (w->busy) {
            ++in.busy;
        } else if (now - w->idle_since >= p->cfg.idle_shrink_after) {
            idle.push_back(w);
        }
    }
    in.idle_expired = idle.size();
    ScalingDecision d = scale_tick(in);
    if (d.kind == ScalingDecision::Kind::kGrow) {
        spawn(p, d.k);
    } else if (d.kind == ScalingDecision::Kind::kShrink) {
        std::sort(idle.begin(), idle.end(), [](const auto& a, const auto& b) { return a->idle_since < b->idle_since; });
        for (uint64_t i = 0; i < d.k && i < idle.size(); ++i) idle[i]->retire = true;
    }

    if (p->cfg.policy.kind == PolicyKind::kPeriodic) {
        int64_t period = now.time_since_epoch().count() / p->cfg.policy.interval.count();
        if (period != p->last_period) {
            p->last_period = period;
            p->permits = depth;
        } else {
            p->permits = 0;
        }
    }
    p->last_decision = d;
    return d;
}

FailureOutcome PoolManager::record_failure(Pool& p, TimePoint ts) {
    bool broke = false;
    {
        std::lock_guard lk(p.mu);
        ++p.failed;
        if (p.state == PoolState::kBroken) return FailureOutcome::kBroken;
        if (p.state != PoolState::kRunning) return FailureOutcome::kReplaced;
        if (p.failures.record(ts) >= p.cfg.failure_limit) {
            p.state = PoolState::kBroken;
            retire_all(p);
            broke = true;
        }
    }
    if (!broke) return FailureOutcome::kReplaced;
    try {
        engine_.set_queue_state(p.cfg.queue, QueueState::kBroken);
    } catch (const Error&) {
    }
    return FailureOutcome::kBroken;
}

FailureOutcome PoolManager::report_worker_failure(const std::string& queue, TimePoint ts) {
    return record_failure(*find(queue), ts);
}

PoolStatus PoolManager::control(const std::string& queue, Control action, std::optional<ServerPoolConfig> redefine) {
    auto p = find(queue);
    switch (action) {
        case Control::kStop: {
            std::vector<WorkerPtr> ws;
            {
                std::lock_guard lk(p->mu);
                p->state = PoolState::kStopped;
                p->permits = 0;
                retire_all(*p);
                ws = take_workers(*p);
            }
            join(ws);
            break;
        }
        case Control::kStart: {
            std::vector<WorkerPtr> ws;
            {
                std::lock_guard lk(p->mu);
                if (p->state == PoolState::kRunning) return describe(*p);
                retire_all(*p);
                ws = take_workers(*p);
            }
            join(ws);
            auto desc = engine_.find_queue(queue);
            if (!desc) throw Error(ErrorCode::kNotFound, "queue '" + queue + "' not found");
            if (desc->state == QueueState::kBroken) engine_.set_queue_state(queue, QueueState::kActive);
            std::lock_guard lk(p->mu);
            p->failures.clear();
            p->permits = 0;
            p->last_period = -1;
            p->state = PoolState::kRunning;
            spawn(p, p->cfg.min_servers);
            break;
        }
        case Control::kRedefine: {
            if (!redefine) throw Error(ErrorCode::kUsage, "REDEFINE needs a configuration");
            ServerPoolConfig cfg = std::move(*redefine);
            if (cfg.queue.empty()) cfg.queue = queue;
            if (cfg.queue != queue) throw Error(ErrorCode::kUsage, "REDEFINE cannot move a pool to another queue");
            std::lock_guard lk(p->mu);
            if (!cfg.handler) {
                cfg.handler = p->cfg.handler;
                if (cfg.handler_name.empty()) cfg.handler_name = p->cfg.handler_name;
            }
            validate(cfg);
            p->cfg = std::move(cfg);
            p->failures.set_window(p->cfg.failure_window);
            if (p->state == PoolState::kRunning) {
                std::vector<WorkerPtr> live;
                for (auto& w : p->workers) {
                    if (!w->retire && !w->exited) live.push_back(w);
                }
                if (live.size() > p->cfg.max_servers) {
                    // Idle servers go first; busy ones finish their message and exit.
                    std::stable_partition(live.begin(), live.end(), [](const auto& w) { return !w->busy; });
                    for (std::size_t i = 0; i < live.size() - p->cfg.max_servers; ++i) live[i]->retire = true;
                } else if (live.size() < p->cfg.min_servers) {
                    spawn(p, p->cfg.min_servers - live.size());
                }
            }
            break;
        }
    }
    std::lock_guard lk(p->mu);
    return describe(*p);
}

void PoolManager::on_queue_destroyed(QueueId queue) {
    PoolPtr p;
    {
        std::lock_guard lk(mu_);
        for (auto it = pools_.begin(); it != pools_.end(); ++it) {
            if (it->second->queue_id == queue) {
                p = it->second;
                pools_.erase(it);
                break;
            }
        }
    }
    if (!p) return;
    std::vector<WorkerPtr> ws;
    {
        std::lock_guard lk(p->mu);
        p->state = PoolState::kStopped;
        retire_all(*p);
        ws = take_workers(*p);
    }
    join(ws);
}

void PoolManager::shutdown() {
    {
        std::lock_guard lk(tick_mu_);
        stopping_ = true;
    }
    tick_cv_.notify_all();
    if (ticker_.joinable()) ticker_.join();
    std::vector<PoolPtr> pools;
    {
        std::lock_guard lk(mu_);
        for (auto& [name, p] : pools_) pools.push_back(p);
        pools_.clear();
    }
    for (auto& p : pools) {
        std::vector<WorkerPtr> ws;
        {
            std::lock_guard lk(p->mu);
            p->state = PoolState::kStopped;
            retire_all(*p);
            ws = take_workers(*p);
        }
        join(ws);
    }
}

bool PoolManager::process(Pool& p, Worker&, Transaction& txn, const Message& m) {
    ServerPoolConfig cfg;
    {
        std::lock_guard lk(p.mu);
        cfg = p.cfg;
    }
    if (m.redeliveries > cfg.max_redelivery) {
        std::string dlq = cfg.queue + ".DLQ";
        try {
            auto desc = engine_.find_queue(cfg.queue);
            if (!engine_.find_queue(dlq)) {
                try {
                    engine_.create_queue(dlq, Durability::kDurable, desc ? desc->ordering : Ordering::kFifo);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::kAlreadyExists) throw;
                }
            }
            engine_.enqueue(txn, dlq, m.priority, m.payload);
            engine_.commit(txn);
            std::lock_guard lk(p.mu);
            ++p.dead_lettered;
            return true;
        } catch (const std::exception&) {
            if (txn.state() == TxnState::kActive) engine_.abort(txn);
            return false;
        }
    }

    bool ok = false;
    try {
        ok = cfg.handler(engine_, txn, m);
    } catch (...) {
        ok = false;
    }
    if (ok) {
        try {
            engine_.commit(txn);
        } catch (...) {
            ok = false;
        }
    }
    if (!ok && txn.state() == TxnState::kActive) {
        try {
            engine_.abort(txn);
        } catch (...) {
        }
    }
    return ok;
}

void PoolManager::worker_loop(PoolPtr p, WorkerPtr w) {
    const auto poll = options_.worker_poll;
    const std::string queue = p->cfg.queue;
    while (true) {
        bool took_permit = false;
        IsolationMode isolation;
        {
            std::unique_lock lk(p->mu);
            if (w->retire || p->state != PoolState::kRunning) break;
            isolation = p->cfg.isolation;
            if (p->cfg.policy.kind == PolicyKind::kPeriodic) {
                if (p->permits == 0) {
                    lk.unlock();
                    std::this_thread::sleep_for(poll);
                    continue;
                }
                --p->permits;
                took_permit = true;
            }
        }
        auto give_back = [&] {
            if (!took_permit) return;
            std::lock_guard lk(p->mu);
            ++p->permits;
        };

        TxnPtr txn;
        std::optional<Message> m;
        try {
            txn = engine_.begin("pool:" + queue);
            m = engine_.dequeue(*txn, queue, isolation, WaitSpec::wait(poll));
        } catch (const Error& e) {
            if (txn && txn->state() == TxnState::kActive) {
                try {
                    engine_.abort(*txn);
                } catch (...) {
                }
            }
            give_back();
            if (e.code() == ErrorCode::kNotFound) break;
            std::this_thread::sleep_for(poll);
            continue;
        }
        if (!m) {
            engine_.abort(*txn);
            give_back();
            continue;
        }
        {
            std::unique_lock lk(p->mu);
            if (w->retire || p->state != PoolState::kRunning) {
                lk.unlock();
                engine_.abort(*txn);
                break;
            }
            ++p->dispatched;
            w->busy = true;
        }
        bool ok = process(*p, *w, *txn, *m);
        {
            std::lock_guard lk(p->mu);
            w->busy = false;
            w->idle_since = engine_.clock().now();
            if (ok) ++p->completed;
        }
        if (!ok && record_failure(*p, engine_.clock().now()) == FailureOutcome::kBroken) break;
    }
    w->exited = true;
}

}  // namespace qdb::pool
