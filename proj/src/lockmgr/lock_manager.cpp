#include "qdb/lockmgr/lock_manager.hpp"

#include <algorithm>
#include <sstream>

#include "qdb/error.hpp"

namespace qdb::lock {

namespace {

constexpr auto kWaitSlice = std::chrono::milliseconds(10);

const char* kind_name(ResourceKind k) {
    switch (k) {
        case ResourceKind::kQueueHead: return "QUEUE_HEAD";
        case ResourceKind::kRecord: return "RECORD";
        case ResourceKind::kCatalog: return "CATALOG";
    }
    return "?";
}

}  // namespace

std::string ResourceId::to_string() const {
    std::ostringstream os;
    os << kind_name(kind) << "(q=" << queue_id;
    if (kind == ResourceKind::kRecord) os << ",m=" << message_id;
    os << ")";
    return os.str();
}

const char* to_string(LockMode m) { return m == LockMode::kShared ? "S" : "X"; }

const char* to_string(AccessVariant v) {
    switch (v) {
        case AccessVariant::kWait: return "WAIT";
        case AccessVariant::kReadPast: return "READ_PAST";
        case AccessVariant::kReadThrough: return "READ_THROUGH";
        case AccessVariant::kNotify: return "NOTIFY";
    }
    return "?";
}

const char* to_string(AcquireStatus s) {
    switch (s) {
        case AcquireStatus::kGranted: return "Granted";
        case AcquireStatus::kSkipped: return "Skipped";
        case AcquireStatus::kDirtyGranted: return "DirtyGranted";
        case AcquireStatus::kTimedOut: return "TimedOut";
    }
    return "?";
}

const char* to_string(NotifyReason r) {
    switch (r) {
        case NotifyReason::kNonEmpty: return "non-empty";
        case NotifyReason::kDestroyed: return "destroyed";
        case NotifyReason::kStopped: return "stopped";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Subscription

uint64_t Subscription::sequence() const {
    std::lock_guard lk(mu_);
    return seq_;
}

NotifyReason Subscription::last_reason() const {
    std::lock_guard lk(mu_);
    return reason_;
}

bool Subscription::wait_beyond(uint64_t seen, Duration timeout) const {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return seq_ > seen; });
}

void Subscription::deliver(NotifyReason reason) {
    {
        std::lock_guard lk(mu_);
        ++seq_;
        reason_ = reason;
    }
    cv_.notify_all();
}

// ---------------------------------------------------------------------------
// LockManager

LockManager::LockManager(std::shared_ptr<Clock> clock, Duration default_timeout)
    : clock_(std::move(clock)), default_timeout_(default_timeout) {}

LockManager::~LockManager() = default;

void LockManager::register_txn(TxnId txn) {
    std::lock_guard lk(mu_);
    txns_.try_emplace(txn);
}

bool LockManager::compatible_with_others(const Entry& e, TxnId txn, LockMode mode) const {
    for (const auto& [holder, held] : e.holders) {
        if (holder != txn && !compatible(held, mode)) return false;
    }
    return true;
}

void LockManager::grant(Entry& e, const ResourceId& r, TxnId txn, LockMode mode) {
    for (auto& [holder, held] : e.holders) {
        if (holder == txn) {
            if (mode == LockMode::kExclusive) held = LockMode::kExclusive;
            return;
        }
    }
    e.holders.emplace_back(txn, mode);
    txns_[txn].held.push_back(r);
}

void LockManager::emit(LockEvent::Kind kind, TxnId txn, const ResourceId& r, LockMode m,
                       AccessVariant v) {
    if (observer_) observer_(LockEvent{kind, txn, r, m, v});
}

AcquireResult LockManager::acquire(TxnId txn, const ResourceId& resource, LockMode mode,
                                   AccessVariant variant, std::optional<Duration> timeout) {
    if (variant == AccessVariant::kReadThrough && mode != LockMode::kShared) {
        throw Error(ErrorCode::kUsage, "READ_THROUGH applies to S requests only");
    }
    if (variant == AccessVariant::kNotify) {
        if (resource.kind != ResourceKind::kQueueHead) {
            throw Error(ErrorCode::kUsage, "NOTIFY applies to QUEUE_HEAD resources only");
        }
        return wait_for_notify(resource, timeout.value_or(default_timeout_));
    }

    std::unique_lock lk(mu_);
    if (variant == AccessVariant::kReadThrough) {
        AcquireResult out{AcquireStatus::kDirtyGranted, kNoTxn};
        if (auto it = table_.find(resource); it != table_.end()) {
            for (const auto& [holder, held] : it->second.holders) {
                if (held == LockMode::kExclusive && holder != txn) out.dirty_writer = holder;
            }
        }
        emit(LockEvent::Kind::kDirtyRead, txn, resource, mode, variant);
        return out;
    }

    auto t = txns_.find(txn);
    if (t == txns_.end()) {
        throw Error(ErrorCode::kStaleTransaction, "transaction " + std::to_string(txn) + " is not active");
    }
    if (t->second.abort_required) {
        throw Error(ErrorCode::kDeadlockTimeout,
                    "transaction " + std::to_string(txn) + " must abort (lock timeout victim)");
    }

    Entry& e = table_[resource];
    for (const auto& [holder, held] : e.holders) {
        if (holder == txn && (held == LockMode::kExclusive || held == mode)) {
            emit(LockEvent::Kind::kGranted, txn, resource, mode, variant);
            return {AcquireStatus::kGranted};
        }
    }
    if (compatible_with_others(e, txn, mode)) {
        grant(e, resource, txn, mode);
        emit(LockEvent::Kind::kGranted, txn, resource, mode, variant);
        return {AcquireStatus::kGranted};
    }
    if (variant == AccessVariant::kReadPast) {
        emit(LockEvent::Kind::kSkipped, txn, resource, mode, variant);
        return {AcquireStatus::kSkipped};
    }

    // WAIT
    auto w = std::make_shared<Waiter>();
    w->txn = txn;
    w->mode = mode;
    w->deadline = clock_->now() + timeout.value_or(default_timeout_);
    e.waiters.push_back(w);
    ++total_waits_;
    ++waits_by_queue_[resource.queue_id];
    emit(LockEvent::Kind::kWaitEnqueued, txn, resource, mode, variant);

    while (!w->granted && !w->victim) {
        auto remaining = w->deadline - clock_->now();
        if (remaining <= Duration::zero()) {
            auto it = table_.find(resource);
            if (it != table_.end()) it->second.waiters.remove(w);
            w->victim = true;
            txns_[txn].abort_required = true;
            ++total_timeouts_;
            break;
        }
        cv_.wait_for(lk, std::min<Duration>(remaining, kWaitSlice));
    }
    if (w->granted) {
        emit(LockEvent::Kind::kGranted, txn, resource, mode, variant);
        return {AcquireStatus::kGranted};
    }
    if (auto it = table_.find(resource); it != table_.end() && it->second.holders.empty() &&
                                         it->second.waiters.empty()) {
        table_.erase(it);
    }
    emit(LockEvent::Kind::kTimedOut, txn, resource, mode, variant);
    return {AcquireStatus::kTimedOut};
}

AcquireResult LockManager::wait_for_notify(const ResourceId& resource, Duration timeout) {
    auto sub = subscribe_notify("notify-acquire", resource.queue_id);
    uint64_t seen = sub->sequence();
    if (sub->wait_beyond(seen, timeout)) return {AcquireStatus::kGranted};
    return {AcquireStatus::kTimedOut};
}

void LockManager::grant_waiters(Entry& e, const ResourceId& r) {
    bool any = false;
    for (auto it = e.waiters.begin(); it != e.waiters.end();) {
        auto& w = *it;
        if (compatible_with_others(e, w->txn, w->mode)) {
            grant(e, r, w->txn, w->mode);
            w->granted = true;
            any = true;
            it = e.waiters.erase(it);
        } else {
            ++it;
        }
    }
    if (any) cv_.notify_all();
}

void LockManager::release_all(TxnId txn, std::span<const QueueId> became_nonempty) {
    {
        std::lock_guard lk(mu_);
        auto t = txns_.find(txn);
        if (t != txns_.end()) {
            for (const auto& r : t->second.held) {
                auto it = table_.find(r);
                if (it == table_.end()) continue;
                Entry& e = it->second;
                std::erase_if(e.holders, [&](const auto& h) { return h.first == txn; });
                emit(LockEvent::Kind::kReleased, txn, r, LockMode::kShared, AccessVariant::kWait);
                grant_waiters(e, r);
                if (e.holders.empty() && e.waiters.empty()) table_.erase(it);
            }
            txns_.erase(t);
        }
    }
    for (QueueId q : became_nonempty) signal(q, NotifyReason::kNonEmpty);
}

std::shared_ptr<Subscription> LockManager::subscribe_notify(std::string session, QueueId queue) {
    auto sub = std::make_shared<Subscription>(std::move(session), queue);
    std::lock_guard lk(sub_mu_);
    auto& list = subscribers_[queue];
    std::erase_if(list, [](const auto& w) { return w.expired(); });
    list.push_back(sub);
    return sub;
}

void LockManager::signal(QueueId queue, NotifyReason reason) {
    std::vector<std::shared_ptr<Subscription>> targets;
    {
        std::lock_guard lk(sub_mu_);
        auto it = subscribers_.find(queue);
        if (it == subscribers_.end()) return;
        auto& list = it->second;
        std::erase_if(list, [](const auto& w) { return w.expired(); });
        for (const auto& w : list) {
            if (auto s = w.lock()) targets.push_back(std::move(s));
        }
        if (list.empty()) subscribers_.erase(it);
    }
    for (auto& s : targets) s->deliver(reason);
}

std::vector<TxnId> LockManager::detect_timeout_victims() {
    std::vector<TxnId> victims;
    std::lock_guard lk(mu_);
    TimePoint now = clock_->now();
    for (auto it = table_.begin(); it != table_.end();) {
        auto& waiters = it->second.waiters;
        for (auto w = waiters.begin(); w != waiters.end();) {
            if ((*w)->deadline <= now && !(*w)->granted) {
                (*w)->victim = true;
                txns_[(*w)->txn].abort_required = true;
                victims.push_back((*w)->txn);
                ++total_timeouts_;
                w = waiters.erase(w);
            } else {
                ++w;
            }
        }
        if (it->second.holders.empty() && waiters.empty()) {
            it = table_.erase(it);
        } else {
            ++it;
        }
    }
    if (!victims.empty()) cv_.notify_all();
    return victims;
}

bool LockManager::abort_required(TxnId txn) const {
    std::lock_guard lk(mu_);
    auto it = txns_.find(txn);
    return it != txns_.end() && it->second.abort_required;
}

bool LockManager::is_registered(TxnId txn) const {
    std::lock_guard lk(mu_);
    return txns_.count(txn) > 0;
}

std::vector<std::pair<TxnId, LockMode>> LockManager::holders(const ResourceId& resource) const {
    std::lock_guard lk(mu_);
    auto it = table_.find(resource);
    if (it == table_.end()) return {};
    return it->second.holders;
}

std::size_t LockManager::waiter_count(const ResourceId& resource) const {
    std::lock_guard lk(mu_);
    auto it = table_.find(resource);
    return it == table_.end() ? 0 : it->second.waiters.size();
}

std::vector<std::string> LockManager::audit() const {
    std::vector<std::string> problems;
    std::lock_guard lk(mu_);
    for (const auto& [r, e] : table_) {
        for (std::size_t i = 0; i < e.holders.size(); ++i) {
            if (!txns_.count(e.holders[i].first)) {
                problems.push_back(r.to_string() + ": holder t" + std::to_string(e.holders[i].first) +
                                   " is not an active transaction");
            }
            for (std::size_t j = i + 1; j < e.holders.size(); ++j) {
                if (e.holders[i].first == e.holders[j].first) {
                    problems.push_back(r.to_string() + ": duplicate holder entry");
                } else if (!compatible(e.holders[i].second, e.holders[j].second)) {
                    problems.push_back(r.to_string() + ": incompatible holders");
                }
            }
        }
        for (const auto& w : e.waiters) {
            if (compatible_with_others(e, w->txn, w->mode)) {
                problems.push_back(r.to_string() + ": waiter t" + std::to_string(w->txn) +
                                   " is compatible with all holders");
            }
        }
        if (e.holders.empty() && e.waiters.empty()) {
            problems.push_back(r.to_string() + ": empty entry retained");
        }
    }
    for (const auto& [txn, locks] : txns_) {
        for (const auto& r : locks.held) {
            auto it = table_.find(r);
            bool found = it != table_.end() &&
                         std::any_of(it->second.holders.begin(), it->second.holders.end(),
                                     [&](const auto& h) { return h.first == txn; });
            if (!found) problems.push_back("t" + std::to_string(txn) + " believes it holds " + r.to_string());
        }
    }
    return problems;
}

std::string LockManager::dump() const {
    std::ostringstream os;
    std::lock_guard lk(mu_);
    for (const auto& [r, e] : table_) {
        os << r.to_string() << " holders=[";
        for (std::size_t i = 0; i < e.holders.size(); ++i) {
            if (i) os << ",";
            os << "t" << e.holders[i].first << ":" << to_string(e.holders[i].second);
        }
        os << "] waiters=[";
        bool first = true;
        for (const auto& w : e.waiters) {
            if (!first) os << ",";
            first = false;
            os << "t" << w->txn << ":" << to_string(w->mode);
        }
        os << "]\n";
    }
    return os.str();
}

LockTableSummary LockManager::summary() const {
    LockTableSummary s;
    {
        std::lock_guard lk(mu_);
        s.resources = table_.size();
        for (const auto& [r, e] : table_) {
            s.holders += e.holders.size();
            s.waiters += e.waiters.size();
        }
        s.total_waits = total_waits_;
        s.total_timeouts = total_timeouts_;
    }
    std::lock_guard lk(sub_mu_);
    for (const auto& [q, list] : subscribers_) {
        for (const auto& w : list) s.subscribers += w.expired() ? 0 : 1;
    }
    return s;
}

uint64_t LockManager::lock_waits(QueueId queue) const {
    std::lock_guard lk(mu_);
    auto it = waits_by_queue_.find(queue);
    return it == waits_by_queue_.end() ? 0 : it->second;
}

void LockManager::set_observer(std::function<void(const LockEvent&)> observer) {
    std::lock_guard lk(mu_);
    observer_ = std::move(observer);
}

}  // namespace qdb::lock
