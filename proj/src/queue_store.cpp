#include "qdb/engine.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <limits>

#include "qdb/error.hpp"
#include "qdb/pool/executor.hpp"
#include "qdb/pool/pool.hpp"
#include "qdb/triggers/triggers.hpp"

namespace qdb {

namespace {

constexpr uint64_t kUncommittedSeq = std::numeric_limits<uint64_t>::max();

void fnv(uint64_t& h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
}

void fnv_u64(uint64_t& h, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>(v >> (8 * i));
    fnv(h, std::string_view(buf, 8));
}

Error not_found(const std::string& name) {
    return Error(ErrorCode::kNotFound, "queue '" + name + "' not found");
}

}  // namespace

uint64_t EngineSnapshot::hash() const {
    uint64_t h = 14695981039346656037ull;
    for (const auto& q : queues) {
        fnv(h, q.name);
        fnv_u64(h, static_cast<uint64_t>(q.durability));
        fnv_u64(h, static_cast<uint64_t>(q.ordering));
        fnv_u64(h, q.messages.size());
        for (const auto& [id, prio, payload] : q.messages) {
            fnv_u64(h, static_cast<uint64_t>(prio));
            fnv_u64(h, payload.size());
            fnv(h, payload);
        }
    }
    return h;
}

Engine::Engine(EngineOptions options) : options_(std::move(options)) {
    if (!options_.storage) options_.storage = std::make_shared<PosixStorage>(options_.sync);
    if (!options_.clock) options_.clock = default_clock();
}

std::unique_ptr<Engine> Engine::open(EngineOptions options) {
    std::unique_ptr<Engine> engine(new Engine(std::move(options)));
    engine->start();
    return engine;
}

void Engine::start() {
    const auto& dir = options_.data_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create data directory " + dir.string() + ": " + ec.message());

    lock_fd_ = ::open((dir / "LOCK").c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (lock_fd_ < 0) throw IoError("cannot open lock file in " + dir.string());
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw Error(ErrorCode::kUnavailable, "data directory " + dir.string() + " is in use");
    }

    try {
        recovered_ = wal::recover(*options_.storage, dir);
        wal_ = std::make_unique<wal::Wal>(options_.storage, dir / wal::kLogFileName, recovered_.last_lsn,
                                          recovered_.log_valid_size, options_.wal);
    } catch (...) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw;
    }
    last_checkpoint_lsn_ = recovered_.checkpoint_lsn;
    next_message_id_ = recovered_.next_message_id;
    next_queue_id_ = recovered_.next_queue_id;

    for (const auto& [qid, rq] : recovered_.queues) {
        auto q = std::make_shared<QueueData>();
        q->desc = rq.descriptor;
        q->desc.state = QueueState::kActive;
        for (const auto& [mid, m] : rq.messages) {
            OrderKey key{m.priority, m.enqueue_seq, mid};
            Entry e;
            e.id = mid;
            e.priority = m.priority;
            e.payload = m.payload;
            e.seq = m.enqueue_seq;
            q->entries.emplace(key, std::move(e));
            q->index.emplace(mid, key);
        }
        q->available = q->entries.size();
        q->enqueue_count = q->entries.size();
        by_name_[q->desc.name] = q;
        by_id_[qid] = q;
    }

    locks_ = std::make_unique<lock::LockManager>(options_.clock, options_.lock_timeout);
    txns_ = std::make_unique<TxnManager>(*wal_, *locks_, static_cast<TxnParticipant&>(*this), recovered_.next_txn_id);
    txns_->set_failure_handler([this] { mark_failed(); });
    executor_ = std::make_unique<pool::Executor>(options_.executor_threads);
    triggers_ = std::make_unique<triggers::TriggerRegistry>(*this);
    pool::PoolOptions popts;
    popts.auto_tick = options_.pool_auto_tick;
    popts.tick_interval = options_.pool_tick_interval;
    pools_ = std::make_unique<pool::PoolManager>(*this, popts);
}

Engine::~Engine() {
    if (pools_) pools_->shutdown();
    if (executor_) executor_->shutdown();
    if (lock_fd_ >= 0) ::close(lock_fd_);
}

void Engine::close() {
    if (closed_.exchange(true)) return;
    pools_->shutdown();
    executor_->wait_idle();
    executor_->shutdown();
    if (options_.checkpoint_on_close && !failed_) {
        try {
            checkpoint();
        } catch (const Error&) {
            // The log is still complete; the next open recovers from it.
        }
    }
    if (lock_fd_ >= 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
    }
}

void Engine::mark_failed() {
    failed_ = true;
    txns_->set_unavailable(true);
}

TxnPtr Engine::begin(std::string session) {
    if (failed_) throw Error(ErrorCode::kUnavailable, "engine is in failed state");
    return txns_->begin(std::move(session));
}

void Engine::commit(Transaction& txn) {
    {
        std::lock_guard op(txn.op_mutex());
        txns_->commit(txn);
    }
    maybe_checkpoint();
}

void Engine::abort(Transaction& txn) {
    std::lock_guard op(txn.op_mutex());
    txns_->abort(txn);
}

void Engine::maybe_checkpoint() {
    if (failed_ || wal_->size_bytes() < options_.checkpoint_threshold) return;
    if (checkpoint_running_.exchange(true)) return;
    try {
        checkpoint();
    } catch (const Error&) {
    }
    checkpoint_running_ = false;
}

Engine::QueuePtr Engine::lookup(const std::string& name) {
    std::shared_lock lk(catalog_mu_);
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw not_found(name);
    return it->second;
}

Engine::QueuePtr Engine::lookup(QueueId id) {
    std::shared_lock lk(catalog_mu_);
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : it->second;
}

void Engine::check_txn(Transaction& txn) {
    if (failed_) throw Error(ErrorCode::kUnavailable, "engine is in failed state");
    if (txn.state() != TxnState::kActive) {
        throw Error(ErrorCode::kStaleTransaction, "transaction " + std::to_string(txn.id()) + " is " +
                                                      to_string(txn.state()));
    }
}

void Engine::check_operational(QueueData& q) {
    std::lock_guard lk(q.mu);
    if (q.destroyed) throw not_found(q.desc.name);
    if (q.desc.state != QueueState::kActive) {
        throw Error(ErrorCode::kUnavailable,
                    "queue '" + q.desc.name + "' is " + to_string(q.desc.state));
    }
}

void Engine::acquire_or_throw(Transaction& txn, const lock::ResourceId& r, lock::LockMode mode) {
    auto res = locks_->acquire(txn.id(), r, mode, lock::AccessVariant::kWait);
    if (res.status == lock::AcquireStatus::kTimedOut) {
        txns_->abort(txn);
        throw Error(ErrorCode::kDeadlockTimeout,
                    "lock wait on " + r.to_string() + " timed out; transaction " +
                        std::to_string(txn.id()) + " aborted");
    }
}

QueueDescriptor Engine::create_queue(const std::string& name, Durability durability, Ordering ordering) {
    if (name.empty() || name.size() > 255) throw Error(ErrorCode::kUsage, "queue name must be 1..255 bytes");
    for (unsigned char c : name) {
        if (c <= ' ' || c == 0x7f) throw Error(ErrorCode::kUsage, "queue name contains whitespace or control bytes");
    }
    if (failed_) throw Error(ErrorCode::kUnavailable, "engine is in failed state");
    QueueId id;
    {
        std::unique_lock lk(catalog_mu_);
        if (by_name_.count(name) || pending_names_.count(name)) {
            throw Error(ErrorCode::kAlreadyExists, "queue '" + name + "' already exists");
        }
        pending_names_.insert(name);
        id = next_queue_id_.fetch_add(1);
    }
    TxnPtr txn;
    try {
        txn = txns_->begin("catalog");
    } catch (...) {
        std::unique_lock lk(catalog_mu_);
        pending_names_.erase(name);
        throw;
    }
    Effect e;
    e.kind = Effect::Kind::kCreateQueue;
    e.queue_id = id;
    e.queue_name = name;
    e.durability = durability;
    e.ordering = ordering;
    txn->add_effect(std::move(e));
    commit(*txn);
    auto q = lookup(id);
    if (!q) throw Error(ErrorCode::kInternal, "created queue missing from catalog");
    std::lock_guard lk(q->mu);
    return q->desc;
}

void Engine::destroy_queue(Transaction& txn, const std::string& name) {
    std::unique_lock op(txn.op_mutex());
    check_txn(txn);
    auto q = lookup(name);
    acquire_or_throw(txn, lock::ResourceId::catalog(q->desc.queue_id), lock::LockMode::kExclusive);
    {
        std::lock_guard lk(q->mu);
        if (q->destroyed) throw not_found(name);
    }
    for (const auto& e : txn.effects()) {
        if (e.kind == Effect::Kind::kDestroyQueue && e.queue_id == q->desc.queue_id) throw not_found(name);
    }
    Effect e;
    e.kind = Effect::Kind::kDestroyQueue;
    e.queue_id = q->desc.queue_id;
    e.queue_name = name;
    txn.add_effect(std::move(e));
    QueueId qid = q->desc.queue_id;
    txn.defer([this, qid] {
        pools_->on_queue_destroyed(qid);
        triggers_->drop_queue(qid);
    });
}

void Engine::destroy_queue(const std::string& name) {
    auto txn = begin("catalog");
    try {
        destroy_queue(*txn, name);
    } catch (...) {
        if (txn->state() == TxnState::kActive) abort(*txn);
        throw;
    }
    commit(*txn);
}

MessageId Engine::enqueue(Transaction& txn, const std::string& queue, int64_t priority, std::string payload) {
    QueuePtr q;
    MessageId id;
    {
        std::unique_lock op(txn.op_mutex());
        check_txn(txn);
        q = lookup(queue);
        check_operational(*q);
        if (payload.size() > options_.max_payload) {
            throw Error(ErrorCode::kUsage, "payload of " + std::to_string(payload.size()) +
                                               " bytes exceeds the limit of " +
                                               std::to_string(options_.max_payload));
        }
        const QueueId qid = q->desc.queue_id;
        acquire_or_throw(txn, lock::ResourceId::catalog(qid), lock::LockMode::kShared);
        check_operational(*q);
        id = next_message_id_.fetch_add(1);
        acquire_or_throw(txn, lock::ResourceId::record(qid, id), lock::LockMode::kExclusive);

        Effect e;
        e.kind = Effect::Kind::kInsert;
        e.queue_id = qid;
        e.message_id = id;
        e.priority = q->desc.ordering == Ordering::kFifo ? 0 : priority;
        e.durable = q->desc.durability == Durability::kDurable;
        {
            std::lock_guard lk(q->mu);
            OrderKey key{e.priority, kUncommittedSeq, id};
            Entry entry;
            entry.id = id;
            entry.priority = e.priority;
            entry.payload = payload;
            entry.seq = kUncommittedSeq;
            entry.inserter = txn.id();
            q->entries.emplace(key, std::move(entry));
            q->index.emplace(id, key);
            ++q->dirty_inserts;
        }
        e.payload = std::move(payload);
        txn.add_effect(std::move(e));
    }
    fire_triggers(txn, *q, id, true);
    return id;
}

std::optional<Message> Engine::take_entry(Transaction& txn, QueueData& q, Entry& e) {
    // Caller holds q.mu.
    auto res = locks_->acquire(txn.id(), lock::ResourceId::record(q.desc.queue_id, e.id),
                               lock::LockMode::kExclusive, lock::AccessVariant::kReadPast);
    if (res.status != lock::AcquireStatus::kGranted) return std::nullopt;
    e.deleter = txn.id();
    --q.available;
    ++q.dirty_deletes;

    Message m;
    m.message_id = e.id;
    m.queue_id = q.desc.queue_id;
    m.priority = e.priority;
    m.payload = e.payload;
    m.enqueue_seq = e.seq;
    m.redeliveries = e.redeliveries;

    Effect eff;
    eff.kind = Effect::Kind::kDelete;
    eff.queue_id = q.desc.queue_id;
    eff.message_id = e.id;
    eff.durable = q.desc.durability == Durability::kDurable;
    txn.add_effect(std::move(eff));
    return m;
}

std::optional<Message> Engine::take_first(Transaction& txn, QueueData& q) {
    std::lock_guard lk(q.mu);
    if (q.available == 0) return std::nullopt;
    for (auto& [key, e] : q.entries) {
        if (e.inserter == txn.id() || e.deleter == txn.id()) continue;
        if (e.inserter != kNoTxn || e.deleter != kNoTxn) {
            // The writer holds X on the record; READ_PAST records the skip without waiting.
            locks_->acquire(txn.id(), lock::ResourceId::record(q.desc.queue_id, e.id), lock::LockMode::kExclusive,
                            lock::AccessVariant::kReadPast);
            continue;
        }
        if (auto m = take_entry(txn, q, e)) return m;
    }
    return std::nullopt;
}

std::optional<Message> Engine::dequeue(Transaction& txn, const std::string& queue, IsolationMode isolation,
                                       WaitSpec wait) {
    QueuePtr q;
    std::optional<Message> out;
    {
        std::unique_lock op(txn.op_mutex());
        check_txn(txn);
        q = lookup(queue);
        check_operational(*q);
        const QueueId qid = q->desc.queue_id;
        if (isolation == IsolationMode::kReadPastDequeue) {
            auto res = locks_->acquire(txn.id(), lock::ResourceId::catalog(qid), lock::LockMode::kShared,
                                       lock::AccessVariant::kReadPast);
            if (res.status != lock::AcquireStatus::kGranted) return std::nullopt;
        } else {
            acquire_or_throw(txn, lock::ResourceId::catalog(qid), lock::LockMode::kShared);
            acquire_or_throw(txn, lock::ResourceId::queue_head(qid), lock::LockMode::kExclusive);
        }

        const auto deadline = std::chrono::steady_clock::now() + wait.timeout;
        std::shared_ptr<lock::Subscription> sub;
        uint64_t seen = 0;
        while (true) {
            check_operational(*q);
            out = take_first(txn, *q);
            if (out || !wait.waits()) break;
            if (!sub) {
                sub = locks_->subscribe_notify(txn.session(), qid);
                seen = sub->sequence();
                continue;
            }
            auto remaining = deadline - std::chrono::steady_clock::now();
            if (remaining <= std::chrono::steady_clock::duration::zero()) break;
            sub->wait_beyond(seen, std::chrono::duration_cast<Duration>(remaining));
            seen = sub->sequence();
        }
    }
    if (out) fire_triggers(txn, *q, out->message_id, false);
    return out;
}

std::optional<Message> Engine::dequeue_by_id(Transaction& txn, const std::string& queue, MessageId id) {
    QueuePtr q;
    std::optional<Message> out;
    {
        std::unique_lock op(txn.op_mutex());
        check_txn(txn);
        q = lookup(queue);
        check_operational(*q);
        auto res = locks_->acquire(txn.id(), lock::ResourceId::catalog(q->desc.queue_id),
                                   lock::LockMode::kShared, lock::AccessVariant::kReadPast);
        if (res.status != lock::AcquireStatus::kGranted) return std::nullopt;
        std::lock_guard lk(q->mu);
        auto it = q->index.find(id);
        if (it == q->index.end()) return std::nullopt;
        Entry& e = q->entries.at(it->second);
        if (e.inserter != kNoTxn || e.deleter != kNoTxn) return std::nullopt;
        out = take_entry(txn, *q, e);
    }
    if (out) fire_triggers(txn, *q, out->message_id, false);
    return out;
}

void Engine::fire_triggers(Transaction& txn, QueueData& q, MessageId id, bool on_enqueue) {
    QueueDescriptor desc;
    {
        std::lock_guard lk(q.mu);
        desc = q.desc;
    }
    try {
        triggers_->fire(txn, desc, id, on_enqueue ? triggers::Event::kOnEnqueue : triggers::Event::kOnDequeue);
    } catch (const std::exception& ex) {
        if (txn.state() == TxnState::kActive) abort(txn);
        throw Error(ErrorCode::kTransactionAborted,
                    std::string("trigger failed, transaction aborted: ") + ex.what());
    }
}

std::vector<QueueId> Engine::apply_commit(Transaction& txn) {
    std::vector<QueueId> nonempty;
    auto note_nonempty = [&](QueueId id) {
        if (std::find(nonempty.begin(), nonempty.end(), id) == nonempty.end()) nonempty.push_back(id);
    };
    for (auto& e : txn.effects()) {
        switch (e.kind) {
            case Effect::Kind::kInsert: {
                auto q = lookup(e.queue_id);
                if (!q) break;
                std::lock_guard lk(q->mu);
                auto it = q->index.find(e.message_id);
                if (it == q->index.end()) break;
                auto node = q->entries.extract(it->second);
                OrderKey key{e.priority, e.lsn, e.message_id};
                node.key() = key;
                node.mapped().seq = e.lsn;
                node.mapped().inserter = kNoTxn;
                bool deleted_too = node.mapped().deleter != kNoTxn;
                q->entries.insert(std::move(node));
                it->second = key;
                --q->dirty_inserts;
                ++q->enqueue_count;
                if (!deleted_too && q->available++ == 0) note_nonempty(e.queue_id);
                break;
            }
            case Effect::Kind::kDelete: {
                auto q = lookup(e.queue_id);
                if (!q) break;
                std::lock_guard lk(q->mu);
                auto it = q->index.find(e.message_id);
                if (it == q->index.end()) break;
                q->entries.erase(it->second);
                q->index.erase(it);
                --q->dirty_deletes;
                ++q->dequeue_count;
                break;
            }
            case Effect::Kind::kCreateQueue: {
                auto q = std::make_shared<QueueData>();
                q->desc.queue_id = e.queue_id;
                q->desc.name = e.queue_name;
                q->desc.durability = e.durability;
                q->desc.ordering = e.ordering;
                q->desc.created_lsn = e.lsn;
                std::unique_lock lk(catalog_mu_);
                pending_names_.erase(e.queue_name);
                by_name_[e.queue_name] = q;
                by_id_[e.queue_id] = q;
                break;
            }
            case Effect::Kind::kDestroyQueue: {
                QueuePtr q;
                {
                    std::unique_lock lk(catalog_mu_);
                    auto it = by_id_.find(e.queue_id);
                    if (it == by_id_.end()) break;
                    q = it->second;
                    by_id_.erase(it);
                    by_name_.erase(q->desc.name);
                }
                {
                    std::lock_guard lk(q->mu);
                    q->destroyed = true;
                }
                locks_->signal(e.queue_id, lock::NotifyReason::kDestroyed);
                break;
            }
        }
    }
    return nonempty;
}

std::vector<QueueId> Engine::rollback(Transaction& txn) {
    std::vector<QueueId> nonempty;
    auto& effects = txn.effects();
    for (auto it = effects.rbegin(); it != effects.rend(); ++it) {
        const Effect& e = *it;
        switch (e.kind) {
            case Effect::Kind::kInsert: {
                auto q = lookup(e.queue_id);
                if (!q) break;
                std::lock_guard lk(q->mu);
                auto idx = q->index.find(e.message_id);
                if (idx == q->index.end()) break;
                q->entries.erase(idx->second);
                q->index.erase(idx);
                --q->dirty_inserts;
                break;
            }
            case Effect::Kind::kDelete: {
                auto q = lookup(e.queue_id);
                if (!q) break;
                std::lock_guard lk(q->mu);
                auto idx = q->index.find(e.message_id);
                if (idx == q->index.end()) break;
                Entry& entry = q->entries.at(idx->second);
                entry.deleter = kNoTxn;
                --q->dirty_deletes;
                if (entry.inserter != kNoTxn) break;  // own insert, removed by its own effect
                ++entry.redeliveries;
                if (q->available++ == 0 &&
                    std::find(nonempty.begin(), nonempty.end(), e.queue_id) == nonempty.end()) {
                    nonempty.push_back(e.queue_id);
                }
                break;
            }
            case Effect::Kind::kCreateQueue: {
                std::unique_lock lk(catalog_mu_);
                pending_names_.erase(e.queue_name);
                break;
            }
            case Effect::Kind::kDestroyQueue:
                break;
        }
    }
    return nonempty;
}

std::vector<PollEntry> Engine::poll(const std::string& queue, PollFilter filter, PollOptions options) {
    auto q = lookup(queue);
    std::vector<PollEntry> out;
    std::lock_guard lk(q->mu);
    auto visit = [&](const Entry& e) {
        PollEntry p;
        p.message_id = e.id;
        p.priority = e.priority;
        p.redeliveries = e.redeliveries;
        if (e.inserter != kNoTxn) {
            p.visibility = Visibility::kUncommittedInsert;
        } else if (e.deleter != kNoTxn) {
            p.visibility = Visibility::kUncommittedDelete;
        }
        if (p.visibility != Visibility::kVisible) {
            if (!options.include_dirty) return;
            auto res = locks_->acquire(kNoTxn, lock::ResourceId::record(q->desc.queue_id, e.id),
                                       lock::LockMode::kShared, lock::AccessVariant::kReadThrough);
            p.writer_txn = res.dirty_writer != kNoTxn
                               ? res.dirty_writer
                               : (e.inserter != kNoTxn ? e.inserter : e.deleter);
        }
        if (e.inserter == kNoTxn) p.enqueue_seq = e.seq;
        bool committed_bytes = p.visibility != Visibility::kUncommittedInsert;
        if ((options.include_payload && committed_bytes) || (options.unsafe_dirty_payload && !committed_bytes)) {
            p.payload = e.payload;
        }
        out.push_back(std::move(p));
    };
    if (filter.message_id) {
        auto it = q->index.find(*filter.message_id);
        if (it != q->index.end()) visit(q->entries.at(it->second));
    } else {
        for (const auto& [key, e] : q->entries) visit(e);
    }
    return out;
}

QueueStats Engine::stats(const std::string& queue) {
    auto q = lookup(queue);
    QueueStats s;
    {
        std::lock_guard lk(q->mu);
        s.descriptor = q->desc;
        s.depth_visible = q->available;
        s.depth_dirty = q->dirty_inserts + q->dirty_deletes;
        s.enqueue_count = q->enqueue_count;
        s.dequeue_count = q->dequeue_count;
    }
    s.lock_waits = locks_->lock_waits(s.descriptor.queue_id);
    return s;
}

std::vector<QueueDescriptor> Engine::list_queues() {
    std::vector<QueuePtr> qs;
    {
        std::shared_lock lk(catalog_mu_);
        for (const auto& [name, q] : by_name_) qs.push_back(q);
    }
    std::vector<QueueDescriptor> out;
    for (const auto& q : qs) {
        std::lock_guard lk(q->mu);
        out.push_back(q->desc);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return out;
}

std::optional<QueueDescriptor> Engine::find_queue(const std::string& name) {
    QueuePtr q;
    {
        std::shared_lock lk(catalog_mu_);
        auto it = by_name_.find(name);
        if (it == by_name_.end()) return std::nullopt;
        q = it->second;
    }
    std::lock_guard lk(q->mu);
    return q->desc;
}

void Engine::set_queue_state(const std::string& name, QueueState state) {
    auto q = lookup(name);
    bool stopped;
    {
        std::lock_guard lk(q->mu);
        stopped = q->desc.state == QueueState::kActive && state != QueueState::kActive;
        q->desc.state = state;
    }
    if (stopped) locks_->signal(q->desc.queue_id, lock::NotifyReason::kStopped);
}

std::shared_ptr<lock::Subscription> Engine::subscribe(const std::string& session, const std::string& queue) {
    auto q = lookup(queue);
    return locks_->subscribe_notify(session, q->desc.queue_id);
}

CheckpointInfo Engine::checkpoint() {
    std::lock_guard cp(checkpoint_mu_);
    if (failed_) throw Error(ErrorCode::kUnavailable, "engine is in failed state");
    auto gate = txns_->quiesce();

    wal::CheckpointImage image;
    image.lsn_at_checkpoint = wal_->last_lsn();
    image.next_txn_id = txns_->next_txn_id();
    image.next_message_id = next_message_id_.load();
    image.next_queue_id = next_queue_id_.load();
    std::vector<QueuePtr> qs;
    {
        std::shared_lock lk(catalog_mu_);
        for (const auto& [id, q] : by_id_) qs.push_back(q);
    }
    std::sort(qs.begin(), qs.end(), [](const auto& a, const auto& b) { return a->desc.queue_id < b->desc.queue_id; });
    for (const auto& q : qs) {
        std::lock_guard lk(q->mu);
        image.queues.push_back(q->desc);
        if (q->desc.durability != Durability::kDurable) continue;
        for (const auto& [key, e] : q->entries) {
            if (e.inserter != kNoTxn) continue;
            image.messages.emplace_back(q->desc.queue_id, wal::RecoveredMessage{e.id, e.priority, e.payload, e.seq});
        }
    }
    try {
        wal::write_checkpoint(*options_.storage, options_.data_dir, image);
        wal_->reset_after_checkpoint();
    } catch (const Error& err) {
        mark_failed();
        throw Error(ErrorCode::kUnavailable, std::string("checkpoint failed: ") + err.what());
    }
    last_checkpoint_lsn_ = image.lsn_at_checkpoint;
    return {image.lsn_at_checkpoint, image.queues.size(), image.messages.size()};
}

EngineSnapshot Engine::snapshot() {
    std::vector<QueuePtr> qs;
    {
        std::shared_lock lk(catalog_mu_);
        for (const auto& [name, q] : by_name_) qs.push_back(q);
    }
    EngineSnapshot snap;
    for (const auto& q : qs) {
        std::lock_guard lk(q->mu);
        EngineSnapshot::Queue out;
        out.name = q->desc.name;
        out.durability = q->desc.durability;
        out.ordering = q->desc.ordering;
        for (const auto& [key, e] : q->entries) {
            if (e.inserter != kNoTxn) continue;
            out.messages.emplace_back(e.id, e.priority, e.payload);
        }
        snap.queues.push_back(std::move(out));
    }
    std::sort(snap.queues.begin(), snap.queues.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return snap;
}

}  // namespace qdb
