#include "qdb/error.hpp"
#include "qdb/txn/transaction.hpp"

namespace qdb {

const char* to_string(TxnState s) {
    switch (s) {
        case TxnState::kActive: return "ACTIVE";
        case TxnState::kCommitting: return "COMMITTING";
        case TxnState::kCommitted: return "COMMITTED";
        case TxnState::kAborted: return "ABORTED";
    }
    return "?";
}

TxnManager::TxnManager(wal::Wal& wal, lock::LockManager& locks, TxnParticipant& participant,
                       TxnId next_id)
    : wal_(wal), locks_(locks), participant_(participant), next_id_(next_id) {}

TxnPtr TxnManager::begin(std::string session) {
    if (unavailable_ || wal_.failed()) throw Error(ErrorCode::kUnavailable, "engine is in failed state");
    auto txn = std::make_shared<Transaction>(next_id_.fetch_add(1), std::move(session));
    locks_.register_txn(txn->id());
    std::lock_guard lk(stats_mu_);
    ++counters_.begun;
    ++active_;
    return txn;
}

void TxnManager::rollback_and_release(Transaction& txn) {
    std::vector<QueueId> available = participant_.rollback(txn);
    txn.effects_.clear();
    txn.deferred_.clear();
    txn.state_ = TxnState::kAborted;
    locks_.release_all(txn.id(), available);
    std::lock_guard lk(stats_mu_);
    ++counters_.aborted;
    --active_;
}

void TxnManager::commit(Transaction& txn) {
    TxnState st = txn.state();
    if (st != TxnState::kActive) {
        throw Error(ErrorCode::kUsage, "cannot commit transaction " + std::to_string(txn.id()) +
                                           " in state " + to_string(st));
    }
    if (locks_.abort_required(txn.id())) {
        rollback_and_release(txn);
        throw Error(ErrorCode::kDeadlockTimeout,
                    "transaction " + std::to_string(txn.id()) + " was a lock-timeout victim; aborted");
    }
    txn.state_ = TxnState::kCommitting;

    std::vector<QueueId> nonempty;
    if (!txn.effects_.empty()) {
        std::shared_lock gate(commit_gate_);

        std::vector<wal::LogRecord> records;
        records.reserve(txn.effects_.size() + 2);
        std::vector<Effect*> logged;
        std::vector<Effect*> volatile_inserts;
        for (auto& e : txn.effects_) {
            if (!e.durable) {
                if (e.kind == Effect::Kind::kInsert) volatile_inserts.push_back(&e);
                continue;
            }
            switch (e.kind) {
                case Effect::Kind::kInsert:
                    records.push_back(wal::LogRecord::insert(txn.id(), e.queue_id, e.message_id,
                                                             e.priority, e.payload));
                    break;
                case Effect::Kind::kDelete:
                    records.push_back(wal::LogRecord::erase(txn.id(), e.queue_id, e.message_id));
                    break;
                case Effect::Kind::kCreateQueue:
                    records.push_back(wal::LogRecord::create_queue(txn.id(), e.queue_id, e.queue_name,
                                                                   e.durability, e.ordering));
                    break;
                case Effect::Kind::kDestroyQueue:
                    records.push_back(wal::LogRecord::destroy_queue(txn.id(), e.queue_id));
                    break;
            }
            logged.push_back(&e);
        }
        bool log_it = !records.empty();
        if (log_it) {
            records.insert(records.begin(), wal::LogRecord::begin(txn.id()));
            records.push_back(wal::LogRecord::commit(txn.id()));
        }

        try {
            wal::BatchLsns lsns = wal_.append_batch(records, volatile_inserts.size());
            for (std::size_t i = 0; i < logged.size(); ++i) logged[i]->lsn = records[i + 1].lsn;
            for (std::size_t i = 0; i < volatile_inserts.size(); ++i) {
                volatile_inserts[i]->lsn = lsns.first_reserved + i;
            }
            if (log_it) wal_.flush_through(lsns.last_record);
        } catch (const Error& err) {
            gate.unlock();
            bool io = err.code() == ErrorCode::kIo || wal_.failed();
            if (io && on_failure_) on_failure_();
            rollback_and_release(txn);
            throw Error(ErrorCode::kUnavailable,
                        std::string("commit failed, log unavailable: ") + err.what());
        }

        nonempty = participant_.apply_commit(txn);
        txn.state_ = TxnState::kCommitted;
        std::lock_guard lk(stats_mu_);
        if (log_it) ++counters_.logged_commits;
    } else {
        txn.state_ = TxnState::kCommitted;
    }

    locks_.release_all(txn.id(), nonempty);
    {
        std::lock_guard lk(stats_mu_);
        ++counters_.committed;
        --active_;
    }
    auto deferred = std::move(txn.deferred_);
    txn.deferred_.clear();
    for (auto& fn : deferred) fn();
}

void TxnManager::abort(Transaction& txn) {
    TxnState st = txn.state();
    if (st == TxnState::kAborted) return;
    if (st != TxnState::kActive) {
        throw Error(ErrorCode::kUsage, "cannot abort transaction " + std::to_string(txn.id()) +
                                           " in state " + to_string(st));
    }
    rollback_and_release(txn);
}

std::unique_lock<std::shared_mutex> TxnManager::quiesce() {
    return std::unique_lock<std::shared_mutex>(commit_gate_);
}

TxnCounters TxnManager::counters() const {
    std::lock_guard lk(stats_mu_);
    return counters_;
}

std::size_t TxnManager::active_count() const {
    std::lock_guard lk(stats_mu_);
    return active_;
}

}  // namespace qdb
