#include "qdb/triggers/triggers.hpp"

#include <algorithm>

#include "qdb/engine.hpp"
#include "qdb/error.hpp"
#include "qdb/pool/executor.hpp"

namespace qdb::triggers {

const char* to_string(Event e) { return e == Event::kOnEnqueue ? "ON_ENQUEUE" : "ON_DEQUEUE"; }
const char* to_string(Timing t) { return t == Timing::kImmediate ? "IMMEDIATE" : "DEFERRED"; }
const char* to_string(Scope s) { return s == Scope::kSameTxn ? "SAME_TXN" : "NEW_TOP_LEVEL"; }

TriggerRegistry::TriggerRegistry(Engine& engine) : engine_(engine) {}

TriggerId TriggerRegistry::register_trigger(TriggerSpec spec) {
    if (spec.timing == Timing::kDeferred && spec.scope == Scope::kSameTxn) {
        throw Error(ErrorCode::kUsage, "a DEFERRED trigger cannot run in the committing transaction");
    }
    if (!spec.handler) throw Error(ErrorCode::kUsage, "trigger has no handler");
    auto desc = engine_.find_queue(spec.queue);
    if (!desc) throw Error(ErrorCode::kNotFound, "queue '" + spec.queue + "' not found");

    auto r = std::make_shared<Registered>();
    r->queue_id = desc->queue_id;
    r->spec = std::move(spec);
    std::lock_guard lk(mu_);
    r->id = next_id_++;
    if (r->spec.name.empty()) r->spec.name = "trigger-" + std::to_string(r->id);
    triggers_.push_back(r);
    return r->id;
}

void TriggerRegistry::unregister(TriggerId id) {
    Ptr r;
    {
        std::lock_guard lk(mu_);
        auto it = std::find_if(triggers_.begin(), triggers_.end(), [&](const Ptr& p) { return p->id == id; });
        if (it == triggers_.end()) throw Error(ErrorCode::kNotFound, "trigger " + std::to_string(id) + " not found");
        r = *it;
        triggers_.erase(it);
    }
    std::unique_lock run(r->run_mu);
    r->active = false;
}

void TriggerRegistry::resume(TriggerId id) {
    std::lock_guard lk(mu_);
    for (auto& r : triggers_) {
        if (r->id == id) {
            r->consecutive = 0;
            r->suspended = false;
            return;
        }
    }
    throw Error(ErrorCode::kNotFound, "trigger " + std::to_string(id) + " not found");
}

void TriggerRegistry::drop_queue(QueueId queue) {
    std::vector<Ptr> dropped;
    {
        std::lock_guard lk(mu_);
        auto keep = std::stable_partition(triggers_.begin(), triggers_.end(),
                                          [&](const Ptr& p) { return p->queue_id != queue; });
        dropped.assign(keep, triggers_.end());
        triggers_.erase(keep, triggers_.end());
    }
    for (auto& r : dropped) {
        std::unique_lock run(r->run_mu);
        r->active = false;
    }
}

std::vector<TriggerRegistry::Ptr> TriggerRegistry::matching(QueueId queue, Event event) const {
    std::vector<Ptr> out;
    std::lock_guard lk(mu_);
    for (const auto& r : triggers_) {
        if (r->queue_id == queue && r->spec.event == event) out.push_back(r);
    }
    return out;
}

void TriggerRegistry::fire(Transaction& txn, const QueueDescriptor& queue, MessageId message, Event event) {
    auto found = matching(queue.queue_id, event);
    if (found.empty()) return;
    if (txn.trigger_depth >= kMaxTriggerDepth) {
        throw Error(ErrorCode::kUsage, "trigger nesting deeper than " + std::to_string(kMaxTriggerDepth));
    }

    for (const auto& t : found) {
        FiringContext ctx;
        ctx.trigger_id = t->id;
        ctx.queue_id = queue.queue_id;
        ctx.queue_name = queue.name;
        ctx.message_id = message;
        ctx.event = event;
        ctx.firing_txn = txn.id();

        if (t->spec.scope == Scope::kSameTxn) {
            std::shared_lock run(t->run_mu);
            if (!t->active) continue;
            ctx.txn = &txn;
            ++txn.trigger_depth;
            try {
                t->spec.handler(engine_, ctx);
            } catch (...) {
                --txn.trigger_depth;
                ++t->failures;
                throw;
            }
            --txn.trigger_depth;
            ++t->fired;
            continue;
        }

        if (t->suspended) continue;
        int depth = txn.trigger_depth + 1;
        auto task = [this, t, ctx, depth] { run_top_level(t, ctx, depth); };
        if (t->spec.timing == Timing::kImmediate) {
            engine_.executor().post(task);
        } else {
            txn.defer([this, task] { engine_.executor().post(task); });
        }
    }
}

void TriggerRegistry::run_top_level(const Ptr& t, FiringContext ctx, int depth) {
    std::shared_lock run(t->run_mu);
    if (!t->active || t->suspended) return;
    TxnPtr txn;
    try {
        txn = engine_.begin("trigger-" + std::to_string(t->id));
        txn->trigger_depth = depth;
        ctx.txn = txn.get();
        t->spec.handler(engine_, ctx);
        engine_.commit(*txn);
        ++t->fired;
        t->consecutive = 0;
    } catch (...) {
        if (txn && txn->state() == TxnState::kActive) {
            try {
                engine_.abort(*txn);
            } catch (...) {
            }
        }
        ++t->failures;
        if (++t->consecutive >= kSuspendAfterFailures) t->suspended = true;
    }
}

TriggerStatus TriggerRegistry::describe(const Registered& r) {
    TriggerStatus s;
    s.id = r.id;
    s.name = r.spec.name;
    s.queue_id = r.queue_id;
    s.event = r.spec.event;
    s.timing = r.spec.timing;
    s.scope = r.spec.scope;
    s.fired = r.fired;
    s.failures = r.failures;
    s.consecutive_failures = r.consecutive;
    s.suspended = r.suspended;
    return s;
}

std::vector<TriggerStatus> TriggerRegistry::list() const {
    std::lock_guard lk(mu_);
    std::vector<TriggerStatus> out;
    for (const auto& r : triggers_) out.push_back(describe(*r));
    return out;
}

std::optional<TriggerStatus> TriggerRegistry::status(TriggerId id) const {
    std::lock_guard lk(mu_);
    for (const auto& r : triggers_) {
        if (r->id == id) return describe(*r);
    }
    return std::nullopt;
}

}  // namespace qdb::triggers
