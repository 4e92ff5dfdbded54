#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <stdlib.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "qdb/engine.hpp"
#include "qdb/error.hpp"
#include "qdb/storage.hpp"

namespace qdb::testing {

class TempDir {
 public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "qdb-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
    std::filesystem::path path_;
};

// Options for a quiet engine: no background ticking, no checkpoint on close.
inline EngineOptions quiet_options(const std::filesystem::path& dir) {
    EngineOptions o;
    o.data_dir = dir;
    o.sync = false;
    o.checkpoint_threshold = 1ull << 40;
    o.checkpoint_on_close = false;
    o.pool_auto_tick = false;
    o.executor_threads = 1;
    return o;
}

inline bool wait_until(const std::function<bool()>& pred,
                       std::chrono::milliseconds limit = std::chrono::seconds(5)) {
    auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return pred();
}

// Committed state as the tests believe it to be. Effects are staged per
// transaction and applied only when commit returns.
class ShadowLedger {
 public:
    struct Msg {
        int64_t priority = 0;
        std::string payload;
        uint64_t seq = 0;
    };
    struct Queue {
        Durability durability = Durability::kDurable;
        Ordering ordering = Ordering::kFifo;
        std::map<MessageId, Msg> messages;
    };
    struct Op {
        enum class Kind { kCreate, kDestroy, kInsert, kDelete } kind = Kind::kCreate;
        std::string queue;
        MessageId id = 0;
        int64_t priority = 0;
        std::string payload;
        Durability durability = Durability::kDurable;
        Ordering ordering = Ordering::kFifo;

        static Op create(std::string q, Durability d, Ordering o) {
            Op op = with(Kind::kCreate, std::move(q), 0);
            op.durability = d;
            op.ordering = o;
            return op;
        }
        static Op destroy(std::string q) { return with(Kind::kDestroy, std::move(q), 0); }
        static Op insert(std::string q, MessageId id, int64_t prio, std::string payload) {
            Op op = with(Kind::kInsert, std::move(q), id);
            op.priority = prio;
            op.payload = std::move(payload);
            return op;
        }
        static Op erase(std::string q, MessageId id) { return with(Kind::kDelete, std::move(q), id); }

     private:
        static Op with(Kind k, std::string q, MessageId id) {
            Op op;
            op.kind = k;
            op.queue = std::move(q);
            op.id = id;
            return op;
        }
    };
    using Pending = std::vector<Op>;

    void apply(const Pending& ops) {
        for (const auto& op : ops) {
            switch (op.kind) {
                case Op::Kind::kCreate: queues_[op.queue] = Queue{op.durability, op.ordering, {}}; break;
                case Op::Kind::kDestroy: queues_.erase(op.queue); break;
                case Op::Kind::kInsert:
                    queues_.at(op.queue).messages[op.id] = Msg{op.priority, op.payload, ++seq_};
                    break;
                case Op::Kind::kDelete: queues_.at(op.queue).messages.erase(op.id); break;
            }
        }
    }

    // Committed head of `queue` skipping ids in `taken`.
    std::optional<MessageId> head(const std::string& queue, const std::vector<MessageId>& taken) const {
        const auto& q = queues_.at(queue);
        std::optional<std::pair<std::pair<int64_t, uint64_t>, MessageId>> best;
        for (const auto& [id, m] : q.messages) {
            if (std::find(taken.begin(), taken.end(), id) != taken.end()) continue;
            std::pair<int64_t, uint64_t> key{-m.priority, m.seq};
            if (!best || key < best->first) best = {{key, id}};
        }
        if (!best) return std::nullopt;
        return best->second;
    }

    bool has_queue(const std::string& name) const { return queues_.count(name) != 0; }
    const std::map<std::string, Queue>& queues() const { return queues_; }

    // What an engine should report: dequeue order, volatile contents dropped
    // when `after_restart`.
    EngineSnapshot snapshot(bool after_restart) const {
        EngineSnapshot s;
        for (const auto& [name, q] : queues_) {
            EngineSnapshot::Queue out{name, q.durability, q.ordering, {}};
            if (!(after_restart && q.durability == Durability::kVolatile)) {
                std::vector<std::pair<MessageId, Msg>> v(q.messages.begin(), q.messages.end());
                std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
                    if (a.second.priority != b.second.priority) return a.second.priority > b.second.priority;
                    return a.second.seq < b.second.seq;
                });
                for (const auto& [id, m] : v) out.messages.emplace_back(id, m.priority, m.payload);
            }
            s.queues.push_back(std::move(out));
        }
        return s;
    }

 private:
    std::map<std::string, Queue> queues_;
    uint64_t seq_ = 0;
};

struct CrashRun {
    ShadowLedger committed;
    // Effects of the transaction whose commit was cut off, if any: the crash
    // may or may not have made it durable.
    std::optional<ShadowLedger::Pending> in_flight;
    bool crashed = false;
    bool in_checkpoint = false;  // the crash hit inside checkpoint()
    uint64_t bytes = 0;
    uint64_t operations = 0;
    std::size_t commits = 0;
    std::size_t checkpoints = 0;
    std::string mismatch;  // non-empty when the live engine disagreed with the shadow
};

// Deterministic single-session workload over durable, priority and volatile
// queues with aborts, checkpoints and a destroy, run on storage that "dies"
// once `budget` is used up. Stops at the first failure.
inline CrashRun run_crash_workload(const std::filesystem::path& dir, uint64_t seed,
                                   FaultInjectingStorage::Budget budget, std::size_t txns = 60) {
    CrashRun run;
    auto storage = std::make_shared<FaultInjectingStorage>(std::make_shared<PosixStorage>(true), budget);
    EngineOptions o = quiet_options(dir);
    o.storage = storage;
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    std::unique_ptr<Engine> engine;
    ShadowLedger::Pending pending;
    try {
        engine = Engine::open(o);
        auto create = [&](const std::string& name, Durability d, Ordering ord) {
            pending = {ShadowLedger::Op::create(name, d, ord)};
            engine->create_queue(name, d, ord);
            run.committed.apply(pending);
            pending.clear();
            ++run.commits;
        };
        create("d1", Durability::kDurable, Ordering::kFifo);
        create("d2", Durability::kDurable, Ordering::kPriority);
        create("v1", Durability::kVolatile, Ordering::kFifo);

        for (std::size_t i = 0; i < txns; ++i) {
            if (i == txns / 2) create("d3", Durability::kDurable, Ordering::kPriority);
            if (i > 0 && i % 15 == 0) {
                run.in_checkpoint = true;
                engine->checkpoint();
                run.in_checkpoint = false;
                ++run.checkpoints;
            }
            std::vector<std::string> names;
            for (const auto& [n, q] : run.committed.queues()) names.push_back(n);

            auto txn = engine->begin("crash");
            std::map<std::string, std::vector<MessageId>> taken;
            if (i == (txns * 3) / 4 && run.committed.has_queue("d1")) {
                engine->destroy_queue(*txn, "d1");
                pending.push_back(ShadowLedger::Op::destroy("d1"));
            } else {
                std::size_t ops = 1 + pick(4);
                for (std::size_t k = 0; k < ops; ++k) {
                    const std::string& q = names[pick(names.size())];
                    const auto& desc = run.committed.queues().at(q);
                    if (pick(3) != 0) {
                        int64_t prio = desc.ordering == Ordering::kPriority ? static_cast<int64_t>(pick(7)) - 3 : 0;
                        std::string payload(pick(300), '\0');
                        for (auto& ch : payload) ch = static_cast<char>(rng() & 0xff);
                        MessageId id = engine->enqueue(*txn, q, prio, payload);
                        pending.push_back(ShadowLedger::Op::insert(q, id, prio, payload));
                    } else {
                        auto expect = run.committed.head(q, taken[q]);
                        auto m = engine->dequeue(*txn, q, IsolationMode::kReadPastDequeue);
                        MessageId got = m ? m->message_id : 0;
                        if (got != expect.value_or(0) && run.mismatch.empty()) {
                            run.mismatch = "dequeue on " + q + " returned " + std::to_string(got) + ", expected " +
                                           std::to_string(expect.value_or(0));
                        }
                        if (m) {
                            taken[q].push_back(m->message_id);
                            pending.push_back(ShadowLedger::Op::erase(q, m->message_id));
                        }
                    }
                }
            }
            if (pick(4) == 0) {
                engine->abort(*txn);
                pending.clear();
            } else {
                engine->commit(*txn);
                run.committed.apply(pending);
                pending.clear();
                ++run.commits;
            }
        }
    } catch (const Error&) {
        run.crashed = true;
        if (!pending.empty()) run.in_flight = pending;
    }
    run.bytes = storage->bytes_written();
    run.operations = storage->operations();
    engine.reset();  // no checkpoint: behaves like kill -9
    return run;
}

inline std::unique_ptr<Engine> reopen(const std::filesystem::path& dir) {
    return Engine::open(quiet_options(dir));
}

// Recovered state must equal the committed shadow, or the shadow plus the
// in-flight transaction when its commit was cut off mid-way.
inline bool matches_oracle(const EngineSnapshot& recovered, const CrashRun& run) {
    if (recovered == run.committed.snapshot(true)) return true;
    if (!run.in_flight) return false;
    ShadowLedger with = run.committed;
    with.apply(*run.in_flight);
    return recovered == with.snapshot(true);
}

}  // namespace qdb::testing
