#include <atomic>
#include <thread>

#include "doctest.h"
#include "qdb/error.hpp"
#include "qdb/lockmgr/lock_manager.hpp"
#include "support.hpp"

using namespace qdb;
using namespace qdb::lock;
using namespace std::chrono_literals;
using qdb::testing::wait_until;

namespace {

const ResourceId kRec = ResourceId::record(1, 10);

struct Fixture {
    std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>();
    LockManager lm{clock, 5s};
    std::vector<LockEvent> events;
    std::mutex mu;

    Fixture() {
        lm.set_observer([this](const LockEvent& e) {
            std::lock_guard lk(mu);
            events.push_back(e);
        });
    }
    std::size_t count(LockEvent::Kind k, TxnId t) {
        std::lock_guard lk(mu);
        return std::count_if(events.begin(), events.end(), [&](const auto& e) { return e.kind == k && e.txn == t; });
    }
};

enum class Expect { kGranted, kSkipped, kDirty, kTimedOut, kUsage };

// Hand-written truth table. held: 0 none, 1 S, 2 X.
Expect reference(int held, LockMode req, AccessVariant v) {
    bool compatible = held == 0 || (held == 1 && req == LockMode::kShared);
    switch (v) {
        case AccessVariant::kReadThrough: return req == LockMode::kShared ? Expect::kDirty : Expect::kUsage;
        case AccessVariant::kReadPast: return compatible ? Expect::kGranted : Expect::kSkipped;
        case AccessVariant::kWait: return compatible ? Expect::kGranted : Expect::kTimedOut;
        default: return Expect::kUsage;
    }
}

}  // namespace

TEST_CASE("compatibility is exactly S/S") {
    CHECK(compatible(LockMode::kShared, LockMode::kShared));
    CHECK_FALSE(compatible(LockMode::kShared, LockMode::kExclusive));
    CHECK_FALSE(compatible(LockMode::kExclusive, LockMode::kShared));
    CHECK_FALSE(compatible(LockMode::kExclusive, LockMode::kExclusive));
}

TEST_CASE("grant and deny over every (held, requested, variant) triple match the reference") {
    const AccessVariant variants[] = {AccessVariant::kWait, AccessVariant::kReadPast, AccessVariant::kReadThrough};
    const LockMode modes[] = {LockMode::kShared, LockMode::kExclusive};
    int cases = 0;
    for (int held = 0; held < 3; ++held) {
        for (LockMode req : modes) {
            for (AccessVariant v : variants) {
                Fixture f;
                f.lm.register_txn(1);
                f.lm.register_txn(2);
                if (held) f.lm.acquire(1, kRec, held == 1 ? LockMode::kShared : LockMode::kExclusive, AccessVariant::kWait);
                Expect want = reference(held, req, v);
                CAPTURE(held);
                CAPTURE(to_string(req));
                CAPTURE(to_string(v));
                Expect got = Expect::kUsage;
                TxnId dirty = kNoTxn;
                try {
                    auto r = f.lm.acquire(2, kRec, req, v, 30ms);
                    dirty = r.dirty_writer;
                    switch (r.status) {
                        case AcquireStatus::kGranted: got = Expect::kGranted; break;
                        case AcquireStatus::kSkipped: got = Expect::kSkipped; break;
                        case AcquireStatus::kDirtyGranted: got = Expect::kDirty; break;
                        case AcquireStatus::kTimedOut: got = Expect::kTimedOut; break;
                    }
                } catch (const Error& e) {
                    CHECK(e.code() == ErrorCode::kUsage);
                    got = Expect::kUsage;
                }
                CHECK(static_cast<int>(got) == static_cast<int>(want));
                if (got == Expect::kDirty) CHECK(dirty == (held == 2 ? TxnId{1} : kNoTxn));
                // Only WAIT may ever enter the wait list; READ_THROUGH never holds.
                if (v != AccessVariant::kWait) CHECK(f.count(LockEvent::Kind::kWaitEnqueued, 2) == 0);
                if (v == AccessVariant::kReadThrough) {
                    for (const auto& [t, m] : f.lm.holders(kRec)) CHECK(t != 2);
                }
                CHECK(f.lm.audit().empty());
                ++cases;
            }
        }
    }
    CHECK(cases == 18);
}

TEST_CASE("usage and stale-transaction errors") {
    Fixture f;
    f.lm.register_txn(1);
    CHECK_THROWS_AS(f.lm.acquire(1, kRec, LockMode::kShared, AccessVariant::kNotify), Error);
    try {
        f.lm.acquire(99, kRec, LockMode::kShared, AccessVariant::kWait);
        FAIL("expected stale transaction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kStaleTransaction);
    }
    f.lm.acquire(1, kRec, LockMode::kShared, AccessVariant::kWait);
    f.lm.release_all(1);
    // Strict two-phase: nothing after the release point.
    CHECK_THROWS_AS(f.lm.acquire(1, kRec, LockMode::kShared, AccessVariant::kWait), Error);
}

TEST_CASE("release_all hands the lock to a waiter and is a no-op when nothing is held") {
    Fixture f;
    f.lm.register_txn(1);
    f.lm.register_txn(2);
    f.lm.register_txn(3);
    f.lm.release_all(3);
    f.lm.acquire(1, kRec, LockMode::kExclusive, AccessVariant::kWait);
    std::atomic<int> status{-1};
    std::thread t([&] { status = static_cast<int>(f.lm.acquire(2, kRec, LockMode::kShared, AccessVariant::kWait).status); });
    REQUIRE(wait_until([&] { return f.lm.waiter_count(kRec) == 1; }));
    f.lm.release_all(1);
    t.join();
    CHECK(status == static_cast<int>(AcquireStatus::kGranted));
    CHECK(f.lm.holders(kRec) == std::vector<std::pair<TxnId, LockMode>>{{2, LockMode::kShared}});
}

TEST_CASE("waiters are granted FIFO with compatible batching") {
    Fixture f;
    for (TxnId t = 1; t <= 4; ++t) f.lm.register_txn(t);
    f.lm.acquire(1, kRec, LockMode::kExclusive, AccessVariant::kWait);
    std::vector<std::thread> ts;
    const LockMode order[] = {LockMode::kShared, LockMode::kShared, LockMode::kExclusive};
    for (TxnId t = 2; t <= 4; ++t) {
        ts.emplace_back([&, t] { f.lm.acquire(t, kRec, order[t - 2], AccessVariant::kWait); });
        REQUIRE(wait_until([&] { return f.lm.waiter_count(kRec) == t - 1; }));
    }
    f.lm.release_all(1);
    REQUIRE(wait_until([&] { return f.lm.holders(kRec).size() == 2; }));
    auto h = f.lm.holders(kRec);
    std::sort(h.begin(), h.end());
    CHECK(h == std::vector<std::pair<TxnId, LockMode>>{{2, LockMode::kShared}, {3, LockMode::kShared}});
    CHECK(f.lm.waiter_count(kRec) == 1);
    CHECK(f.lm.audit().empty());
    f.lm.release_all(2);
    f.lm.release_all(3);
    for (auto& t : ts) t.join();
    CHECK(f.lm.holders(kRec) == std::vector<std::pair<TxnId, LockMode>>{{4, LockMode::kExclusive}});
}

TEST_CASE("a two-transaction deadlock is broken by timeout") {
    Fixture f;
    const auto r1 = ResourceId::record(1, 1);
    const auto r2 = ResourceId::record(1, 2);
    f.lm.register_txn(1);
    f.lm.register_txn(2);
    f.lm.acquire(1, r1, LockMode::kExclusive, AccessVariant::kWait);
    f.lm.acquire(2, r2, LockMode::kExclusive, AccessVariant::kWait);
    auto start = std::chrono::steady_clock::now();
    std::atomic<int> timed_out{0};
    auto cross = [&](TxnId t, const ResourceId& r) {
        if (f.lm.acquire(t, r, LockMode::kExclusive, AccessVariant::kWait, 100ms).status == AcquireStatus::kTimedOut) {
            ++timed_out;
            f.lm.release_all(t);
        }
    };
    std::thread a(cross, 1, r2);
    std::thread b(cross, 2, r1);
    a.join();
    b.join();
    CHECK(timed_out >= 1);
    CHECK(std::chrono::steady_clock::now() - start < 200ms + 100ms);  // slack for the poll slice
}

TEST_CASE("timeout victims are marked and refused further locks") {
    auto clock = std::make_shared<ManualClock>();
    LockManager lm(clock, 100ms);
    lm.register_txn(1);
    lm.register_txn(2);
    CHECK(lm.detect_timeout_victims().empty());
    lm.acquire(1, kRec, LockMode::kExclusive, AccessVariant::kWait);
    std::atomic<int> status{-1};
    std::thread t([&] { status = static_cast<int>(lm.acquire(2, kRec, LockMode::kExclusive, AccessVariant::kWait).status); });
    REQUIRE(wait_until([&] { return lm.waiter_count(kRec) == 1; }));
    clock->advance(150ms);
    auto victims = lm.detect_timeout_victims();
    t.join();
    CHECK(status == static_cast<int>(AcquireStatus::kTimedOut));
    CHECK(lm.abort_required(2));
    CHECK(std::find(victims.begin(), victims.end(), TxnId{2}) != victims.end());
    try {
        lm.acquire(2, ResourceId::record(1, 11), LockMode::kShared, AccessVariant::kWait);
        FAIL("expected deadlock-timeout");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kDeadlockTimeout);
    }
}

TEST_CASE("a waiter granted just before its deadline is not a victim") {
    auto clock = std::make_shared<ManualClock>();
    LockManager lm(clock, 100ms);
    lm.register_txn(1);
    lm.register_txn(2);
    lm.acquire(1, kRec, LockMode::kExclusive, AccessVariant::kWait);
    std::atomic<int> status{-1};
    std::thread t([&] { status = static_cast<int>(lm.acquire(2, kRec, LockMode::kExclusive, AccessVariant::kWait).status); });
    REQUIRE(wait_until([&] { return lm.waiter_count(kRec) == 1; }));
    clock->advance(99ms);
    lm.release_all(1);
    t.join();
    clock->advance(1s);
    CHECK(lm.detect_timeout_victims().empty());
    CHECK(status == static_cast<int>(AcquireStatus::kGranted));
    CHECK_FALSE(lm.abort_required(2));
}

TEST_CASE("notify subscriptions are edge signals with reasons") {
    Fixture f;
    auto sub = f.lm.subscribe_notify("s", 7);
    uint64_t seen = sub->sequence();
    CHECK_FALSE(sub->wait_beyond(seen, 10ms));
    f.lm.register_txn(1);
    f.lm.release_all(1);  // no queue became non-empty
    CHECK(sub->sequence() == seen);
    QueueId q = 7;
    f.lm.register_txn(2);
    f.lm.release_all(2, std::span(&q, 1));
    CHECK(sub->wait_beyond(seen, 10ms));
    CHECK(sub->last_reason() == NotifyReason::kNonEmpty);
    seen = sub->sequence();
    f.lm.signal(7, NotifyReason::kDestroyed);
    CHECK(sub->wait_beyond(seen, 10ms));
    CHECK(sub->last_reason() == NotifyReason::kDestroyed);
    CHECK(f.lm.summary().subscribers >= 1);
}

TEST_CASE("dump renders one line per resource with holders and waiters") {
    Fixture f;
    f.lm.register_txn(1);
    f.lm.register_txn(2);
    f.lm.acquire(1, ResourceId::queue_head(3), LockMode::kExclusive, AccessVariant::kWait);
    f.lm.acquire(2, kRec, LockMode::kShared, AccessVariant::kWait);
    f.lm.acquire(1, kRec, LockMode::kShared, AccessVariant::kWait);
    std::string d = f.lm.dump();
    CHECK(std::count(d.begin(), d.end(), '\n') == 2);
    CHECK(d.find("holders=[t1:X]") != std::string::npos);
    CHECK(d.find("t2:S") != std::string::npos);
    auto s = f.lm.summary();
    CHECK(s.resources == 2);
    CHECK(s.holders == 3);
    CHECK(s.waiters == 0);
}

TEST_CASE("random schedules never break holder compatibility") {
    Fixture f;
    std::atomic<bool> stop{false};
    std::vector<std::string> problems;
    std::mutex pm;
    std::thread auditor([&] {
        while (!stop) {
            auto a = f.lm.audit();
            if (!a.empty()) {
                std::lock_guard lk(pm);
                problems.insert(problems.end(), a.begin(), a.end());
            }
            std::this_thread::yield();
        }
    });
    std::atomic<TxnId> next{1};
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&, w] {
            std::mt19937 rng(w);
            for (int i = 0; i < 200; ++i) {
                TxnId t = next++;
                f.lm.register_txn(t);
                for (int k = 0; k < 3; ++k) {
                    auto r = ResourceId::record(1, rng() % 4);
                    auto mode = rng() % 2 ? LockMode::kShared : LockMode::kExclusive;
                    auto v = rng() % 2 ? AccessVariant::kWait : AccessVariant::kReadPast;
                    auto res = f.lm.acquire(t, r, mode, v, 50ms);
                    if (res.status == AcquireStatus::kTimedOut) break;
                }
                f.lm.release_all(t);
            }
        });
    }
    for (auto& t : workers) t.join();
    stop = true;
    auditor.join();
    CHECK(problems.empty());
    CHECK(f.lm.summary().holders == 0);
}
