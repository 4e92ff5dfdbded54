#include <atomic>

#include "doctest.h"
#include "qdb/pool/executor.hpp"
#include "qdb/triggers/triggers.hpp"
#include "support.hpp"

using namespace qdb;
using namespace qdb::triggers;
using qdb::testing::TempDir;

namespace {

struct Fixture {
    TempDir dir;
    std::unique_ptr<Engine> e = Engine::open(testing::quiet_options(dir.path()));

    Fixture() {
        e->create_queue("src", Durability::kDurable, Ordering::kFifo);
        e->create_queue("audit", Durability::kDurable, Ordering::kFifo);
    }
    uint64_t depth(const std::string& q) { return e->stats(q).depth_visible; }
    // Copies each message id into `audit` inside the firing transaction.
    TriggerId mirror(Timing timing, Scope scope, Event event = Event::kOnEnqueue) {
        return e->triggers().register_trigger({"src", event, timing, scope, [](Engine& eng, const FiringContext& c) {
                                                   eng.enqueue(*c.txn, "audit", 0, std::to_string(c.message_id));
                                               }});
    }
};

}  // namespace

TEST_CASE("SAME_TXN trigger effects commit and abort with the firing transaction") {
    Fixture f;
    f.mirror(Timing::kImmediate, Scope::kSameTxn);
    auto t = f.e->begin();
    f.e->enqueue(*t, "src", 0, "x");
    f.e->abort(*t);
    CHECK(f.depth("audit") == 0);
    auto u = f.e->begin();
    f.e->enqueue(*u, "src", 0, "y");
    f.e->commit(*u);
    CHECK(f.depth("audit") == 1);
}

TEST_CASE("registration validation") {
    Fixture f;
    auto code = [&](TriggerSpec spec) {
        try {
            f.e->triggers().register_trigger(std::move(spec));
        } catch (const Error& err) {
            return err.code();
        }
        return ErrorCode::kInternal;
    };
    auto noop = [](Engine&, const FiringContext&) {};
    CHECK(code({"src", Event::kOnEnqueue, Timing::kDeferred, Scope::kSameTxn, noop}) == ErrorCode::kUsage);
    CHECK(code({"src", Event::kOnEnqueue, Timing::kImmediate, Scope::kSameTxn, nullptr}) == ErrorCode::kUsage);
    CHECK(code({"missing", Event::kOnEnqueue, Timing::kImmediate, Scope::kSameTxn, noop}) == ErrorCode::kNotFound);
    CHECK(f.e->triggers().list().empty());
}

TEST_CASE("triggers fire in registration order and unregister is final") {
    Fixture f;
    std::vector<int> order;
    std::vector<TriggerId> ids;
    for (int i = 0; i < 3; ++i) {
        ids.push_back(f.e->triggers().register_trigger(
            {"src", Event::kOnDequeue, Timing::kImmediate, Scope::kSameTxn,
             [&order, i](Engine&, const FiringContext&) { order.push_back(i); }}));
    }
    auto t = f.e->begin();
    f.e->enqueue(*t, "src", 0, "a");
    f.e->enqueue(*t, "src", 0, "b");
    f.e->commit(*t);
    CHECK(order.empty());  // enqueue events only
    auto u = f.e->begin();
    f.e->dequeue(*u, "src", IsolationMode::kReadPastDequeue);
    f.e->commit(*u);
    CHECK(order == std::vector<int>{0, 1, 2});

    f.e->triggers().unregister(ids[1]);
    try {
        f.e->triggers().unregister(ids[1]);
        FAIL("second unregister must fail");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::kNotFound);
    }
    order.clear();
    auto v = f.e->begin();
    f.e->dequeue(*v, "src", IsolationMode::kReadPastDequeue);
    f.e->commit(*v);
    CHECK(order == std::vector<int>{0, 2});
}

TEST_CASE("a failing SAME_TXN trigger aborts the firing transaction") {
    Fixture f;
    f.e->triggers().register_trigger({"src", Event::kOnEnqueue, Timing::kImmediate, Scope::kSameTxn,
                                      [](Engine&, const FiringContext&) { throw std::runtime_error("no"); }});
    auto t = f.e->begin();
    try {
        f.e->enqueue(*t, "src", 0, "x");
        FAIL("expected abort");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::kTransactionAborted);
    }
    CHECK(t->state() == TxnState::kAborted);
    CHECK(f.depth("src") == 0);
    CHECK(f.e->triggers().list().at(0).failures == 1);
}

TEST_CASE("DEFERRED fires once per committing transaction and never for aborts") {
    Fixture f;
    f.mirror(Timing::kDeferred, Scope::kNewTopLevel);
    std::mt19937 rng(11);
    uint64_t committed_enqueues = 0;
    for (int i = 0; i < 40; ++i) {
        auto t = f.e->begin();
        int n = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n; ++k) f.e->enqueue(*t, "src", 0, "m");
        if (rng() % 3 == 0) {
            f.e->abort(*t);
        } else {
            f.e->commit(*t);
            committed_enqueues += n;
        }
    }
    f.e->executor().wait_idle();
    CHECK(f.depth("audit") == committed_enqueues);
    CHECK(f.e->triggers().list().at(0).fired == committed_enqueues);
}

TEST_CASE("NEW_TOP_LEVEL failures are isolated and suspend the trigger after 5 in a row") {
    Fixture f;
    std::atomic<int> calls{0};
    auto id = f.e->triggers().register_trigger(
        {"src", Event::kOnEnqueue, Timing::kImmediate, Scope::kNewTopLevel, [&](Engine& eng, const FiringContext& c) {
             ++calls;
             eng.enqueue(*c.txn, "audit", 0, "partial");
             throw std::runtime_error("handler failed");
         }});
    for (int i = 0; i < 7; ++i) {
        auto t = f.e->begin();
        f.e->enqueue(*t, "src", 0, "m");
        f.e->commit(*t);
        f.e->executor().wait_idle();
    }
    CHECK(f.depth("src") == 7);
    CHECK(f.depth("audit") == 0);
    CHECK(calls == static_cast<int>(kSuspendAfterFailures));
    auto st = f.e->triggers().status(id);
    REQUIRE(st);
    CHECK(st->suspended);
    CHECK(st->failures == kSuspendAfterFailures);

    f.e->triggers().resume(id);
    auto t = f.e->begin();
    f.e->enqueue(*t, "src", 0, "m");
    f.e->commit(*t);
    f.e->executor().wait_idle();
    CHECK(calls == static_cast<int>(kSuspendAfterFailures) + 1);
}

TEST_CASE("destroying a queue drops its triggers") {
    Fixture f;
    f.mirror(Timing::kImmediate, Scope::kSameTxn);
    f.e->destroy_queue("src");
    CHECK(f.e->triggers().list().empty());
}

TEST_CASE("runaway trigger recursion is cut off") {
    Fixture f;
    f.e->triggers().register_trigger({"src", Event::kOnEnqueue, Timing::kImmediate, Scope::kSameTxn,
                                      [](Engine& eng, const FiringContext& c) {
                                          eng.enqueue(*c.txn, "src", 0, "again");
                                      }});
    auto t = f.e->begin();
    CHECK_THROWS_AS(f.e->enqueue(*t, "src", 0, "x"), Error);
    CHECK(t->state() == TxnState::kAborted);
    CHECK(f.depth("src") == 0);
}

TEST_CASE("100 random transactions: SAME_TXN effects match commits exactly") {
    Fixture f;
    f.mirror(Timing::kImmediate, Scope::kSameTxn);
    f.mirror(Timing::kImmediate, Scope::kSameTxn, Event::kOnDequeue);
    std::mt19937 rng(3);
    uint64_t enq = 0;
    uint64_t deq = 0;
    for (int i = 0; i < 100; ++i) {
        auto t = f.e->begin();
        uint64_t e_here = 0;
        uint64_t d_here = 0;
        for (int k = 0; k < 3; ++k) {
            if (rng() % 2) {
                f.e->enqueue(*t, "src", 0, "m");
                ++e_here;
            } else if (f.e->dequeue(*t, "src", IsolationMode::kReadPastDequeue)) {
                ++d_here;
            }
        }
        if (rng() % 4 == 0) {
            f.e->abort(*t);
        } else {
            f.e->commit(*t);
            enq += e_here;
            deq += d_here;
        }
    }
    CHECK(f.depth("audit") == enq + deq);
    CHECK(f.depth("src") == enq - deq);
}
