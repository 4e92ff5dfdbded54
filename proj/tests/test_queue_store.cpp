#include <atomic>
#include <set>
#include <thread>

#include "doctest.h"
#include "support.hpp"

using namespace qdb;
using namespace std::chrono_literals;
using qdb::testing::ShadowLedger;
using qdb::testing::TempDir;
using qdb::testing::wait_until;

namespace {

constexpr auto kRP = IsolationMode::kReadPastDequeue;
constexpr auto kSer = IsolationMode::kSerializable;

struct Store {
    TempDir dir;
    std::unique_ptr<Engine> e;

    explicit Store(Duration lock_timeout = 2s) {
        auto o = testing::quiet_options(dir.path());
        o.lock_timeout = lock_timeout;
        e = Engine::open(o);
    }

    void put(const std::string& q, int64_t prio, const std::string& payload) {
        auto t = e->begin();
        e->enqueue(*t, q, prio, payload);
        e->commit(*t);
    }
    std::string take(const std::string& q) {
        auto t = e->begin();
        auto m = e->dequeue(*t, q, kRP);
        e->commit(*t);
        return m ? m->payload : "";
    }
};

}  // namespace

TEST_CASE("priority queues dequeue highest first, fifo queues ignore priority") {
    Store s;
    s.e->create_queue("p", Durability::kDurable, Ordering::kPriority);
    s.e->create_queue("f", Durability::kDurable, Ordering::kFifo);
    for (int p : {1, 5, 3}) {
        s.put("p", p, "p" + std::to_string(p));
        s.put("f", p, "f" + std::to_string(p));
    }
    CHECK(s.take("p") == "p5");
    CHECK(s.take("p") == "p3");
    CHECK(s.take("p") == "p1");
    CHECK(s.take("f") == "f1");
    CHECK(s.take("f") == "f5");
    CHECK(s.take("f") == "f3");
    CHECK(s.take("f").empty());
}

TEST_CASE("random enqueues drain in (priority desc, arrival asc) order") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kPriority);
    std::mt19937 rng(7);
    std::vector<std::pair<int64_t, int>> oracle;
    for (int i = 0; i < 100; ++i) {
        int64_t prio = static_cast<int64_t>(rng() % 9) - 4;
        s.put("q", prio, std::to_string(i));
        oracle.emplace_back(-prio, i);
    }
    std::stable_sort(oracle.begin(), oracle.end());
    for (const auto& [neg, i] : oracle) CHECK(s.take("q") == std::to_string(i));
}

TEST_CASE("READ_PAST skips a dirty head and returns the next committed message") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    s.put("q", 0, "a");
    s.put("q", 0, "b");
    auto t1 = s.e->begin();
    REQUIRE(s.e->dequeue(*t1, "q", kRP)->payload == "a");
    auto t2 = s.e->begin();
    auto start = std::chrono::steady_clock::now();
    auto m = s.e->dequeue(*t2, "q", kRP);
    CHECK(std::chrono::steady_clock::now() - start < 100ms);
    REQUIRE(m);
    CHECK(m->payload == "b");
    // Uncommitted inserts are invisible to other dequeuers.
    auto t3 = s.e->begin();
    s.e->enqueue(*t3, "q", 0, "c");
    auto t4 = s.e->begin();
    CHECK_FALSE(s.e->dequeue(*t4, "q", kRP));
    for (auto* t : {t1.get(), t2.get(), t3.get(), t4.get()}) s.e->commit(*t);
    CHECK(s.take("q") == "c");
}

TEST_CASE("serializable dequeue blocks behind another serializable dequeuer") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    s.put("q", 0, "a");
    s.put("q", 0, "b");
    auto t1 = s.e->begin();
    REQUIRE(s.e->dequeue(*t1, "q", kSer)->payload == "a");
    std::atomic<bool> done{false};
    std::string got;
    std::thread th([&] {
        auto t2 = s.e->begin();
        auto m = s.e->dequeue(*t2, "q", kSer);
        got = m ? m->payload : "";
        s.e->commit(*t2);
        done = true;
    });
    std::this_thread::sleep_for(50ms);
    CHECK_FALSE(done);
    s.e->abort(*t1);
    th.join();
    // The rollback put "a" back at the head.
    CHECK(got == "a");
    CHECK(s.take("q") == "b");
}

TEST_CASE("a waiting dequeue wakes when an enqueue commits") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    std::optional<Message> got;
    std::thread th([&] {
        auto t = s.e->begin();
        got = s.e->dequeue(*t, "q", kRP, WaitSpec::wait(3000ms));
        s.e->commit(*t);
    });
    std::this_thread::sleep_for(30ms);
    auto start = std::chrono::steady_clock::now();
    s.put("q", 0, "wake");
    th.join();
    REQUIRE(got);
    CHECK(got->payload == "wake");
    CHECK(std::chrono::steady_clock::now() - start < 1s);

    auto t = s.e->begin();
    start = std::chrono::steady_clock::now();
    CHECK_FALSE(s.e->dequeue(*t, "q", kRP, WaitSpec::wait(40ms)));
    CHECK(std::chrono::steady_clock::now() - start >= 40ms);
    s.e->commit(*t);
}

TEST_CASE("random producer and waiting consumer interleavings never lose a wakeup") {
    for (int round = 0; round < 100; ++round) {
        Store s;
        s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
        std::mt19937 rng(round);
        auto delay = std::chrono::microseconds(rng() % 2000);
        std::optional<Message> got;
        std::thread consumer([&] {
            auto t = s.e->begin();
            got = s.e->dequeue(*t, "q", kRP, WaitSpec::wait(2000ms));
            s.e->commit(*t);
        });
        std::this_thread::sleep_for(delay);
        s.put("q", 0, "m");
        consumer.join();
        CAPTURE(round);
        REQUIRE(got);
    }
}

TEST_CASE("poll reports visibility and never changes state") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    s.put("q", 0, "a");
    s.put("q", 0, "b");
    auto t1 = s.e->begin();
    auto taken = s.e->dequeue(*t1, "q", kRP);
    auto t2 = s.e->begin();
    MessageId fresh = s.e->enqueue(*t2, "q", 0, "secret");

    auto clean = s.e->poll("q");
    REQUIRE(clean.size() == 1);
    CHECK(clean[0].visibility == Visibility::kVisible);
    CHECK_FALSE(clean[0].payload);

    auto before = s.e->snapshot();
    auto stats_before = s.e->stats("q");
    auto dirty = s.e->poll("q", PollFilter::all(), {.include_dirty = true, .include_payload = true});
    REQUIRE(dirty.size() == 3);
    std::map<MessageId, PollEntry> by_id;
    for (auto& p : dirty) by_id[p.message_id] = p;
    CHECK(by_id.at(taken->message_id).visibility == Visibility::kUncommittedDelete);
    CHECK(by_id.at(taken->message_id).writer_txn == t1->id());
    CHECK(by_id.at(taken->message_id).payload == "a");
    CHECK(by_id.at(fresh).visibility == Visibility::kUncommittedInsert);
    CHECK(by_id.at(fresh).writer_txn == t2->id());
    CHECK_FALSE(by_id.at(fresh).payload);
    auto unsafe = s.e->poll("q", PollFilter::by_id(fresh), {.include_dirty = true, .unsafe_dirty_payload = true});
    REQUIRE(unsafe.size() == 1);
    CHECK(unsafe[0].payload == "secret");

    CHECK(s.e->snapshot() == before);
    auto stats_after = s.e->stats("q");
    CHECK(stats_after.depth_visible == stats_before.depth_visible);
    CHECK(stats_after.dequeue_count == stats_before.dequeue_count);
    CHECK(s.e->locks().holders(lock::ResourceId::record(1, fresh)).size() == 1);
    s.e->commit(*t1);
    s.e->commit(*t2);
}

TEST_CASE("destroy takes effect at commit and is undone by abort") {
    Store s(200ms);
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    s.put("q", 0, "a");
    auto t = s.e->begin();
    s.e->destroy_queue(*t, "q");
    // Enqueuers need the catalog lock and give up after the lock timeout.
    auto other = s.e->begin();
    try {
        s.e->enqueue(*other, "q", 0, "b");
        FAIL("expected a lock timeout");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::kDeadlockTimeout);
    }
    s.e->abort(*other);
    // READ_PAST dequeuers do not block on it.
    auto rp = s.e->begin();
    CHECK_FALSE(s.e->dequeue(*rp, "q", kRP));
    s.e->commit(*rp);
    s.e->abort(*t);
    CHECK(s.take("q") == "a");

    s.e->destroy_queue("q");
    CHECK_FALSE(s.e->find_queue("q"));
    try {
        s.e->stats("q");
        FAIL("expected not found");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::kNotFound);
    }
    // The name is free again.
    s.e->create_queue("q", Durability::kVolatile, Ordering::kPriority);
    CHECK(s.e->find_queue("q")->durability == Durability::kVolatile);
}

TEST_CASE("destroy waits for transactions that hold the queue") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    s.put("q", 0, "a");
    auto t = s.e->begin();
    s.e->enqueue(*t, "q", 0, "b");
    std::atomic<bool> done{false};
    std::thread th([&] {
        s.e->destroy_queue("q");
        done = true;
    });
    REQUIRE(wait_until([&] { return s.e->locks().summary().waiters == 1; }));
    CHECK_FALSE(done);
    s.e->commit(*t);
    th.join();
    CHECK_FALSE(s.e->find_queue("q"));
}

TEST_CASE("catalog errors") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    auto code = [&](auto fn) {
        try {
            fn();
        } catch (const Error& err) {
            return err.code();
        }
        return ErrorCode::kInternal;
    };
    CHECK(code([&] { s.e->create_queue("q", Durability::kDurable, Ordering::kFifo); }) == ErrorCode::kAlreadyExists);
    CHECK(code([&] { s.e->create_queue("", Durability::kDurable, Ordering::kFifo); }) == ErrorCode::kUsage);
    CHECK(code([&] { s.e->create_queue("a b", Durability::kDurable, Ordering::kFifo); }) == ErrorCode::kUsage);
    CHECK(code([&] { s.e->destroy_queue("missing"); }) == ErrorCode::kNotFound);
    CHECK(code([&] { s.put("missing", 0, "x"); }) == ErrorCode::kNotFound);
}

TEST_CASE("stats arithmetic and payload limit") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    for (int i = 0; i < 5; ++i) s.put("q", 0, "m");
    s.take("q");
    auto t = s.e->begin();
    s.e->dequeue(*t, "q", kRP);
    s.e->enqueue(*t, "q", 0, "n");
    auto st = s.e->stats("q");
    CHECK(st.depth_visible == 3);
    CHECK(st.depth_dirty == 2);
    CHECK(st.enqueue_count == 5);
    CHECK(st.dequeue_count == 1);
    s.e->commit(*t);
    st = s.e->stats("q");
    CHECK(st.enqueue_count - st.dequeue_count == st.depth_visible);
    CHECK(st.depth_visible == 4);

    auto u = s.e->begin();
    std::string big(s.e->options().max_payload + 1, 'x');
    CHECK_THROWS_AS(s.e->enqueue(*u, "q", 0, big), Error);
    std::string edge(s.e->options().max_payload, 'x');
    CHECK_NOTHROW(s.e->enqueue(*u, "q", 0, edge));
    std::string binary("\0\x01\xff", 3);
    MessageId id = s.e->enqueue(*u, "q", 0, binary);
    s.e->commit(*u);
    auto p = s.e->poll("q", PollFilter::by_id(id), {.include_payload = true});
    CHECK(p.at(0).payload == binary);
}

TEST_CASE("concurrent READ_PAST consumers take each message exactly once") {
    Store s;
    s.e->create_queue("q", Durability::kDurable, Ordering::kFifo);
    {
        auto t = s.e->begin();
        for (int i = 0; i < 400; ++i) s.e->enqueue(*t, "q", 0, std::to_string(i));
        s.e->commit(*t);
    }
    std::mutex mu;
    std::multiset<std::string> seen;
    std::vector<std::thread> ts;
    for (int w = 0; w < 4; ++w) {
        ts.emplace_back([&, w] {
            std::mt19937 rng(w);
            while (true) {
                auto t = s.e->begin();
                auto m = s.e->dequeue(*t, "q", kRP);
                if (!m) {
                    s.e->commit(*t);
                    if (s.e->stats("q").depth_visible == 0 && s.e->stats("q").depth_dirty == 0) break;
                    continue;
                }
                if (rng() % 5 == 0) {
                    s.e->abort(*t);
                    continue;
                }
                s.e->commit(*t);
                std::lock_guard lk(mu);
                seen.insert(m->payload);
            }
        });
    }
    for (auto& t : ts) t.join();
    CHECK(seen.size() == 400);
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 400);
}

TEST_CASE("volatile contents vanish on restart, definitions and durable contents stay") {
    TempDir dir;
    {
        auto e = Engine::open(testing::quiet_options(dir.path()));
        e->create_queue("v", Durability::kVolatile, Ordering::kFifo);
        e->create_queue("d", Durability::kDurable, Ordering::kFifo);
        auto t = e->begin();
        e->enqueue(*t, "v", 0, "gone");
        e->enqueue(*t, "d", 0, "kept");
        e->commit(*t);
        e->checkpoint();
        auto u = e->begin();
        e->enqueue(*u, "v", 0, "gone2");
        e->commit(*u);
    }
    auto e = testing::reopen(dir.path());
    CHECK(e->stats("v").depth_visible == 0);
    CHECK(e->stats("d").depth_visible == 1);
    CHECK(e->find_queue("v")->durability == Durability::kVolatile);
    ShadowLedger oracle;
    oracle.apply({ShadowLedger::Op::create("v", Durability::kVolatile, Ordering::kFifo),
                  ShadowLedger::Op::create("d", Durability::kDurable, Ordering::kFifo)});
    auto snap = e->snapshot();
    REQUIRE(snap.queues.size() == 2);
    CHECK(std::get<2>(snap.queues[0].messages.at(0)) == "kept");
    snap.queues[0].messages.clear();
    CHECK(snap == oracle.snapshot(true));
}
