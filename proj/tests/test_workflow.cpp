#include <atomic>
#include <set>
#include <thread>

#include "doctest.h"
#include "qdb/wal/recovery.hpp"
#include "qdb/workflow/workflow.hpp"
#include "support.hpp"

using namespace qdb;
using namespace qdb::workflow;
using namespace std::chrono_literals;
using qdb::testing::TempDir;
using qdb::testing::wait_until;

namespace {

struct Fixture {
    TempDir dir;
    std::unique_ptr<Engine> e = Engine::open(testing::quiet_options(dir.path()));

    Fixture() {
        e->create_queue("req", Durability::kDurable, Ordering::kFifo);
        e->create_queue("rsp", Durability::kDurable, Ordering::kFifo);
    }
};

std::string echo(const std::string& body) { return body; }

}  // namespace

TEST_CASE("request and response payloads round-trip and reject garbage") {
    Request r{42, "reply.q", std::string("b\0dy", 4)};
    auto enc = encode_request(r);
    CHECK(enc.substr(0, 4) == "QREQ");
    CHECK(decode_request(enc) == r);
    CHECK(peek_request_id(enc) == 42u);
    Response s{42, ResponseStatus::kHandlerError, "oops"};
    auto senc = encode_response(s);
    CHECK(decode_response(senc) == s);
    CHECK(peek_request_id(senc) == 42u);
    CHECK_FALSE(decode_request(senc));
    CHECK_FALSE(decode_response(enc));
    CHECK_FALSE(decode_request(enc.substr(0, enc.size() - 1)));
    CHECK_FALSE(decode_request(enc + "x"));
    std::string wrong_version = enc;
    wrong_version[4] = 2;
    CHECK_FALSE(decode_request(wrong_version));
    CHECK_FALSE(peek_request_id("nope"));
}

TEST_CASE("submit, status, serve, await") {
    Fixture f;
    auto id = submit(*f.e, "req", "rsp", "x");
    CHECK(status(*f.e, id, "req", "rsp") == RequestStatus::kQueued);
    auto out = serve_one(*f.e, "req", echo);
    CHECK(out.kind == ProcessedOutcome::Kind::kServed);
    CHECK(out.request_id == id);
    CHECK(f.e->stats("req").depth_visible == 0);
    CHECK(status(*f.e, id, "req", "rsp") == RequestStatus::kDone);
    auto rsp = await_response(*f.e, id, "rsp", 1s);
    REQUIRE(rsp);
    CHECK(rsp->status == ResponseStatus::kOk);
    CHECK(rsp->body == "x");
    CHECK(status(*f.e, id, "req", "rsp") == RequestStatus::kUnknown);
    CHECK_FALSE(await_response(*f.e, id, "rsp", 50ms));
    CHECK(serve_one(*f.e, "req", echo).kind == ProcessedOutcome::Kind::kEmpty);
}

TEST_CASE("a request held by a worker reports IN_PROCESS") {
    Fixture f;
    auto id = submit(*f.e, "req", "rsp", "x");
    auto txn = f.e->begin();
    auto m = f.e->dequeue(*txn, "req", IsolationMode::kReadPastDequeue);
    REQUIRE(m);
    CHECK(status(*f.e, id, "req", "rsp") == RequestStatus::kInProcess);
    f.e->abort(*txn);
    CHECK(status(*f.e, id, "req", "rsp") == RequestStatus::kQueued);
}

TEST_CASE("submit to a broken queue fails and leaves nothing behind") {
    Fixture f;
    f.e->set_queue_state("req", QueueState::kBroken);
    CHECK_THROWS_AS(submit(*f.e, "req", "rsp", "x"), Error);
    CHECK(f.e->poll("req", PollFilter::all(), {.include_dirty = true}).empty());
}

TEST_CASE("handler errors commit a HANDLER_ERROR response and consume the request") {
    Fixture f;
    auto id = submit(*f.e, "req", "rsp", "x");
    auto out = serve_one(*f.e, "req", [](const std::string&) -> std::string { throw std::runtime_error("bad input"); });
    CHECK(out.kind == ProcessedOutcome::Kind::kHandlerError);
    CHECK(f.e->stats("req").depth_visible == 0);
    auto rsp = await_response(*f.e, id, "rsp", 1s);
    REQUIRE(rsp);
    CHECK(rsp->status == ResponseStatus::kHandlerError);
    CHECK(rsp->body == "bad input");
}

TEST_CASE("a crash before commit leaves no response and the request is redelivered") {
    Fixture f;
    auto id = submit(*f.e, "req", "rsp", "x");
    ServeHooks crash{[](uint64_t) { throw pool::WorkerCrash(); }};
    CHECK(serve_one(*f.e, "req", echo, WaitSpec::no_wait(), crash).kind == ProcessedOutcome::Kind::kAborted);
    CHECK(f.e->stats("rsp").depth_visible == 0);
    CHECK(f.e->stats("req").depth_visible == 1);
    CHECK(f.e->poll("req").at(0).redeliveries == 1);
    CHECK(serve_one(*f.e, "req", echo).kind == ProcessedOutcome::Kind::kServed);
    CHECK(f.e->stats("rsp").depth_visible == 1);
    CHECK(await_response(*f.e, id, "rsp", 1s));
}

TEST_CASE("undecodable requests move to the dead-letter queue") {
    Fixture f;
    auto t = f.e->begin();
    f.e->enqueue(*t, "req", 0, "not a request");
    f.e->commit(*t);
    CHECK(serve_one(*f.e, "req", echo).kind == ProcessedOutcome::Kind::kHandlerError);
    CHECK(f.e->stats("req.DLQ").depth_visible == 1);
    CHECK(f.e->stats("rsp").depth_visible == 0);
}

TEST_CASE("concurrent submits get distinct ids") {
    Fixture f;
    std::mutex mu;
    std::set<uint64_t> ids;
    std::vector<std::thread> ts;
    for (int c = 0; c < 10; ++c) {
        ts.emplace_back([&] {
            for (int i = 0; i < 100; ++i) {
                auto id = submit(*f.e, "req", "rsp", "b");
                std::lock_guard lk(mu);
                ids.insert(id);
            }
        });
    }
    for (auto& t : ts) t.join();
    CHECK(ids.size() == 1000);
    CHECK(f.e->stats("req").depth_visible == 1000);
}

TEST_CASE("await wakes early when the response arrives") {
    Fixture f;
    auto id = submit(*f.e, "req", "rsp", "x");
    std::thread worker([&] {
        std::this_thread::sleep_for(300ms);
        serve_one(*f.e, "req", echo);
    });
    auto start = std::chrono::steady_clock::now();
    auto rsp = await_response(*f.e, id, "rsp", 2000ms);
    auto took = std::chrono::steady_clock::now() - start;
    worker.join();
    REQUIRE(rsp);
    CHECK(took >= 250ms);
    CHECK(took < 1500ms);
}

TEST_CASE("clients sharing a reply queue each get their own response") {
    Fixture f;
    std::atomic<bool> stop{false};
    std::thread server([&] {
        while (!stop) serve_one(*f.e, "req", echo, WaitSpec::wait(20ms));
    });
    std::atomic<int> mismatched{0};
    std::atomic<int> received{0};
    std::vector<std::thread> clients;
    for (int c = 0; c < 4; ++c) {
        clients.emplace_back([&, c] {
            for (int i = 0; i < 20; ++i) {
                std::string body = std::to_string(c) + ":" + std::to_string(i);
                auto id = submit(*f.e, "req", "rsp", body);
                auto rsp = await_response(*f.e, id, "rsp", 5s);
                if (!rsp || rsp->request_id != id || rsp->body != body) {
                    ++mismatched;
                } else {
                    ++received;
                }
            }
        });
    }
    for (auto& t : clients) t.join();
    stop = true;
    server.join();
    CHECK(mismatched == 0);
    CHECK(received == 80);
    CHECK(f.e->stats("rsp").depth_visible == 0);
}

TEST_CASE("polled status sequences are monotone over 200 runs") {
    Fixture f;
    std::mt19937 rng(9);
    auto rank = [](RequestStatus s) {
        switch (s) {
            case RequestStatus::kQueued: return 0;
            case RequestStatus::kInProcess: return 1;
            case RequestStatus::kDone: return 2;
            default: return -1;
        }
    };
    int saw_in_process = 0;
    for (int run = 0; run < 200; ++run) {
        auto id = submit(*f.e, "req", "rsp", "x");
        auto delay = std::chrono::microseconds(rng() % 1500);
        auto work = std::chrono::microseconds(rng() % 1500);
        std::thread worker([&] {
            std::this_thread::sleep_for(delay);
            serve_one(*f.e, "req", [&](const std::string& b) {
                std::this_thread::sleep_for(work);
                return b;
            });
        });
        std::vector<RequestStatus> trace;
        while (true) {
            auto s = status(*f.e, id, "req", "rsp");
            if (trace.empty() || trace.back() != s) trace.push_back(s);
            if (s == RequestStatus::kDone) break;
        }
        worker.join();
        bool monotone = true;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            if (rank(trace[i]) < 0 || (i > 0 && rank(trace[i]) <= rank(trace[i - 1]))) monotone = false;
        }
        CAPTURE(run);
        CHECK(monotone);
        if (std::find(trace.begin(), trace.end(), RequestStatus::kInProcess) != trace.end()) ++saw_in_process;
        REQUIRE(await_response(*f.e, id, "rsp", 1s));
    }
    MESSAGE("runs observing IN_PROCESS: " << saw_in_process);
}

TEST_CASE("each request costs exactly three logged transactions") {
    Fixture f;
    auto before = f.e->txns().counters().logged_commits;
    auto id = submit(*f.e, "req", "rsp", "x");
    serve_one(*f.e, "req", echo);
    REQUIRE(await_response(*f.e, id, "rsp", 1s));
    CHECK(f.e->txns().counters().logged_commits - before == 3);

    PosixStorage s(false);
    auto scan = wal::scan_log(*s.read_all(f.dir / wal::kLogFileName));
    std::size_t commits = 0;
    for (const auto& r : scan.records) commits += r.kind == wal::RecordKind::kCommit;
    CHECK(commits == 2 + 3);  // two queue creations, then the three units
}

TEST_CASE("two submits cannot be linked into one atomic unit") {
    // submit() owns its transaction: there is no way to hand it an outer one.
    // When the second step of a two-step exchange fails, the first has
    // already committed and stays visible.
    Fixture f;
    f.e->create_queue("step2", Durability::kDurable, Ordering::kFifo);
    auto first = submit(*f.e, "req", "rsp", "step one");
    f.e->set_queue_state("step2", QueueState::kBroken);
    CHECK_THROWS_AS(submit(*f.e, "step2", "rsp", "step two"), Error);
    CHECK(status(*f.e, first, "req", "rsp") == RequestStatus::kQueued);
    CHECK(f.e->stats("req").depth_visible == 1);
    static_assert(std::is_same_v<decltype(&submit),
                                 uint64_t (*)(Engine&, const std::string&, const std::string&, std::string, int64_t)>);
}

TEST_CASE("a pool serves requests end to end") {
    Fixture f;
    pool::ServerPoolConfig cfg;
    cfg.queue = "req";
    cfg.min_servers = 1;
    cfg.max_servers = 2;
    cfg.handler = make_pool_handler(echo);
    f.e->pools().attach(cfg);
    std::vector<uint64_t> ids;
    for (int i = 0; i < 10; ++i) ids.push_back(submit(*f.e, "req", "rsp", std::to_string(i)));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto rsp = await_response(*f.e, ids[i], "rsp", 5s);
        REQUIRE(rsp);
        CHECK(rsp->body == std::to_string(i));
    }
    f.e->pools().shutdown();
}
