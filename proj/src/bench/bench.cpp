#include "qdb/bench/bench.hpp"

#include <stdlib.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "qdb/engine.hpp"
#include "qdb/error.hpp"
#include "qdb/pool/pool.hpp"
#include "qdb/workflow/workflow.hpp"

namespace qdb::bench {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

namespace {

double micros(Clock::duration d) { return std::chrono::duration<double, std::micro>(d).count(); }

class TempDir {
 public:
    explicit TempDir(const std::filesystem::path& given) {
        if (!given.empty()) {
            path_ = given;
            std::filesystem::create_directories(path_);
            return;
        }
        std::string tmpl = (std::filesystem::temp_directory_path() / "qdb-bench-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw Error(ErrorCode::kIo, "mkdtemp failed");
        path_ = tmpl;
        owned_ = true;
    }
    ~TempDir() {
        std::error_code ec;
        if (owned_) std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

 private:
    std::filesystem::path path_;
    bool owned_ = false;
};

// Payload i: 8-byte index followed by seeded random bytes.
std::vector<std::string> make_payloads(const BenchParams& p) {
    std::mt19937_64 rng(p.seed);
    std::size_t size = std::max<std::size_t>(p.payload_bytes, 8);
    std::vector<std::string> out(p.messages);
    for (std::size_t i = 0; i < p.messages; ++i) {
        std::string s(size, '\0');
        for (int b = 0; b < 8; ++b) s[b] = static_cast<char>((i >> (8 * b)) & 0xff);
        for (std::size_t k = 8; k < size; ++k) s[k] = static_cast<char>(rng() & 0xff);
        out[i] = std::move(s);
    }
    return out;
}

std::unique_ptr<Engine> open_engine(const BenchParams& p, const std::filesystem::path& dir, bool pools) {
    EngineOptions o;
    o.data_dir = dir;
    o.sync = p.sync;
    o.lock_timeout = std::chrono::seconds(60);
    o.checkpoint_threshold = 1ull << 40;
    o.checkpoint_on_close = false;
    o.pool_auto_tick = pools;
    o.pool_tick_interval = std::chrono::milliseconds(20);
    return Engine::open(o);
}

struct Baseline {
    uint64_t waits = 0;
    uint64_t flushes = 0;
    uint64_t commits = 0;

    static Baseline take(Engine& e) {
        return {e.locks().summary().total_waits, e.log().physical_flushes(), e.txns().counters().logged_commits};
    }
};

void finish(BenchReport& r, Engine& e, const Baseline& b, Clock::duration elapsed, std::vector<double> lat) {
    Baseline a = Baseline::take(e);
    r.duration_s = std::chrono::duration<double>(elapsed).count();
    r.operations = lat.size();
    r.throughput = r.duration_s > 0 ? static_cast<double>(r.operations) / r.duration_s : 0;
    r.p50_us = percentile(lat, 50);
    r.p95_us = percentile(lat, 95);
    r.p99_us = percentile(lat, 99);
    r.lock_waits = a.waits - b.waits;
    r.flushes = a.flushes - b.flushes;
    r.commits = a.commits - b.commits;
    r.flushes_per_commit = r.commits ? static_cast<double>(r.flushes) / static_cast<double>(r.commits) : 0;
}

std::multiset<std::string> remaining(Engine& e, const std::string& queue) {
    std::multiset<std::string> out;
    for (const auto& q : e.snapshot().queues) {
        if (q.name != queue) continue;
        for (const auto& m : q.messages) out.insert(std::get<2>(m));
    }
    return out;
}

void audit_conservation(BenchReport& r, const std::vector<std::string>& sent,
                        const std::vector<std::string>& consumed, const std::multiset<std::string>& left) {
    std::multiset<std::string> expect(sent.begin(), sent.end());
    std::multiset<std::string> got(left);
    got.insert(consumed.begin(), consumed.end());
    std::set<std::string> unique(consumed.begin(), consumed.end());
    std::ostringstream d;
    d << "sent=" << sent.size() << " consumed=" << consumed.size() << " remaining=" << left.size();
    if (unique.size() != consumed.size()) d << " duplicates=" << consumed.size() - unique.size();
    r.audit_ok = got == expect && unique.size() == consumed.size();
    r.audit_detail = d.str();
}

void enqueue_scenario(BenchReport& r, const BenchParams& p, std::size_t producers) {
    TempDir dir(p.dir);
    auto engine = open_engine(p, dir.path(), false);
    engine->create_queue("bench", Durability::kDurable, Ordering::kFifo);
    auto payloads = make_payloads(p);

    std::vector<std::vector<double>> lat(producers);
    Baseline base = Baseline::take(*engine);
    auto t0 = Clock::now();
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < producers; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = w; i < payloads.size(); i += producers) {
                auto s = Clock::now();
                auto txn = engine->begin("producer-" + std::to_string(w));
                engine->enqueue(*txn, "bench", 0, payloads[i]);
                engine->commit(*txn);
                lat[w].push_back(micros(Clock::now() - s));
            }
        });
    }
    for (auto& t : threads) t.join();
    auto elapsed = Clock::now() - t0;

    std::vector<double> all;
    for (auto& v : lat) all.insert(all.end(), v.begin(), v.end());
    finish(r, *engine, base, elapsed, std::move(all));
    audit_conservation(r, payloads, {}, remaining(*engine, "bench"));
    engine->close();
}

void dequeue_scenario(BenchReport& r, const BenchParams& p, IsolationMode iso) {
    TempDir dir(p.dir);
    auto engine = open_engine(p, dir.path(), false);
    engine->create_queue("bench", Durability::kDurable, Ordering::kFifo);
    auto payloads = make_payloads(p);
    for (std::size_t i = 0; i < payloads.size(); i += 256) {
        auto txn = engine->begin("prefill");
        for (std::size_t k = i; k < std::min(payloads.size(), i + 256); ++k) engine->enqueue(*txn, "bench", 0, payloads[k]);
        engine->commit(*txn);
    }

    std::size_t consumers = p.concurrency;
    std::vector<std::vector<double>> lat(consumers);
    std::vector<std::vector<std::string>> got(consumers);
    std::vector<double> blocked(consumers, 0);
    Baseline base = Baseline::take(*engine);
    auto t0 = Clock::now();
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < consumers; ++w) {
        threads.emplace_back([&, w] {
            std::string session = "consumer-" + std::to_string(w);
            while (true) {
                auto s = Clock::now();
                auto txn = engine->begin(session);
                auto m = engine->dequeue(*txn, "bench", iso);
                blocked[w] += micros(Clock::now() - s);
                if (!m) {
                    engine->abort(*txn);
                    break;
                }
                if (p.work.count() > 0) std::this_thread::sleep_for(p.work);
                engine->commit(*txn);
                lat[w].push_back(micros(Clock::now() - s));
                got[w].push_back(std::move(m->payload));
            }
        });
    }
    for (auto& t : threads) t.join();
    auto elapsed = Clock::now() - t0;

    std::vector<double> all;
    std::vector<std::string> consumed;
    double blocked_total = 0;
    for (std::size_t w = 0; w < consumers; ++w) {
        all.insert(all.end(), lat[w].begin(), lat[w].end());
        consumed.insert(consumed.end(), got[w].begin(), got[w].end());
        blocked_total += blocked[w];
    }
    finish(r, *engine, base, elapsed, std::move(all));
    r.mean_blocked_us = r.operations ? blocked_total / static_cast<double>(r.operations) : 0;
    audit_conservation(r, payloads, consumed, remaining(*engine, "bench"));
    if (r.audit_ok && consumed.size() != payloads.size()) {
        r.audit_ok = false;
        r.audit_detail += " (queue not drained)";
    }
    engine->close();
}

void tri_acid_scenario(BenchReport& r, const BenchParams& p) {
    TempDir dir(p.dir);
    auto engine = open_engine(p, dir.path(), true);
    engine->create_queue("requests", Durability::kDurable, Ordering::kFifo);
    engine->create_queue("responses", Durability::kDurable, Ordering::kFifo);
    pool::ServerPoolConfig cfg;
    cfg.queue = "requests";
    cfg.min_servers = 1;
    cfg.max_servers = std::max<std::size_t>(p.concurrency, 1);
    cfg.policy = pool::Policy::event();
    cfg.handler = workflow::make_pool_handler([](const std::string& body) { return body; });
    cfg.handler_name = "echo";
    engine->pools().attach(std::move(cfg));

    auto payloads = make_payloads(p);
    std::size_t clients = p.concurrency;
    std::vector<std::vector<double>> lat(clients);
    std::atomic<uint64_t> mismatches{0};
    Baseline base = Baseline::take(*engine);
    auto t0 = Clock::now();
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < clients; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = w; i < payloads.size(); i += clients) {
                auto s = Clock::now();
                uint64_t id = workflow::submit(*engine, "requests", "responses", payloads[i]);
                auto resp = workflow::await_response(*engine, id, "responses", std::chrono::seconds(30));
                if (!resp || resp->status != workflow::ResponseStatus::kOk || resp->body != payloads[i]) {
                    ++mismatches;
                    continue;
                }
                lat[w].push_back(micros(Clock::now() - s));
            }
        });
    }
    for (auto& t : threads) t.join();
    auto elapsed = Clock::now() - t0;
    engine->pools().stop("requests");

    std::vector<double> all;
    for (auto& v : lat) all.insert(all.end(), v.begin(), v.end());
    finish(r, *engine, base, elapsed, std::move(all));
    auto left_req = remaining(*engine, "requests").size();
    auto left_rsp = remaining(*engine, "responses").size();
    r.audit_ok = mismatches == 0 && left_req == 0 && left_rsp == 0 && r.operations == payloads.size();
    std::ostringstream d;
    d << "completed=" << r.operations << " mismatches=" << mismatches << " requests_left=" << left_req
      << " responses_left=" << left_rsp;
    r.audit_detail = d.str();
    engine->close();
}

}  // namespace

double percentile(std::vector<double> samples, double p) {
    if (samples.empty()) return 0;
    std::sort(samples.begin(), samples.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
    rank = std::clamp<std::size_t>(rank, 1, samples.size());
    return samples[rank - 1];
}

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names = {"enqueue_commit", "enqueue_commit_group",
                                                   "serializable_dequeue_contention", "read_past_dequeue_scaling",
                                                   "tri_acid_end_to_end"};
    return names;
}

BenchReport run_scenario(const BenchParams& params) {
    if (params.messages == 0) throw Error(ErrorCode::kUsage, "--messages must be positive");
    if (params.concurrency == 0) throw Error(ErrorCode::kUsage, "--concurrency must be positive");
    BenchReport r;
    r.scenario = params.scenario;
    r.params = params;
    const auto& s = params.scenario;
    if (s == "enqueue_commit") {
        r.params.concurrency = 1;
        enqueue_scenario(r, params, 1);
    } else if (s == "enqueue_commit_group") {
        enqueue_scenario(r, params, params.concurrency);
    } else if (s == "serializable_dequeue_contention") {
        dequeue_scenario(r, params, IsolationMode::kSerializable);
    } else if (s == "read_past_dequeue_scaling") {
        dequeue_scenario(r, params, IsolationMode::kReadPastDequeue);
    } else if (s == "tri_acid_end_to_end") {
        tri_acid_scenario(r, params);
    } else {
        throw Error(ErrorCode::kUsage, "unknown scenario '" + s + "'");
    }
    return r;
}

json BenchReport::to_json() const {
    return {
        {"scenario", scenario},
        {"messages", params.messages},
        {"payload_bytes", params.payload_bytes},
        {"concurrency", params.concurrency},
        {"seed", params.seed},
        {"work_us", params.work.count()},
        {"duration_s", duration_s},
        {"operations", operations},
        {"throughput_ops_s", throughput},
        {"latency_us", {{"p50", p50_us}, {"p95", p95_us}, {"p99", p99_us}}},
        {"lock_waits", lock_waits},
        {"mean_blocked_us", mean_blocked_us},
        {"commits", commits},
        {"physical_flushes", flushes},
        {"flushes_per_commit", flushes_per_commit},
        {"audit", {{"ok", audit_ok}, {"detail", audit_detail}}},
    };
}

std::string BenchReport::to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << scenario << " (messages=" << params.messages << " payload=" << params.payload_bytes
       << "B concurrency=" << params.concurrency << " seed=" << params.seed << ")\n";
    os << "  ops " << operations << " in " << std::setprecision(3) << duration_s << " s, " << std::setprecision(1)
       << throughput << " ops/s\n";
    os << "  latency us p50 " << p50_us << "  p95 " << p95_us << "  p99 " << p99_us << "\n";
    os << "  lock waits " << lock_waits << ", mean dequeue blocked " << mean_blocked_us << " us\n";
    os << "  commits " << commits << ", flushes " << flushes << std::setprecision(3) << ", flushes/commit "
       << flushes_per_commit << "\n";
    os << "  audit " << (audit_ok ? "ok" : "FAILED") << " (" << audit_detail << ")\n";
    return os.str();
}

}  // namespace qdb::bench
