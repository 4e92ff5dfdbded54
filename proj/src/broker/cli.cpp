#include "qdb/broker/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "qdb/broker/client.hpp"
#include "qdb/broker/config.hpp"
#include "qdb/broker/report.hpp"
#include "qdb/broker/server.hpp"

namespace qdb::broker {

using nlohmann::json;

namespace {

struct Context {
    Client& client;
    bool json_out = false;
    std::ostream& out;
    std::ostream& err;
    bool in_session = false;
    uint64_t txn = 0;  // open transaction of a `txn` session, 0 for auto-commit
};

// Option storage for one parse.
struct Args {
    std::string chosen;
    std::string queue;
    bool durable = false;
    bool volatile_ = false;
    bool fifo = false;
    bool by_priority = false;
    int64_t priority = 0;
    std::optional<std::string> data;
    std::optional<std::string> data_hex;
    bool serializable = false;
    uint32_t wait_ms = 0;
    bool dirty = false;
    bool payload = false;
    uint64_t message_id = 0;
    Settings pool;
    std::vector<std::string> set;
    bool locks_only = false;
};

void pool_flags(CLI::App* sub, Args& a) {
    auto key = [sub, &a](const std::string& flag, const std::string& k, const std::string& help) {
        sub->add_option_function<std::string>(flag, [&a, k](const std::string& v) { a.pool[k] = v; }, help);
    };
    key("--min", "min", "minimum servers");
    key("--max", "max", "maximum servers");
    key("--policy", "policy", "event | batch:N | periodic:MS");
    key("--handler", "handler", "echo | copy-to-queue:Q | sleep-ms:N | fail-percent:P");
    key("--failure-limit", "failure_limit", "failures that break the pool");
    key("--failure-window-ms", "failure_window_ms", "failure window");
    key("--idle-shrink-ms", "idle_shrink_after_ms", "idle time before a server is retired");
    key("--isolation", "isolation", "read_past | serializable");
    key("--max-redelivery", "max_redelivery", "aborts before a message is dead-lettered");
    sub->add_option("--set", a.set, "extra key=value setting");
}

void build(CLI::App& app, Args& a, bool session) {
    auto leaf = [&a](CLI::App* parent, const std::string& name, const std::string& desc) {
        auto* s = parent->add_subcommand(name, desc);
        std::string full = parent->get_parent() ? parent->get_name() + " " + name : name;
        s->callback([&a, full] { a.chosen = full; });
        return s;
    };

    auto* queue = app.add_subcommand("queue", "create, destroy and inspect queues");
    queue->require_subcommand(1);
    auto* create = leaf(queue, "create", "create a queue");
    create->add_option("name", a.queue)->required();
    auto* d = create->add_flag("--durable", a.durable, "contents survive restart (default)");
    create->add_flag("--volatile", a.volatile_, "contents are lost on restart")->excludes(d);
    auto* f = create->add_flag("--fifo", a.fifo, "first in, first out (default)");
    create->add_flag("--priority", a.by_priority, "highest priority first")->excludes(f);
    leaf(queue, "destroy", "destroy a queue and its messages")->add_option("name", a.queue)->required();
    leaf(queue, "list", "list queues");
    leaf(queue, "stats", "statistics for one queue")->add_option("name", a.queue)->required();
    auto* poll = leaf(queue, "poll", "list messages without consuming them");
    poll->add_option("name", a.queue)->required();
    poll->add_flag("--dirty", a.dirty, "include uncommitted inserts and deletes");
    poll->add_flag("--payload", a.payload, "print committed payloads");
    poll->add_option("--id", a.message_id, "only this message");

    auto* enq = leaf(&app, "enqueue", "enqueue one message");
    enq->add_option("queue", a.queue)->required();
    enq->add_option("--priority", a.priority, "message priority");
    auto* data = enq->add_option("--data", a.data, "payload text");
    enq->add_option("--data-hex", a.data_hex, "payload as hex")->excludes(data);

    auto* deq = leaf(&app, "dequeue", "dequeue one message and print its payload as hex");
    deq->add_option("queue", a.queue)->required();
    deq->add_flag("--serializable", a.serializable, "serializable dequeue instead of read-past");
    deq->add_option("--wait-ms", a.wait_ms, "wait for a message up to this long");

    auto* pool = app.add_subcommand("pool", "server pools");
    pool->require_subcommand(1);
    auto* attach = leaf(pool, "attach", "attach a server pool to a queue");
    attach->add_option("queue", a.queue)->required();
    pool_flags(attach, a);
    leaf(pool, "start", "start a stopped or broken pool")->add_option("queue", a.queue)->required();
    leaf(pool, "stop", "stop a pool")->add_option("queue", a.queue)->required();
    auto* redefine = leaf(pool, "redefine", "change pool settings");
    redefine->add_option("queue", a.queue)->required();
    pool_flags(redefine, a);
    leaf(pool, "status", "pool status")->add_option("queue", a.queue);

    leaf(&app, "checkpoint", "write a checkpoint and truncate the log");
    auto* stats = leaf(&app, "stats", "statistics report");
    stats->add_option("queue", a.queue);
    stats->add_flag("--locks", a.locks_only, "lock table summary and dump only");

    if (session) {
        leaf(&app, "begin", "start a transaction");
        leaf(&app, "commit", "commit the open transaction");
        leaf(&app, "abort", "abort the open transaction");
    }
}

std::string payload_of(const Args& a) {
    if (a.data_hex) {
        auto raw = from_hex(*a.data_hex);
        if (!raw) throw Error(ErrorCode::kUsage, "--data-hex is not valid hex");
        return *raw;
    }
    return a.data.value_or("");
}

std::string settings_text(const Args& a) {
    std::string s;
    for (const auto& [k, v] : a.pool) s += k + "=" + v + "\n";
    for (const auto& kv : a.set) s += kv + "\n";
    return s;
}

void print_pool(Context& c, const json& p) {
    if (c.json_out) {
        c.out << p.dump() << "\n";
        return;
    }
    auto one = [&](const json& s) {
        c.out << s["queue"].get<std::string>() << " " << s["state"].get<std::string>() << " "
              << s["policy"].get<std::string>() << " servers=" << s["current_servers"] << " ["
              << s["min_servers"] << ".." << s["max_servers"] << "] busy=" << s["busy_servers"]
              << " dispatched=" << s["dispatched_count"] << " completed=" << s["completed_count"]
              << " failed=" << s["failed_count"] << "\n";
    };
    if (p.is_array()) {
        for (const auto& s : p) one(s);
    } else {
        one(p);
    }
}

uint64_t session_txn(Context& c) {
    if (!c.in_session) {
        throw Error(ErrorCode::kUsage, "transaction commands only work inside `qdb txn` (one command per stdin line)");
    }
    return c.txn;
}

void execute(Context& c, const Args& a) {
    const std::string& cmd = a.chosen;
    if (cmd == "queue create") {
        auto dur = a.volatile_ ? Durability::kVolatile : Durability::kDurable;
        auto ord = a.by_priority ? Ordering::kPriority : Ordering::kFifo;
        QueueId id = c.client.create_queue(a.queue, dur, ord);
        if (c.json_out) {
            c.out << json{{"name", a.queue}, {"queue_id", id}}.dump() << "\n";
        } else {
            c.out << "created queue " << a.queue << " (id " << id << ", " << to_string(dur) << ", "
                  << to_string(ord) << ")\n";
        }
    } else if (cmd == "queue destroy") {
        c.client.destroy_queue(c.txn, a.queue);
        if (c.json_out) {
            c.out << json{{"destroyed", a.queue}}.dump() << "\n";
        } else {
            c.out << "destroyed queue " << a.queue << "\n";
        }
    } else if (cmd == "queue list") {
        auto qs = c.client.list_queues();
        if (c.json_out) {
            json arr = json::array();
            for (const auto& q : qs) {
                arr.push_back({{"name", q.name},
                               {"queue_id", q.queue_id},
                               {"durability", to_string(q.durability)},
                               {"ordering", to_string(q.ordering)},
                               {"state", to_string(q.state)}});
            }
            c.out << arr.dump() << "\n";
        } else {
            if (qs.empty()) c.out << "(no queues)\n";
            for (const auto& q : qs) {
                c.out << q.name << " id=" << q.queue_id << " " << to_string(q.durability) << " "
                      << to_string(q.ordering) << " " << to_string(q.state) << "\n";
            }
        }
    } else if (cmd == "queue stats" || cmd == "stats") {
        json r = c.client.stats(a.queue);
        if (a.locks_only) r = r["locks"];
        if (c.json_out) {
            c.out << r.dump() << "\n";
        } else if (a.locks_only) {
            c.out << "resources=" << r["resources"] << " holders=" << r["holders"] << " waiters=" << r["waiters"]
                  << " subscribers=" << r["subscribers"] << " waits=" << r["total_waits"]
                  << " timeouts=" << r["total_timeouts"] << "\n"
                  << r["table"].get<std::string>();
        } else {
            c.out << render_text(r);
        }
    } else if (cmd == "queue poll") {
        auto entries = c.client.poll(a.queue, a.dirty, a.payload, a.message_id);
        if (c.json_out) {
            json arr = json::array();
            for (const auto& e : entries) {
                json j = {{"message_id", e.message_id}, {"priority", e.priority},
                          {"visibility", to_string(e.visibility)}, {"writer_txn", e.writer_txn},
                          {"enqueue_seq", e.enqueue_seq}};
                if (e.payload) j["payload_hex"] = to_hex(*e.payload);
                arr.push_back(j);
            }
            c.out << arr.dump() << "\n";
        } else {
            for (const auto& e : entries) {
                c.out << e.message_id << " priority=" << e.priority << " " << to_string(e.visibility);
                if (e.writer_txn != kNoTxn) c.out << " writer=" << e.writer_txn;
                if (e.payload) c.out << " " << to_hex(*e.payload);
                c.out << "\n";
            }
        }
    } else if (cmd == "enqueue") {
        MessageId id = c.client.enqueue(c.txn, a.queue, a.priority, payload_of(a));
        if (c.json_out) {
            c.out << json{{"message_id", id}}.dump() << "\n";
        } else {
            c.out << id << "\n";
        }
    } else if (cmd == "dequeue") {
        auto iso = a.serializable ? IsolationMode::kSerializable : IsolationMode::kReadPastDequeue;
        auto m = c.client.dequeue(c.txn, a.queue, iso, std::chrono::milliseconds(a.wait_ms));
        if (c.json_out) {
            json j = {{"found", m.has_value()}};
            if (m) {
                j["message_id"] = m->message_id;
                j["priority"] = m->priority;
                j["enqueue_seq"] = m->enqueue_seq;
                j["redeliveries"] = m->redeliveries;
                j["payload_hex"] = to_hex(m->payload);
            }
            c.out << j.dump() << "\n";
        } else {
            c.out << (m ? to_hex(m->payload) : std::string("(empty)")) << "\n";
        }
    } else if (cmd == "pool attach") {
        print_pool(c, c.client.pool_control(a.queue, static_cast<uint8_t>(PoolAction::kAttach), settings_text(a)));
    } else if (cmd == "pool start") {
        print_pool(c, c.client.pool_control(a.queue, static_cast<uint8_t>(PoolAction::kStart)));
    } else if (cmd == "pool stop") {
        print_pool(c, c.client.pool_control(a.queue, static_cast<uint8_t>(PoolAction::kStop)));
    } else if (cmd == "pool redefine") {
        print_pool(c,
                   c.client.pool_control(a.queue, static_cast<uint8_t>(PoolAction::kRedefine), settings_text(a)));
    } else if (cmd == "pool status") {
        print_pool(c, c.client.pool_status(a.queue));
    } else if (cmd == "checkpoint") {
        Lsn lsn = c.client.checkpoint();
        if (c.json_out) {
            c.out << json{{"lsn", lsn}}.dump() << "\n";
        } else {
            c.out << "checkpoint at lsn " << lsn << "\n";
        }
    } else if (cmd == "begin") {
        if (session_txn(c) != 0) throw Error(ErrorCode::kUsage, "a transaction is already open");
        c.txn = c.client.begin();
        c.out << (c.json_out ? json{{"txn", c.txn}}.dump() : "txn " + std::to_string(c.txn)) << "\n";
    } else if (cmd == "commit" || cmd == "abort") {
        uint64_t t = session_txn(c);
        if (t == 0) throw Error(ErrorCode::kUsage, "no open transaction");
        c.txn = 0;
        if (cmd == "commit") {
            c.client.commit(t);
        } else {
            c.client.abort(t);
        }
        c.out << (c.json_out ? json{{cmd == "commit" ? "committed" : "aborted", t}}.dump() : cmd + " " + std::to_string(t))
              << "\n";
    } else {
        throw Error(ErrorCode::kUsage, "no command given");
    }
}

int exit_code(const Error& e) { return e.code() == ErrorCode::kUsage ? kExitUsage : kExitDomain; }

int run_guarded(Context& c, const Args& a) {
    try {
        execute(c, a);
        return kExitOk;
    } catch (const Error& e) {
        c.err << "error: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        c.err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
}

int parse_failure(CLI::App& app, const CLI::ParseError& e, std::ostream& out, std::ostream& err) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
}

// One command per line; blank lines and lines starting with '#' are skipped.
// Stops at the first failing command. A transaction left open is aborted.
int run_session(Context& c, std::istream& in) {
    c.in_session = true;
    std::string line;
    int rc = kExitOk;
    while (rc == kExitOk && std::getline(in, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        CLI::App app{"txn session"};
        app.require_subcommand(1);
        Args a;
        build(app, a, true);
        try {
            app.parse(line, false);
        } catch (const CLI::ParseError& e) {
            rc = parse_failure(app, e, c.out, c.err);
            if (rc == kExitOk) continue;
            break;
        }
        rc = run_guarded(c, a);
    }
    if (c.txn != 0) {
        uint64_t t = c.txn;
        c.txn = 0;
        try {
            c.client.abort(t);
        } catch (const Error&) {
        }
        if (rc == kExitOk) {
            c.err << "error: transaction " << t << " was still open at end of input; aborted\n";
            rc = kExitDomain;
        }
    }
    return rc;
}

int serve(const std::optional<BrokerConfig>& file_cfg, const std::string& data, const std::string& listen,
          std::ostream& out, std::ostream& err) {
    BrokerConfig cfg = file_cfg.value_or(BrokerConfig{});
    if (!data.empty()) cfg.data_dir = data;
    if (!listen.empty()) cfg.listen = listen;
    if (cfg.data_dir.empty()) throw Error(ErrorCode::kUsage, "serve needs --data or a config with data_dir");

    // Block the shutdown signals before any thread starts so only sigwait sees them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    auto engine = Engine::open(engine_options(cfg));
    apply_config(*engine, cfg);
    Broker broker(*engine, cfg.listen);
    const auto& rec = engine->recovery_summary();
    out << "recovered " << rec.queues.size() << " queues up to lsn " << rec.last_lsn << "\n";
    out << "listening on " << parse_endpoint(cfg.listen).host << ":" << broker.port() << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    out << "signal " << sig << ", shutting down" << std::endl;
    broker.stop();
    engine->close();
    err.flush();
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"qdb: transactional queue engine"};
    app.name("qdb");
    app.require_subcommand(1);
    std::string data_dir;
    std::string connect;
    std::string config_path;
    bool json_out = false;
    auto* data_opt = app.add_option("--data", data_dir, "data directory (embedded engine)");
    app.add_option("--connect", connect, "broker address host:port")->excludes(data_opt);
    app.add_option("--config", config_path, "broker config file");
    app.add_flag("--json", json_out, "machine-readable output");

    Args a;
    build(app, a, false);
    auto* txn = app.add_subcommand("txn", "transaction session: one command per stdin line");
    txn->callback([&a] { a.chosen = "txn"; });
    std::string listen;
    auto* srv = app.add_subcommand("serve", "run the broker until SIGINT or SIGTERM");
    srv->add_option("--listen", listen, "listen address host:port");
    srv->callback([&a] { a.chosen = "serve"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return parse_failure(app, e, out, err);
    }

    std::unique_ptr<Engine> engine;
    std::unique_ptr<Session> session;
    std::unique_ptr<Client> client;
    try {
        std::optional<BrokerConfig> cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (a.chosen == "serve") {
            if (!connect.empty()) throw Error(ErrorCode::kUsage, "serve does not take --connect");
            return serve(cfg, data_dir, listen, out, err);
        }
        if (!connect.empty()) {
            client = std::make_unique<Client>(connect);
        } else {
            BrokerConfig c = cfg.value_or(BrokerConfig{});
            if (!data_dir.empty()) c.data_dir = data_dir;
            if (c.data_dir.empty()) throw Error(ErrorCode::kUsage, "need --data DIR or --connect ADDR");
            engine = Engine::open(engine_options(c));
            if (cfg) apply_config(*engine, c);
            session = std::make_unique<Session>(*engine, "cli");
            client = std::make_unique<Client>(*session);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e);
    }

    Context ctx{*client, json_out, out, err};
    int rc = a.chosen == "txn" ? run_session(ctx, in) : run_guarded(ctx, a);

    client.reset();
    session.reset();
    if (engine) {
        try {
            engine->close();
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            if (rc == kExitOk) rc = kExitDomain;
        }
    }
    return rc;
}

}  // namespace qdb::broker
