#include "qdb/broker/config.hpp"

#include <charconv>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "qdb/error.hpp"
#include "qdb/workflow/workflow.hpp"

namespace qdb::broker {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::kUsage, msg); }

uint64_t to_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
        bad(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    auto l = lower(v);
    if (l == "true" || l == "yes" || l == "1" || l == "on") return true;
    if (l == "false" || l == "no" || l == "0" || l == "off") return false;
    bad(key + ": expected a boolean, got '" + v + "'");
}

std::pair<std::string, std::string> split_spec(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon == std::string::npos) return {spec, ""};
    return {spec.substr(0, colon), spec.substr(colon + 1)};
}

TriggerSettings parse_trigger(const std::string& name, const std::string& value) {
    std::istringstream in(value);
    std::string ev, timing, scope, handler;
    if (!(in >> ev >> timing >> scope >> handler)) {
        bad("trigger." + name + ": expected '<on_enqueue|on_dequeue> <immediate|deferred> <same_txn|new_top_level> <handler>'");
    }
    TriggerSettings t;
    t.name = name;
    ev = lower(ev);
    timing = lower(timing);
    scope = lower(scope);
    if (ev == "on_enqueue") {
        t.event = triggers::Event::kOnEnqueue;
    } else if (ev == "on_dequeue") {
        t.event = triggers::Event::kOnDequeue;
    } else {
        bad("trigger." + name + ": unknown event '" + ev + "'");
    }
    if (timing == "immediate") {
        t.timing = triggers::Timing::kImmediate;
    } else if (timing == "deferred") {
        t.timing = triggers::Timing::kDeferred;
    } else {
        bad("trigger." + name + ": unknown timing '" + timing + "'");
    }
    if (scope == "same_txn") {
        t.scope = triggers::Scope::kSameTxn;
    } else if (scope == "new_top_level") {
        t.scope = triggers::Scope::kNewTopLevel;
    } else {
        bad("trigger." + name + ": unknown scope '" + scope + "'");
    }
    if (t.timing == triggers::Timing::kDeferred && t.scope == triggers::Scope::kSameTxn) {
        bad("trigger." + name + ": deferred triggers must use new_top_level");
    }
    builtin_trigger_handler(handler);
    t.handler = handler;
    return t;
}

}  // namespace

BrokerConfig parse_config(std::string_view text) {
    BrokerConfig cfg;
    enum class Section { kNone, kBroker, kQueue } section = Section::kNone;
    QueueSettings* queue = nullptr;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') bad(where() + "unterminated section header");
            std::string header = trim(std::string_view(line).substr(1, line.size() - 2));
            if (header == "broker") {
                section = Section::kBroker;
                continue;
            }
            if (header.rfind("queue ", 0) == 0) {
                std::string name = trim(std::string_view(header).substr(6));
                if (name.empty()) bad(where() + "queue section without a name");
                for (const auto& q : cfg.queues) {
                    if (q.name == name) bad(where() + "queue '" + name + "' defined twice");
                }
                cfg.queues.push_back(QueueSettings{});
                queue = &cfg.queues.back();
                queue->name = name;
                section = Section::kQueue;
                continue;
            }
            bad(where() + "unknown section [" + header + "]");
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) bad(where() + "expected key = value");
        std::string key = lower(trim(std::string_view(line).substr(0, eq)));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        try {
            if (section == Section::kBroker) {
                if (key == "data_dir") {
                    cfg.data_dir = value;
                } else if (key == "listen") {
                    cfg.listen = value;
                } else if (key == "group_commit_wait_us") {
                    cfg.group_commit_wait = std::chrono::microseconds(to_u64(key, value));
                } else if (key == "group_commit_batch") {
                    cfg.group_commit_batch = to_u64(key, value);
                    if (cfg.group_commit_batch == 0) bad("group_commit_batch must be at least 1");
                } else if (key == "lock_timeout_ms") {
                    cfg.lock_timeout = std::chrono::milliseconds(to_u64(key, value));
                } else if (key == "max_payload") {
                    cfg.max_payload = to_u64(key, value);
                } else if (key == "sync") {
                    cfg.sync = to_bool(key, value);
                } else {
                    bad("unknown broker key '" + key + "'");
                }
            } else if (section == Section::kQueue) {
                if (key == "durability") {
                    auto v = lower(value);
                    if (v == "durable") {
                        queue->durability = Durability::kDurable;
                    } else if (v == "volatile") {
                        queue->durability = Durability::kVolatile;
                    } else {
                        bad("durability must be durable or volatile");
                    }
                } else if (key == "ordering") {
                    auto v = lower(value);
                    if (v == "fifo") {
                        queue->ordering = Ordering::kFifo;
                    } else if (v == "priority") {
                        queue->ordering = Ordering::kPriority;
                    } else {
                        bad("ordering must be fifo or priority");
                    }
                } else if (key.rfind("pool.", 0) == 0) {
                    queue->pool[key.substr(5)] = value;
                } else if (key.rfind("trigger.", 0) == 0) {
                    queue->triggers.push_back(parse_trigger(key.substr(8), value));
                } else {
                    bad("unknown queue key '" + key + "'");
                }
            } else {
                bad("key outside of a section");
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::kUsage) throw;
            bad(where() + e.what());
        }
    }
    for (const auto& q : cfg.queues) {
        if (q.pool.empty()) continue;
        try {
            pool_config(q.name, q.pool);
        } catch (const Error& e) {
            bad("queue '" + q.name + "': " + e.what());
        }
    }
    return cfg;
}

BrokerConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kUsage, "cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

EngineOptions engine_options(const BrokerConfig& cfg) {
    EngineOptions o;
    o.data_dir = cfg.data_dir;
    o.sync = cfg.sync;
    o.wal.group_commit_wait = cfg.group_commit_wait;
    o.wal.group_commit_batch = cfg.group_commit_batch;
    o.lock_timeout = cfg.lock_timeout;
    o.max_payload = cfg.max_payload;
    return o;
}

Settings parse_settings(std::string_view text) {
    Settings out;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) bad("expected key=value, got '" + line + "'");
        std::string key = lower(trim(std::string_view(line).substr(0, eq)));
        if (key.rfind("pool.", 0) == 0) key = key.substr(5);
        out[key] = trim(std::string_view(line).substr(eq + 1));
    }
    return out;
}

pool::Policy parse_policy(const std::string& s) {
    auto [kind, arg] = split_spec(lower(s));
    if (kind == "event" && arg.empty()) return pool::Policy::event();
    if (kind == "batch") return pool::Policy::batch(to_u64("policy batch threshold", arg));
    if (kind == "periodic") return pool::Policy::periodic(std::chrono::milliseconds(to_u64("policy periodic interval", arg)));
    bad("policy must be event, batch:N or periodic:MS, got '" + s + "'");
}

pool::ServerPoolConfig pool_config(const std::string& queue, const Settings& s) {
    pool::ServerPoolConfig cfg;
    cfg.queue = queue;
    std::string handler = "echo";
    for (const auto& [key, value] : s) {
        if (key == "min") {
            cfg.min_servers = to_u64(key, value);
        } else if (key == "max") {
            cfg.max_servers = to_u64(key, value);
        } else if (key == "policy") {
            cfg.policy = parse_policy(value);
        } else if (key == "failure_limit") {
            cfg.failure_limit = static_cast<uint32_t>(to_u64(key, value));
        } else if (key == "failure_window_ms") {
            cfg.failure_window = std::chrono::milliseconds(to_u64(key, value));
        } else if (key == "idle_shrink_after_ms") {
            cfg.idle_shrink_after = std::chrono::milliseconds(to_u64(key, value));
        } else if (key == "isolation") {
            auto v = lower(value);
            if (v == "read_past") {
                cfg.isolation = IsolationMode::kReadPastDequeue;
            } else if (v == "serializable") {
                cfg.isolation = IsolationMode::kSerializable;
            } else {
                bad("isolation must be read_past or serializable");
            }
        } else if (key == "max_redelivery") {
            cfg.max_redelivery = static_cast<uint32_t>(to_u64(key, value));
        } else if (key == "handler") {
            handler = value;
        } else {
            bad("unknown pool key '" + key + "'");
        }
    }
    cfg.handler = builtin_handler(handler);
    cfg.handler_name = handler;
    pool::validate(cfg);
    return cfg;
}

pool::WorkerHandler builtin_handler(const std::string& spec) {
    auto [name, arg] = split_spec(spec);
    auto echo = [](Engine& engine, Transaction& txn, const Message& m) {
        if (workflow::decode_request(m.payload)) {
            workflow::serve_message(engine, txn, m, [](const std::string& body) { return body; });
        }
        return true;
    };
    if (name == "echo" && arg.empty()) return echo;
    if (name == "copy-to-queue") {
        if (arg.empty()) bad("copy-to-queue needs a target queue");
        return [target = arg](Engine& engine, Transaction& txn, const Message& m) {
            engine.enqueue(txn, target, m.priority, m.payload);
            return true;
        };
    }
    if (name == "sleep-ms") {
        auto ms = std::chrono::milliseconds(to_u64("sleep-ms", arg));
        return [ms, echo](Engine& engine, Transaction& txn, const Message& m) {
            std::this_thread::sleep_for(ms);
            return echo(engine, txn, m);
        };
    }
    if (name == "fail-percent") {
        auto pct = to_u64("fail-percent", arg);
        if (pct > 100) bad("fail-percent must be 0..100");
        return [pct, echo](Engine& engine, Transaction& txn, const Message& m) {
            thread_local std::mt19937_64 rng{std::random_device{}()};
            if (std::uniform_int_distribution<uint64_t>(0, 99)(rng) < pct) return false;
            return echo(engine, txn, m);
        };
    }
    bad("unknown handler '" + spec + "' (echo, copy-to-queue:Q, sleep-ms:N, fail-percent:P)");
}

triggers::Handler builtin_trigger_handler(const std::string& spec) {
    auto [name, arg] = split_spec(spec);
    if (name == "counter" && arg.empty()) {
        // Firings are counted by the registry itself.
        return [](Engine&, const triggers::FiringContext&) {};
    }
    if (name == "copy-to-queue" && !arg.empty()) {
        return [target = arg](Engine& engine, const triggers::FiringContext& ctx) {
            std::string payload;
            PollOptions opts;
            opts.include_payload = true;
            opts.include_dirty = true;
            opts.unsafe_dirty_payload = true;
            for (const auto& e : engine.poll(ctx.queue_name, PollFilter::by_id(ctx.message_id), opts)) {
                if (e.payload) payload = *e.payload;
            }
            engine.enqueue(*ctx.txn, target, 0, std::move(payload));
        };
    }
    bad("unknown trigger handler '" + spec + "' (counter, copy-to-queue:Q)");
}

void apply_config(Engine& engine, const BrokerConfig& cfg) {
    for (const auto& q : cfg.queues) {
        if (auto existing = engine.find_queue(q.name)) {
            if (existing->durability != q.durability || existing->ordering != q.ordering) {
                throw Error(ErrorCode::kUsage, "queue '" + q.name + "' exists with a different definition");
            }
        } else {
            engine.create_queue(q.name, q.durability, q.ordering);
        }
    }
    for (const auto& q : cfg.queues) {
        if (!q.pool.empty() && !engine.pools().has_pool(q.name)) engine.pools().attach(pool_config(q.name, q.pool));
        auto registered = engine.triggers().list();
        for (const auto& t : q.triggers) {
            std::string name = q.name + "/" + t.name;
            bool present = std::any_of(registered.begin(), registered.end(),
                                       [&](const auto& s) { return s.name == name; });
            if (present) continue;
            triggers::TriggerSpec spec;
            spec.queue = q.name;
            spec.event = t.event;
            spec.timing = t.timing;
            spec.scope = t.scope;
            spec.handler = builtin_trigger_handler(t.handler);
            spec.name = name;
            engine.triggers().register_trigger(std::move(spec));
        }
    }
}

}  // namespace qdb::broker
