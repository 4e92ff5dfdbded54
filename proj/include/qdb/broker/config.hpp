#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qdb/engine.hpp"
#include "qdb/pool/pool.hpp"
#include "qdb/triggers/triggers.hpp"

namespace qdb::broker {

// key -> value within one section.
using Settings = std::map<std::string, std::string>;

struct TriggerSettings {
    std::string name;
    triggers::Event event = triggers::Event::kOnEnqueue;
    triggers::Timing timing = triggers::Timing::kImmediate;
    triggers::Scope scope = triggers::Scope::kSameTxn;
    std::string handler;  // copy-to-queue:NAME or counter
};

struct QueueSettings {
    std::string name;
    Durability durability = Durability::kDurable;
    Ordering ordering = Ordering::kFifo;
    // Pool keys with the "pool." prefix stripped; empty when no pool is configured.
    Settings pool;
    std::vector<TriggerSettings> triggers;
};

struct BrokerConfig {
    std::filesystem::path data_dir;
    std::string listen = "127.0.0.1:7600";
    std::chrono::microseconds group_commit_wait{1000};
    std::size_t group_commit_batch = 64;
    std::chrono::milliseconds lock_timeout{5000};
    std::size_t max_payload = 1u << 20;
    bool sync = true;
    std::vector<QueueSettings> queues;
};

// Throws Error(kUsage) with "line N: ..." for any grammar or range violation.
BrokerConfig parse_config(std::string_view text);
BrokerConfig load_config(const std::filesystem::path& path);

EngineOptions engine_options(const BrokerConfig& cfg);

// Parses "key=value" lines (or a config-file pool section) into a pool config.
Settings parse_settings(std::string_view text);
pool::ServerPoolConfig pool_config(const std::string& queue, const Settings& s);
pool::Policy parse_policy(const std::string& s);

// echo, copy-to-queue:NAME, sleep-ms:N, fail-percent:P. echo answers
// workflow requests and consumes anything else.
pool::WorkerHandler builtin_handler(const std::string& spec);
triggers::Handler builtin_trigger_handler(const std::string& spec);

// Creates missing queues, attaches missing pools and registers triggers.
// Running it twice with the same config changes nothing the second time.
void apply_config(Engine& engine, const BrokerConfig& cfg);

}  // namespace qdb::broker
