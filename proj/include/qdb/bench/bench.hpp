#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace qdb::bench {

struct BenchParams {
    std::string scenario;
    std::size_t messages = 2000;
    std::size_t payload_bytes = 64;
    std::size_t concurrency = 1;
    uint64_t seed = 1;
    // Per-message work done by a consumer while it holds the dequeued message.
    // It is a sleep, standing in for I/O done by a server; on a single core a
    // busy loop would hide any concurrency.
    std::chrono::microseconds work{2000};
    // Empty: a fresh temporary directory, removed afterwards.
    std::filesystem::path dir;
    bool sync = true;
};

struct BenchReport {
    std::string scenario;
    BenchParams params;
    double duration_s = 0;
    uint64_t operations = 0;
    double throughput = 0;  // operations per second
    double p50_us = 0;
    double p95_us = 0;
    double p99_us = 0;
    uint64_t lock_waits = 0;
    double mean_blocked_us = 0;  // mean time spent inside dequeue calls
    uint64_t commits = 0;        // commits that wrote log records
    uint64_t flushes = 0;
    double flushes_per_commit = 0;
    bool audit_ok = false;
    std::string audit_detail;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

const std::vector<std::string>& scenario_names();

// Throws Error(kUsage) for an unknown scenario or zero concurrency/messages.
BenchReport run_scenario(const BenchParams& params);

// Nearest-rank percentile of unsorted samples; 0 for an empty set.
double percentile(std::vector<double> samples, double p);

}  // namespace qdb::bench
