#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "qdb/engine.hpp"
#include "qdb/pool/pool.hpp"

namespace qdb::broker {

nlohmann::json queue_json(const QueueStats& s);
nlohmann::json pool_json(const pool::PoolStatus& s, TimePoint now);

// Field names are stable; scripts depend on them.
//   queues[]  name queue_id durability ordering state depth_visible depth_dirty
//             enqueue_count dequeue_count lock_waits
//   pools[]   queue state min_servers max_servers policy handler current_servers
//             busy_servers draining_servers dispatched_count completed_count
//             failed_count dead_lettered recent_failures_ms_ago[]
//   triggers[] id name queue_id event timing scope fired failures suspended
//   locks     resources holders waiters subscribers total_waits total_timeouts
//   log       size_bytes last_lsn durable_lsn physical_flushes records_appended
//             last_checkpoint_lsn failed
//   transactions begun committed aborted logged_commits active
nlohmann::json stats_json(Engine& engine, const std::optional<std::string>& queue = std::nullopt);

// Throws unless `report` has every field above with the right JSON type.
void check_stats_schema(const nlohmann::json& report);

std::string render_text(const nlohmann::json& report);

}  // namespace qdb::broker
