#include "qdb/broker/report.hpp"

#include <sstream>

#include "qdb/error.hpp"
#include "qdb/triggers/triggers.hpp"

namespace qdb::broker {

using nlohmann::json;

json queue_json(const QueueStats& s) {
    return {
        {"name", s.descriptor.name},
        {"queue_id", s.descriptor.queue_id},
        {"durability", to_string(s.descriptor.durability)},
        {"ordering", to_string(s.descriptor.ordering)},
        {"state", to_string(s.descriptor.state)},
        {"depth_visible", s.depth_visible},
        {"depth_dirty", s.depth_dirty},
        {"enqueue_count", s.enqueue_count},
        {"dequeue_count", s.dequeue_count},
        {"lock_waits", s.lock_waits},
    };
}

json pool_json(const pool::PoolStatus& s, TimePoint now) {
    json ago = json::array();
    for (TimePoint f : s.recent_failures) {
        ago.push_back(std::chrono::duration_cast<std::chrono::milliseconds>(now - f).count());
    }
    return {
        {"queue", s.queue},
        {"state", pool::to_string(s.state)},
        {"min_servers", s.min_servers},
        {"max_servers", s.max_servers},
        {"policy", pool::describe(s.policy)},
        {"handler", s.handler_name},
        {"current_servers", s.current_servers},
        {"busy_servers", s.busy_servers},
        {"draining_servers", s.draining_servers},
        {"dispatched_count", s.dispatched_count},
        {"completed_count", s.completed_count},
        {"failed_count", s.failed_count},
        {"dead_lettered", s.dead_lettered},
        {"recent_failures_ms_ago", ago},
    };
}

json stats_json(Engine& engine, const std::optional<std::string>& queue) {
    json report;
    report["queues"] = json::array();
    if (queue) {
        report["queues"].push_back(queue_json(engine.stats(*queue)));
    } else {
        for (const auto& d : engine.list_queues()) {
            try {
                report["queues"].push_back(queue_json(engine.stats(d.name)));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::kNotFound) throw;
            }
        }
    }

    TimePoint now = engine.clock().now();
    report["pools"] = json::array();
    for (const auto& p : engine.pools().list()) {
        if (queue && p.queue != *queue) continue;
        report["pools"].push_back(pool_json(p, now));
    }

    report["triggers"] = json::array();
    for (const auto& t : engine.triggers().list()) {
        report["triggers"].push_back({
            {"id", t.id},
            {"name", t.name},
            {"queue_id", t.queue_id},
            {"event", triggers::to_string(t.event)},
            {"timing", triggers::to_string(t.timing)},
            {"scope", triggers::to_string(t.scope)},
            {"fired", t.fired},
            {"failures", t.failures},
            {"suspended", t.suspended},
        });
    }

    auto locks = engine.locks().summary();
    report["locks"] = {
        {"resources", locks.resources},     {"holders", locks.holders},
        {"waiters", locks.waiters},         {"subscribers", locks.subscribers},
        {"total_waits", locks.total_waits}, {"total_timeouts", locks.total_timeouts},
        {"table", engine.locks().dump()},
    };

    auto& log = engine.log();
    report["log"] = {
        {"size_bytes", log.size_bytes()},
        {"last_lsn", log.last_lsn()},
        {"durable_lsn", log.durable_lsn()},
        {"physical_flushes", log.physical_flushes()},
        {"records_appended", log.records_appended()},
        {"last_checkpoint_lsn", engine.last_checkpoint_lsn()},
        {"failed", engine.failed()},
    };

    auto c = engine.txns().counters();
    report["transactions"] = {
        {"begun", c.begun},
        {"committed", c.committed},
        {"aborted", c.aborted},
        {"logged_commits", c.logged_commits},
        {"active", engine.txns().active_count()},
    };
    return report;
}

namespace {

enum class Kind { kString, kUnsigned, kBool, kArray, kObject };

void expect(const json& obj, const std::string& where, std::initializer_list<std::pair<const char*, Kind>> fields) {
    if (!obj.is_object()) throw Error(ErrorCode::kInternal, where + " is not an object");
    for (const auto& [name, kind] : fields) {
        if (!obj.contains(name)) throw Error(ErrorCode::kInternal, where + "." + name + " missing");
        const json& v = obj.at(name);
        bool ok = false;
        switch (kind) {
            case Kind::kString: ok = v.is_string(); break;
            case Kind::kUnsigned: ok = v.is_number_unsigned(); break;
            case Kind::kBool: ok = v.is_boolean(); break;
            case Kind::kArray: ok = v.is_array(); break;
            case Kind::kObject: ok = v.is_object(); break;
        }
        if (!ok) throw Error(ErrorCode::kInternal, where + "." + name + " has the wrong type");
    }
    if (obj.size() != fields.size()) throw Error(ErrorCode::kInternal, where + " has unexpected fields");
}

}  // namespace

void check_stats_schema(const json& r) {
    constexpr auto S = Kind::kString;
    constexpr auto U = Kind::kUnsigned;
    constexpr auto B = Kind::kBool;
    constexpr auto A = Kind::kArray;
    constexpr auto O = Kind::kObject;
    expect(r, "report", {{"queues", A}, {"pools", A}, {"triggers", A}, {"locks", O}, {"log", O}, {"transactions", O}});
    for (const auto& q : r["queues"]) {
        expect(q, "queues[]", {{"name", S}, {"queue_id", U}, {"durability", S}, {"ordering", S}, {"state", S},
                               {"depth_visible", U}, {"depth_dirty", U}, {"enqueue_count", U},
                               {"dequeue_count", U}, {"lock_waits", U}});
    }
    for (const auto& p : r["pools"]) {
        expect(p, "pools[]", {{"queue", S}, {"state", S}, {"min_servers", U}, {"max_servers", U}, {"policy", S},
                              {"handler", S}, {"current_servers", U}, {"busy_servers", U},
                              {"draining_servers", U}, {"dispatched_count", U}, {"completed_count", U},
                              {"failed_count", U}, {"dead_lettered", U}, {"recent_failures_ms_ago", A}});
    }
    for (const auto& t : r["triggers"]) {
        expect(t, "triggers[]", {{"id", U}, {"name", S}, {"queue_id", U}, {"event", S}, {"timing", S},
                                 {"scope", S}, {"fired", U}, {"failures", U}, {"suspended", B}});
    }
    expect(r["locks"], "locks", {{"resources", U}, {"holders", U}, {"waiters", U}, {"subscribers", U},
                                 {"total_waits", U}, {"total_timeouts", U}, {"table", S}});
    expect(r["log"], "log", {{"size_bytes", U}, {"last_lsn", U}, {"durable_lsn", U}, {"physical_flushes", U},
                             {"records_appended", U}, {"last_checkpoint_lsn", U}, {"failed", B}});
    expect(r["transactions"], "transactions", {{"begun", U}, {"committed", U}, {"aborted", U},
                                               {"logged_commits", U}, {"active", U}});
}

std::string render_text(const json& r) {
    std::ostringstream os;
    os << "queues:\n";
    if (r["queues"].empty()) os << "  (none)\n";
    for (const auto& q : r["queues"]) {
        os << "  " << q["name"].get<std::string>() << " [" << q["durability"].get<std::string>() << ", "
           << q["ordering"].get<std::string>() << ", " << q["state"].get<std::string>() << "]"
           << " visible=" << q["depth_visible"] << " dirty=" << q["depth_dirty"]
           << " enqueued=" << q["enqueue_count"] << " dequeued=" << q["dequeue_count"]
           << " lock_waits=" << q["lock_waits"] << "\n";
    }
    if (!r["pools"].empty()) {
        os << "pools:\n";
        for (const auto& p : r["pools"]) {
            os << "  " << p["queue"].get<std::string>() << " " << p["state"].get<std::string>() << " "
               << p["policy"].get<std::string>() << " servers=" << p["current_servers"] << " ["
               << p["min_servers"] << ".." << p["max_servers"] << "] busy=" << p["busy_servers"]
               << " dispatched=" << p["dispatched_count"] << " failed=" << p["failed_count"]
               << " recent_failures=" << p["recent_failures_ms_ago"].size() << "\n";
        }
    }
    if (!r["triggers"].empty()) {
        os << "triggers:\n";
        for (const auto& t : r["triggers"]) {
            os << "  " << t["name"].get<std::string>() << " " << t["event"].get<std::string>() << " "
               << t["timing"].get<std::string>() << " " << t["scope"].get<std::string>()
               << " fired=" << t["fired"] << " failures=" << t["failures"]
               << (t["suspended"].get<bool>() ? " SUSPENDED" : "") << "\n";
        }
    }
    const auto& l = r["locks"];
    os << "locks: resources=" << l["resources"] << " holders=" << l["holders"] << " waiters=" << l["waiters"]
       << " subscribers=" << l["subscribers"] << " waits=" << l["total_waits"]
       << " timeouts=" << l["total_timeouts"] << "\n";
    const auto& g = r["log"];
    os << "log: size=" << g["size_bytes"] << " last_lsn=" << g["last_lsn"] << " durable_lsn=" << g["durable_lsn"]
       << " flushes=" << g["physical_flushes"] << " last_checkpoint_lsn=" << g["last_checkpoint_lsn"]
       << (g["failed"].get<bool>() ? " FAILED" : "") << "\n";
    const auto& t = r["transactions"];
    os << "transactions: begun=" << t["begun"] << " committed=" << t["committed"] << " aborted=" << t["aborted"]
       << " active=" << t["active"] << "\n";
    return os.str();
}

}  // namespace qdb::broker
