#include "qdb/wal/log_record.hpp"

#include <zlib.h>

#include "qdb/bytes.hpp"

namespace qdb::wal {

namespace {

constexpr uint32_t kMaxBodySize = 64u << 20;

bool has_queue(RecordKind kind) {
    switch (kind) {
        case RecordKind::kInsert:
        case RecordKind::kDelete:
        case RecordKind::kCreateQueue:
        case RecordKind::kDestroyQueue:
            return true;
        default:
            return false;
    }
}

}  // namespace

const char* to_string(RecordKind kind) {
    switch (kind) {
        case RecordKind::kBegin: return "BEGIN";
        case RecordKind::kInsert: return "INSERT";
        case RecordKind::kDelete: return "DELETE";
        case RecordKind::kCommit: return "COMMIT";
        case RecordKind::kAbort: return "ABORT";
        case RecordKind::kCheckpoint: return "CHECKPOINT";
        case RecordKind::kCreateQueue: return "CREATE_QUEUE";
        case RecordKind::kDestroyQueue: return "DESTROY_QUEUE";
    }
    return "?";
}

LogRecord LogRecord::begin(TxnId txn) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kBegin;
    return r;
}

LogRecord LogRecord::commit(TxnId txn) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kCommit;
    return r;
}

LogRecord LogRecord::abort(TxnId txn) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kAbort;
    return r;
}

LogRecord LogRecord::insert(TxnId txn, QueueId q, MessageId m, int64_t priority, std::string payload) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kInsert;
    r.queue_id = q;
    r.message_id = m;
    r.priority = priority;
    r.payload = std::move(payload);
    return r;
}

LogRecord LogRecord::erase(TxnId txn, QueueId q, MessageId m) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kDelete;
    r.queue_id = q;
    r.message_id = m;
    return r;
}

LogRecord LogRecord::create_queue(TxnId txn, QueueId q, std::string name, Durability d, Ordering o) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kCreateQueue;
    r.queue_id = q;
    r.queue_name = std::move(name);
    r.durability = d;
    r.ordering = o;
    return r;
}

LogRecord LogRecord::destroy_queue(TxnId txn, QueueId q) {
    LogRecord r;
    r.txn_id = txn;
    r.kind = RecordKind::kDestroyQueue;
    r.queue_id = q;
    return r;
}

uint32_t crc32(std::string_view data) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    return static_cast<uint32_t>(
        ::crc32(c, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

std::string file_header(const char (&magic)[4]) {
    ByteWriter w;
    w.raw(std::string_view(magic, 4));
    w.u32(kFormatVersion);
    return w.take();
}

void encode_record(const LogRecord& rec, std::string& out) {
    ByteWriter w(out);
    std::size_t len_pos = out.size();
    w.u32(0);
    std::size_t body_start = out.size();
    w.u64(rec.lsn);
    w.u64(rec.txn_id);
    w.u8(static_cast<uint8_t>(rec.kind));
    switch (rec.kind) {
        case RecordKind::kInsert:
            w.u64(rec.queue_id);
            w.u64(rec.message_id);
            w.i64(rec.priority);
            w.str32(rec.payload);
            break;
        case RecordKind::kDelete:
            w.u64(rec.queue_id);
            w.u64(rec.message_id);
            break;
        case RecordKind::kCreateQueue:
            w.u64(rec.queue_id);
            w.str32(rec.queue_name);
            w.u8(static_cast<uint8_t>(rec.durability));
            w.u8(static_cast<uint8_t>(rec.ordering));
            break;
        case RecordKind::kDestroyQueue:
            w.u64(rec.queue_id);
            break;
        case RecordKind::kCheckpoint:
            w.u64(rec.checkpoint_lsn);
            w.u64(rec.next_txn_id);
            w.u64(rec.next_message_id);
            w.u64(rec.next_queue_id);
            break;
        case RecordKind::kBegin:
        case RecordKind::kCommit:
        case RecordKind::kAbort:
            break;
    }
    auto body_len = static_cast<uint32_t>(out.size() - body_start);
    w.patch_u32(len_pos, body_len);
    w.u32(crc32(std::string_view(out).substr(body_start, body_len)));
}

std::optional<LogRecord> decode_body(std::string_view body) {
    ByteReader r(body);
    LogRecord rec;
    rec.lsn = r.u64();
    rec.txn_id = r.u64();
    uint8_t kind = r.u8();
    if (!r.ok() || kind < 1 || kind > 8) return std::nullopt;
    rec.kind = static_cast<RecordKind>(kind);
    switch (rec.kind) {
        case RecordKind::kInsert:
            rec.queue_id = r.u64();
            rec.message_id = r.u64();
            rec.priority = r.i64();
            rec.payload = r.str32();
            break;
        case RecordKind::kDelete:
            rec.queue_id = r.u64();
            rec.message_id = r.u64();
            break;
        case RecordKind::kCreateQueue: {
            rec.queue_id = r.u64();
            rec.queue_name = r.str32();
            uint8_t d = r.u8();
            uint8_t o = r.u8();
            if (d > 1 || o > 1) return std::nullopt;
            rec.durability = static_cast<Durability>(d);
            rec.ordering = static_cast<Ordering>(o);
            break;
        }
        case RecordKind::kDestroyQueue:
            rec.queue_id = r.u64();
            break;
        case RecordKind::kCheckpoint:
            rec.checkpoint_lsn = r.u64();
            rec.next_txn_id = r.u64();
            rec.next_message_id = r.u64();
            rec.next_queue_id = r.u64();
            break;
        case RecordKind::kBegin:
        case RecordKind::kCommit:
        case RecordKind::kAbort:
            break;
    }
    if (!r.ok() || !r.at_end()) return std::nullopt;
    if (has_queue(rec.kind) && rec.queue_id == 0) return std::nullopt;
    return rec;
}

Frame read_frame(std::string_view data) {
    Frame f;
    ByteReader r(data);
    uint32_t len = r.u32();
    if (!r.ok()) return f;
    if (len > kMaxBodySize) {
        f.status = FrameStatus::kMalformed;
        return f;
    }
    std::string_view body = r.raw(len);
    uint32_t crc = r.u32();
    if (!r.ok()) return f;
    f.frame_size = 8 + static_cast<std::size_t>(len);
    if (crc32(body) != crc) {
        f.status = FrameStatus::kBadChecksum;
        return f;
    }
    auto rec = decode_body(body);
    if (!rec) {
        f.status = FrameStatus::kMalformed;
        return f;
    }
    f.status = FrameStatus::kOk;
    f.record = std::move(*rec);
    return f;
}

}  // namespace qdb::wal
