#include "qdb/wal/recovery.hpp"

#include <algorithm>
#include <unordered_map>

#include "qdb/bytes.hpp"
#include "qdb/error.hpp"

namespace qdb::wal {

namespace {

bool header_ok(std::string_view bytes, const char (&magic)[4]) {
    if (bytes.size() < kHeaderSize) return false;
    return bytes.substr(0, 4) == std::string_view(magic, 4);
}

// After a damaged frame, look for any later frame that decodes as a COMMIT.
// Only frames reachable through the damaged frame's length prefix are tried;
// a crash tears at most the last write, so nothing decodes past it.
bool commit_follows(std::string_view bytes, std::size_t offset, std::size_t damaged_size) {
    if (damaged_size == 0) return false;
    std::size_t pos = offset + damaged_size;
    while (pos < bytes.size()) {
        Frame f = read_frame(bytes.substr(pos));
        if (f.status != FrameStatus::kOk) return false;
        if (f.record.kind == RecordKind::kCommit) return true;
        pos += f.frame_size;
    }
    return false;
}

void apply_effect(EngineState& state, const LogRecord& rec) {
    switch (rec.kind) {
        case RecordKind::kCreateQueue: {
            RecoveredQueue q;
            q.descriptor.queue_id = rec.queue_id;
            q.descriptor.name = rec.queue_name;
            q.descriptor.durability = rec.durability;
            q.descriptor.ordering = rec.ordering;
            q.descriptor.created_lsn = rec.lsn;
            state.queues[rec.queue_id] = std::move(q);
            break;
        }
        case RecordKind::kDestroyQueue:
            state.queues.erase(rec.queue_id);
            break;
        case RecordKind::kInsert: {
            auto it = state.queues.find(rec.queue_id);
            if (it == state.queues.end()) {
                throw Error(ErrorCode::kCorruptLog, "INSERT into unknown queue at lsn " +
                                                        std::to_string(rec.lsn));
            }
            if (it->second.descriptor.durability == Durability::kVolatile) break;
            it->second.messages[rec.message_id] =
                RecoveredMessage{rec.message_id, rec.priority, rec.payload, rec.lsn};
            break;
        }
        case RecordKind::kDelete: {
            auto it = state.queues.find(rec.queue_id);
            if (it != state.queues.end()) it->second.messages.erase(rec.message_id);
            break;
        }
        default:
            break;
    }
}

}  // namespace

LogScan scan_log(std::string_view bytes) {
    LogScan scan;
    if (bytes.size() < kHeaderSize) {
        scan.torn_tail = !bytes.empty();
        return scan;
    }
    if (!header_ok(bytes, kLogMagic)) throw Error(ErrorCode::kCorruptLog, "bad log magic");
    ByteReader hr(bytes.substr(4, 4));
    if (hr.u32() != kFormatVersion) throw Error(ErrorCode::kCorruptLog, "unsupported log version");

    std::size_t pos = kHeaderSize;
    Lsn prev = 0;
    while (pos < bytes.size()) {
        Frame f = read_frame(bytes.substr(pos));
        if (f.status != FrameStatus::kOk) {
            if (commit_follows(bytes, pos, f.frame_size)) {
                throw Error(ErrorCode::kCorruptLog,
                            "damaged record at offset " + std::to_string(pos) +
                                " precedes committed work");
            }
            scan.torn_tail = true;
            break;
        }
        if (f.record.lsn <= prev) {
            throw Error(ErrorCode::kCorruptLog, "non-increasing lsn at offset " + std::to_string(pos));
        }
        prev = f.record.lsn;
        scan.records.push_back(std::move(f.record));
        pos += f.frame_size;
    }
    scan.valid_size = pos;
    return scan;
}

std::string encode_checkpoint(const CheckpointImage& image) {
    std::string out = file_header(kCheckpointMagic);
    LogRecord head;
    head.kind = RecordKind::kCheckpoint;
    head.lsn = image.lsn_at_checkpoint;
    head.checkpoint_lsn = image.lsn_at_checkpoint;
    head.next_txn_id = image.next_txn_id;
    head.next_message_id = image.next_message_id;
    head.next_queue_id = image.next_queue_id;
    encode_record(head, out);
    for (const auto& q : image.queues) {
        LogRecord r = LogRecord::create_queue(0, q.queue_id, q.name, q.durability, q.ordering);
        r.lsn = q.created_lsn;
        encode_record(r, out);
    }
    for (const auto& [qid, m] : image.messages) {
        LogRecord r = LogRecord::insert(0, qid, m.message_id, m.priority, m.payload);
        r.lsn = m.enqueue_seq;
        encode_record(r, out);
    }
    // Terminator: an image without it was never completely written.
    LogRecord end = LogRecord::commit(0);
    end.lsn = image.lsn_at_checkpoint;
    encode_record(end, out);
    return out;
}

CheckpointImage decode_checkpoint(std::string_view bytes) {
    if (!header_ok(bytes, kCheckpointMagic)) throw Error(ErrorCode::kCorruptLog, "bad checkpoint magic");
    CheckpointImage image;
    std::size_t pos = kHeaderSize;
    bool have_head = false;
    bool terminated = false;
    while (pos < bytes.size() && !terminated) {
        Frame f = read_frame(bytes.substr(pos));
        if (f.status != FrameStatus::kOk) throw Error(ErrorCode::kCorruptLog, "damaged checkpoint image");
        const LogRecord& r = f.record;
        pos += f.frame_size;
        switch (r.kind) {
            case RecordKind::kCheckpoint:
                image.lsn_at_checkpoint = r.checkpoint_lsn;
                image.next_txn_id = r.next_txn_id;
                image.next_message_id = r.next_message_id;
                image.next_queue_id = r.next_queue_id;
                have_head = true;
                break;
            case RecordKind::kCreateQueue: {
                QueueDescriptor d;
                d.queue_id = r.queue_id;
                d.name = r.queue_name;
                d.durability = r.durability;
                d.ordering = r.ordering;
                d.created_lsn = r.lsn;
                image.queues.push_back(std::move(d));
                break;
            }
            case RecordKind::kInsert:
                image.messages.emplace_back(
                    r.queue_id, RecoveredMessage{r.message_id, r.priority, r.payload, r.lsn});
                break;
            case RecordKind::kCommit:
                terminated = true;
                break;
            default:
                throw Error(ErrorCode::kCorruptLog, "unexpected record in checkpoint image");
        }
    }
    if (!have_head || !terminated || pos != bytes.size()) {
        throw Error(ErrorCode::kCorruptLog, "incomplete checkpoint image");
    }
    return image;
}

void write_checkpoint(Storage& storage, const std::filesystem::path& dir,
                      const CheckpointImage& image) {
    std::string bytes = encode_checkpoint(image);
    auto tmp = dir / kCheckpointTempName;
    {
        auto file = storage.open_append(tmp, true);
        file->append(std::as_bytes(std::span(bytes)));
        file->sync();
    }
    storage.rename(tmp, dir / kCheckpointFileName);
    storage.sync_dir(dir);
}

EngineState replay(const CheckpointImage* image, const LogScan& log) {
    EngineState state;
    if (image) {
        state.checkpoint_lsn = image->lsn_at_checkpoint;
        state.last_lsn = image->lsn_at_checkpoint;
        state.next_txn_id = image->next_txn_id;
        state.next_message_id = image->next_message_id;
        state.next_queue_id = image->next_queue_id;
        for (const auto& d : image->queues) state.queues[d.queue_id].descriptor = d;
        for (const auto& [qid, m] : image->messages) {
            auto it = state.queues.find(qid);
            if (it == state.queues.end()) throw Error(ErrorCode::kCorruptLog, "image message for unknown queue");
            it->second.messages[m.message_id] = m;
        }
    }

    std::unordered_map<TxnId, std::vector<const LogRecord*>> pending;
    for (const auto& rec : log.records) {
        state.last_lsn = std::max(state.last_lsn, rec.lsn);
        state.next_txn_id = std::max(state.next_txn_id, rec.txn_id + 1);
        if (rec.kind == RecordKind::kInsert) {
            state.next_message_id = std::max(state.next_message_id, rec.message_id + 1);
        }
        if (rec.kind == RecordKind::kCreateQueue) {
            state.next_queue_id = std::max(state.next_queue_id, rec.queue_id + 1);
        }
        // Everything at or below the image lsn is already reflected in it.
        if (rec.lsn <= state.checkpoint_lsn) continue;

        switch (rec.kind) {
            case RecordKind::kBegin:
                if (!pending.emplace(rec.txn_id, std::vector<const LogRecord*>{}).second) {
                    throw Error(ErrorCode::kCorruptLog, "duplicate BEGIN for txn " + std::to_string(rec.txn_id));
                }
                break;
            case RecordKind::kInsert:
            case RecordKind::kDelete:
            case RecordKind::kCreateQueue:
            case RecordKind::kDestroyQueue: {
                auto it = pending.find(rec.txn_id);
                if (it == pending.end()) {
                    throw Error(ErrorCode::kCorruptLog,
                                std::string(to_string(rec.kind)) + " without BEGIN at lsn " +
                                    std::to_string(rec.lsn));
                }
                it->second.push_back(&rec);
                break;
            }
            case RecordKind::kCommit: {
                auto it = pending.find(rec.txn_id);
                if (it != pending.end()) {
                    for (const LogRecord* effect : it->second) apply_effect(state, *effect);
                    pending.erase(it);
                }
                ++state.committed_transactions;
                break;
            }
            case RecordKind::kAbort:
                if (pending.erase(rec.txn_id) > 0) ++state.discarded_transactions;
                break;
            case RecordKind::kCheckpoint:
                break;
        }
    }
    state.discarded_transactions += pending.size();

    // Volatile contents never survive a restart, whatever the image says.
    for (auto& [qid, q] : state.queues) {
        if (q.descriptor.durability == Durability::kVolatile) q.messages.clear();
    }
    state.log_valid_size = log.valid_size;
    state.log_torn = log.torn_tail;
    return state;
}

EngineState recover(Storage& storage, const std::filesystem::path& dir) {
    std::optional<CheckpointImage> image;
    if (auto bytes = storage.read_all(dir / kCheckpointFileName)) image = decode_checkpoint(*bytes);
    LogScan scan;
    if (auto bytes = storage.read_all(dir / kLogFileName)) scan = scan_log(*bytes);
    return replay(image ? &*image : nullptr, scan);
}

}  // namespace qdb::wal
