#include "qdb/workflow/workflow.hpp"

#include <algorithm>
#include <mutex>
#include <random>

#include "qdb/bytes.hpp"
#include "qdb/engine.hpp"
#include "qdb/error.hpp"

namespace qdb::workflow {

namespace {

constexpr std::string_view kRequestMagic = "QREQ";
constexpr std::string_view kResponseMagic = "QRSP";

uint64_t fresh_request_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lk(mu);
    uint64_t id;
    do {
        id = rng();
    } while (id == 0);
    return id;
}

void require_active(Engine& engine, const std::string& queue) {
    auto d = engine.find_queue(queue);
    if (!d) throw Error(ErrorCode::kNotFound, "queue '" + queue + "' not found");
    if (d->state != QueueState::kActive) {
        throw Error(ErrorCode::kUnavailable, "queue '" + queue + "' is " + to_string(d->state));
    }
}

void abort_quietly(Engine& engine, Transaction& txn) {
    if (txn.state() != TxnState::kActive) return;
    try {
        engine.abort(txn);
    } catch (...) {
    }
}

}  // namespace

const char* to_string(ResponseStatus s) { return s == ResponseStatus::kOk ? "OK" : "HANDLER_ERROR"; }

const char* to_string(RequestStatus s) {
    switch (s) {
        case RequestStatus::kQueued: return "QUEUED";
        case RequestStatus::kInProcess: return "IN_PROCESS";
        case RequestStatus::kDone: return "DONE";
        case RequestStatus::kUnknown: return "UNKNOWN";
    }
    return "?";
}

std::string encode_request(const Request& r) {
    ByteWriter w;
    w.raw(kRequestMagic);
    w.u8(kWireVersion);
    w.u64(r.request_id);
    w.str16(r.reply_to);
    w.str32(r.body);
    return w.take();
}

std::optional<Request> decode_request(std::string_view payload) {
    ByteReader r(payload);
    if (r.raw(4) != kRequestMagic || r.u8() != kWireVersion) return std::nullopt;
    Request out;
    out.request_id = r.u64();
    out.reply_to = r.str16();
    out.body = r.str32();
    if (!r.ok() || !r.at_end()) return std::nullopt;
    return out;
}

std::string encode_response(const Response& r) {
    ByteWriter w;
    w.raw(kResponseMagic);
    w.u8(kWireVersion);
    w.u64(r.request_id);
    w.u8(static_cast<uint8_t>(r.status));
    w.str32(r.body);
    return w.take();
}

std::optional<Response> decode_response(std::string_view payload) {
    ByteReader r(payload);
    if (r.raw(4) != kResponseMagic || r.u8() != kWireVersion) return std::nullopt;
    Response out;
    out.request_id = r.u64();
    uint8_t st = r.u8();
    out.body = r.str32();
    if (!r.ok() || !r.at_end() || st > 1) return std::nullopt;
    out.status = static_cast<ResponseStatus>(st);
    return out;
}

std::optional<uint64_t> peek_request_id(std::string_view payload) {
    ByteReader r(payload);
    auto magic = r.raw(4);
    if (magic != kRequestMagic && magic != kResponseMagic) return std::nullopt;
    if (r.u8() != kWireVersion) return std::nullopt;
    uint64_t id = r.u64();
    if (!r.ok()) return std::nullopt;
    return id;
}

uint64_t submit(Engine& engine, const std::string& request_queue, const std::string& reply_to,
                std::string body, int64_t priority) {
    require_active(engine, request_queue);
    require_active(engine, reply_to);
    Request req;
    req.request_id = fresh_request_id();
    req.reply_to = reply_to;
    req.body = std::move(body);
    auto txn = engine.begin("submit");
    try {
        engine.enqueue(*txn, request_queue, priority, encode_request(req));
    } catch (...) {
        abort_quietly(engine, *txn);
        throw;
    }
    engine.commit(*txn);
    return req.request_id;
}

ProcessedOutcome::Kind serve_message(Engine& engine, Transaction& txn, const Message& m,
                                     const RequestHandler& handler, const ServeHooks& hooks) {
    auto req = decode_request(m.payload);
    if (!req) {
        auto queue = engine.list_queues();
        auto it = std::find_if(queue.begin(), queue.end(), [&](const auto& d) { return d.queue_id == m.queue_id; });
        std::string dlq = (it == queue.end() ? std::string("unknown") : it->name) + ".DLQ";
        if (!engine.find_queue(dlq)) {
            try {
                engine.create_queue(dlq, Durability::kDurable, Ordering::kFifo);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::kAlreadyExists) throw;
            }
        }
        engine.enqueue(txn, dlq, m.priority, m.payload);
        return ProcessedOutcome::Kind::kHandlerError;
    }

    Response rsp;
    rsp.request_id = req->request_id;
    try {
        rsp.body = handler(req->body);
    } catch (const pool::WorkerCrash&) {
        throw;
    } catch (const std::exception& ex) {
        rsp.status = ResponseStatus::kHandlerError;
        rsp.body = ex.what();
    }
    engine.enqueue(txn, req->reply_to, 0, encode_response(rsp));
    if (hooks.before_commit) hooks.before_commit(req->request_id);
    return rsp.status == ResponseStatus::kOk ? ProcessedOutcome::Kind::kServed
                                             : ProcessedOutcome::Kind::kHandlerError;
}

ProcessedOutcome serve_one(Engine& engine, const std::string& request_queue, const RequestHandler& handler,
                           WaitSpec wait, const ServeHooks& hooks) {
    auto txn = engine.begin("serve");
    ProcessedOutcome out;
    try {
        auto m = engine.dequeue(*txn, request_queue, IsolationMode::kReadPastDequeue, wait);
        if (!m) {
            engine.abort(*txn);
            return out;
        }
        out.request_id = peek_request_id(m->payload).value_or(0);
        out.kind = serve_message(engine, *txn, *m, handler, hooks);
        engine.commit(*txn);
    } catch (const pool::WorkerCrash&) {
        abort_quietly(engine, *txn);
        out.kind = ProcessedOutcome::Kind::kAborted;
    } catch (...) {
        abort_quietly(engine, *txn);
        throw;
    }
    return out;
}

pool::WorkerHandler make_pool_handler(RequestHandler handler, ServeHooks hooks) {
    return [handler = std::move(handler), hooks = std::move(hooks)](Engine& engine, Transaction& txn,
                                                                    const Message& m) {
        serve_message(engine, txn, m, handler, hooks);
        return true;
    };
}

RequestStatus status(Engine& engine, uint64_t request_id, const std::string& request_queue,
                     const std::string& reply_to) {
    // Request queue first: a serve commit removes the request and publishes the
    // response atomically, so looking at the response second never skips DONE.
    std::optional<RequestStatus> seen;
    if (engine.find_queue(request_queue)) {
        PollOptions opts;
        opts.include_dirty = true;
        opts.include_payload = true;
        for (const auto& e : engine.poll(request_queue, PollFilter::all(), opts)) {
            if (!e.payload || e.visibility == Visibility::kUncommittedInsert) continue;
            auto req = decode_request(*e.payload);
            if (!req || req->request_id != request_id) continue;
            seen = e.visibility == Visibility::kUncommittedDelete ? RequestStatus::kInProcess : RequestStatus::kQueued;
            break;
        }
    }
    if (engine.find_queue(reply_to)) {
        PollOptions opts;
        opts.include_payload = true;
        for (const auto& e : engine.poll(reply_to, PollFilter::all(), opts)) {
            if (e.payload && peek_request_id(*e.payload) == request_id) return RequestStatus::kDone;
        }
    }
    return seen.value_or(RequestStatus::kUnknown);
}

std::optional<Response> await_response(Engine& engine, uint64_t request_id, const std::string& reply_to,
                                       std::chrono::milliseconds timeout) {
    constexpr auto kSlice = std::chrono::milliseconds(20);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto sub = engine.subscribe("await", reply_to);
    PollOptions opts;
    opts.include_payload = true;
    while (true) {
        uint64_t seen = sub->sequence();
        std::optional<MessageId> match;
        for (const auto& e : engine.poll(reply_to, PollFilter::all(), opts)) {
            if (e.payload && peek_request_id(*e.payload) == request_id) {
                match = e.message_id;
                break;
            }
        }
        if (match) {
            auto txn = engine.begin("await");
            try {
                auto m = engine.dequeue_by_id(*txn, reply_to, *match);
                auto rsp = m ? decode_response(m->payload) : std::nullopt;
                if (rsp) {
                    engine.commit(*txn);
                    return rsp;
                }
                engine.abort(*txn);
            } catch (...) {
                abort_quietly(engine, *txn);
                throw;
            }
        }
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) return std::nullopt;
        auto wait = std::min<std::chrono::steady_clock::duration>(deadline - now, kSlice);
        sub->wait_beyond(seen, std::chrono::duration_cast<Duration>(wait));
    }
}

}  // namespace qdb::workflow
