#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "qdb/pool/pool.hpp"
#include "qdb/types.hpp"

namespace qdb {
class Engine;
}

namespace qdb::workflow {

/*
 * Payload layout (little-endian):
 *   QREQ: "QREQ" | u8 version=1 | u64 request_id | u16 len + reply_to | u32 len + body
 *   QRSP: "QRSP" | u8 version=1 | u64 request_id | u8 status          | u32 len + body
 */
inline constexpr uint8_t kWireVersion = 1;

enum class ResponseStatus : uint8_t { kOk = 0, kHandlerError = 1 };
enum class RequestStatus : uint8_t { kQueued, kInProcess, kDone, kUnknown };

const char* to_string(ResponseStatus s);
const char* to_string(RequestStatus s);

struct Request {
    uint64_t request_id = 0;
    std::string reply_to;
    std::string body;
    uint64_t submitted_seq = 0;  // filled in when read back from a queue

    bool operator==(const Request&) const = default;
};

struct Response {
    uint64_t request_id = 0;
    ResponseStatus status = ResponseStatus::kOk;
    std::string body;

    bool operator==(const Response&) const = default;
};

std::string encode_request(const Request& r);
std::optional<Request> decode_request(std::string_view payload);
std::string encode_response(const Response& r);
std::optional<Response> decode_response(std::string_view payload);
// Reads only the request id of either kind of payload.
std::optional<uint64_t> peek_request_id(std::string_view payload);

// Maps a request body to a response body. Throwing pool::WorkerCrash
// simulates a server crash (the transaction aborts); any other exception is
// a business failure answered with HANDLER_ERROR.
using RequestHandler = std::function<std::string(const std::string& body)>;

struct ServeHooks {
    // Runs after the response is enqueued, before commit; may throw WorkerCrash.
    std::function<void(uint64_t request_id)> before_commit;
};

struct ProcessedOutcome {
    enum class Kind : uint8_t { kEmpty, kServed, kHandlerError, kAborted };
    Kind kind = Kind::kEmpty;
    uint64_t request_id = 0;
};

// Unit 1: one transaction that enqueues the encoded request. Returns after commit.
uint64_t submit(Engine& engine, const std::string& request_queue, const std::string& reply_to,
                std::string body, int64_t priority = 0);

// Unit 2 inside an already open dequeue transaction (the pool worker's).
// Enqueues the response; the caller commits. Undecodable requests move to
// <queue>.DLQ in the same transaction.
ProcessedOutcome::Kind serve_message(Engine& engine, Transaction& txn, const Message& m,
                                     const RequestHandler& handler, const ServeHooks& hooks = {});

// Unit 2 as a whole: dequeue (READ_PAST), handle, respond, commit.
ProcessedOutcome serve_one(Engine& engine, const std::string& request_queue, const RequestHandler& handler,
                           WaitSpec wait = WaitSpec::no_wait(), const ServeHooks& hooks = {});

// Worker body for a pool attached to a request queue.
pool::WorkerHandler make_pool_handler(RequestHandler handler, ServeHooks hooks = {});

RequestStatus status(Engine& engine, uint64_t request_id, const std::string& request_queue,
                     const std::string& reply_to);

// Unit 3: dequeues the response for `request_id` from `reply_to` in one
// transaction. Other responses are left in place. nullopt on timeout.
std::optional<Response> await_response(Engine& engine, uint64_t request_id, const std::string& reply_to,
                                       std::chrono::milliseconds timeout);

}  // namespace qdb::workflow
