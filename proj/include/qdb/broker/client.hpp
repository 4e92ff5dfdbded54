#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdb/broker/protocol.hpp"
#include "qdb/engine.hpp"

namespace qdb::broker {

class Session;

// Blocking client for the broker protocol. ERROR replies are rethrown as
// Error with the code mapped back from the wire. The in-process form feeds
// request bodies straight to a Session, skipping the socket.
class Client {
 public:
    explicit Client(const std::string& address);
    explicit Client(Session& session) : session_(&session) {}
    ~Client();

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    uint64_t begin();
    void commit(uint64_t txn);
    void abort(uint64_t txn);
    MessageId enqueue(uint64_t txn, const std::string& queue, int64_t priority, const std::string& payload);
    std::optional<Message> dequeue(uint64_t txn, const std::string& queue, IsolationMode isolation,
                                   std::chrono::milliseconds wait = std::chrono::milliseconds(0));
    std::vector<PollEntry> poll(const std::string& queue, bool include_dirty, bool include_payload = false,
                                MessageId by_id = 0);
    nlohmann::json stats(const std::string& queue = {});
    QueueId create_queue(const std::string& name, Durability d, Ordering o);
    void destroy_queue(uint64_t txn, const std::string& name);
    std::vector<QueueDescriptor> list_queues();
    nlohmann::json pool_control(const std::string& queue, uint8_t action, const std::string& settings = {});
    nlohmann::json pool_status(const std::string& queue = {});
    Lsn checkpoint();

    // Sends a raw request body and returns the raw reply body.
    std::string call(const std::string& body);

 private:
    ByteReader expect(const std::string& reply, Opcode op);

    int fd_ = -1;
    Session* session_ = nullptr;
    std::string last_reply_;
};

}  // namespace qdb::broker
