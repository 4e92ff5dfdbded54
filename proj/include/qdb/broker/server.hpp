#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "qdb/broker/protocol.hpp"
#include "qdb/engine.hpp"

namespace qdb::broker {

struct SessionLimits {
    std::size_t max_open_txns = 64;
    std::chrono::milliseconds max_wait{30000};
};

// Per-connection state: the transactions this connection owns.
class Session {
 public:
    Session(Engine& engine, std::string name, SessionLimits limits = {});
    ~Session();

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    // Executes one request body and returns the reply body. Never throws for
    // bad input: malformed or unknown requests get an ERROR reply.
    std::string handle(std::string_view body);

    // Aborts every transaction still open on this session.
    void close();
    std::size_t open_txns() const { return txns_.size(); }

 private:
    std::string dispatch(Opcode op, ByteReader& in);
    TxnPtr owned(uint64_t id);

    Engine& engine_;
    std::string name_;
    SessionLimits limits_;
    std::map<uint64_t, TxnPtr> txns_;
};

// TCP front end: one thread per connection, each with its own Session.
class Broker {
 public:
    Broker(Engine& engine, const std::string& listen, SessionLimits limits = {});
    ~Broker();

    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    uint16_t port() const { return port_; }
    // Stops accepting, closes every connection (aborting its transactions) and joins.
    void stop();
    std::size_t connections_served() const { return served_; }

 private:
    void accept_loop();
    void serve(int fd, uint64_t id);

    Engine& engine_;
    SessionLimits limits_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex mu_;
    std::set<int> conns_;
    std::vector<std::thread> workers_;
    std::atomic<std::size_t> served_{0};
};

}  // namespace qdb::broker
