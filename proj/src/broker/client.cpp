#include "qdb/broker/client.hpp"

#include "qdb/broker/server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace qdb::broker {

Client::Client(const std::string& address) {
    Endpoint ep = parse_endpoint(address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res) {
        throw Error(ErrorCode::kUnavailable, "cannot resolve " + ep.host);
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
    int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) {
        if (fd_ >= 0) ::close(fd_);
        throw Error(ErrorCode::kUnavailable, "cannot connect to " + address);
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
    if (fd_ >= 0) ::close(fd_);
}

std::string Client::call(const std::string& body) {
    if (session_) return session_->handle(body);
    if (!write_all(fd_, frame(body))) throw Error(ErrorCode::kUnavailable, "connection to broker lost");
    auto reply = read_frame(fd_);
    if (!reply) throw Error(ErrorCode::kUnavailable, "connection to broker lost");
    return *reply;
}

ByteReader Client::expect(const std::string& reply, Opcode op) {
    last_reply_ = reply;
    ByteReader in(last_reply_);
    uint8_t got = in.u8();
    if (got == static_cast<uint8_t>(Opcode::kError)) {
        uint16_t code = in.u16();
        std::string msg = in.str16();
        throw Error(error_from_wire(code), msg);
    }
    if (!in.ok() || got != static_cast<uint8_t>(op)) throw Error(ErrorCode::kInternal, "unexpected reply opcode");
    return in;
}

namespace {

std::string request(Opcode op) { return std::string(1, static_cast<char>(op)); }

void done(const ByteReader& in) {
    if (!in.ok() || !in.at_end()) throw Error(ErrorCode::kInternal, "malformed reply");
}

}  // namespace

uint64_t Client::begin() {
    auto in = expect(call(request(Opcode::kBegin)), Opcode::kBegin);
    uint64_t id = in.u64();
    done(in);
    return id;
}

void Client::commit(uint64_t txn) {
    std::string body = request(Opcode::kCommit);
    ByteWriter(body).u64(txn);
    done(expect(call(body), Opcode::kCommit));
}

void Client::abort(uint64_t txn) {
    std::string body = request(Opcode::kAbort);
    ByteWriter(body).u64(txn);
    done(expect(call(body), Opcode::kAbort));
}

MessageId Client::enqueue(uint64_t txn, const std::string& queue, int64_t priority, const std::string& payload) {
    std::string body = request(Opcode::kEnqueue);
    ByteWriter w(body);
    w.u64(txn);
    w.str16(queue);
    w.i64(priority);
    w.str32(payload);
    auto in = expect(call(body), Opcode::kEnqueue);
    MessageId id = in.u64();
    done(in);
    return id;
}

std::optional<Message> Client::dequeue(uint64_t txn, const std::string& queue, IsolationMode isolation,
                                       std::chrono::milliseconds wait) {
    std::string body = request(Opcode::kDequeue);
    ByteWriter w(body);
    w.u64(txn);
    w.str16(queue);
    w.u8(static_cast<uint8_t>(isolation));
    w.u32(static_cast<uint32_t>(wait.count()));
    auto in = expect(call(body), Opcode::kDequeue);
    std::optional<Message> out;
    if (in.u8() != 0) {
        Message m;
        m.message_id = in.u64();
        m.priority = in.i64();
        m.enqueue_seq = in.u64();
        m.redeliveries = in.u32();
        m.payload = in.str32();
        out = std::move(m);
    }
    done(in);
    return out;
}

std::vector<PollEntry> Client::poll(const std::string& queue, bool include_dirty, bool include_payload,
                                    MessageId by_id) {
    std::string body = request(Opcode::kPoll);
    ByteWriter w(body);
    w.str16(queue);
    w.u8(include_dirty ? 1 : 0);
    w.u8(include_payload ? 1 : 0);
    w.u64(by_id);
    auto in = expect(call(body), Opcode::kPoll);
    std::vector<PollEntry> out(in.u32());
    for (auto& e : out) {
        e.message_id = in.u64();
        e.priority = in.i64();
        e.visibility = static_cast<Visibility>(in.u8());
        e.writer_txn = in.u64();
        e.enqueue_seq = in.u64();
        if (in.u8() != 0) e.payload = in.str32();
        if (!in.ok()) break;
    }
    done(in);
    return out;
}

nlohmann::json Client::stats(const std::string& queue) {
    std::string body = request(Opcode::kStats);
    ByteWriter(body).str16(queue);
    auto in = expect(call(body), Opcode::kStats);
    std::string text = in.str32();
    done(in);
    return nlohmann::json::parse(text);
}

QueueId Client::create_queue(const std::string& name, Durability d, Ordering o) {
    std::string body = request(Opcode::kCreateQueue);
    ByteWriter w(body);
    w.str16(name);
    w.u8(static_cast<uint8_t>(d));
    w.u8(static_cast<uint8_t>(o));
    auto in = expect(call(body), Opcode::kCreateQueue);
    QueueId id = in.u64();
    done(in);
    return id;
}

void Client::destroy_queue(uint64_t txn, const std::string& name) {
    std::string body = request(Opcode::kDestroyQueue);
    ByteWriter w(body);
    w.u64(txn);
    w.str16(name);
    done(expect(call(body), Opcode::kDestroyQueue));
}

std::vector<QueueDescriptor> Client::list_queues() {
    auto in = expect(call(request(Opcode::kList)), Opcode::kList);
    std::vector<QueueDescriptor> out(in.u32());
    for (auto& d : out) {
        d.queue_id = in.u64();
        d.name = in.str16();
        d.durability = static_cast<Durability>(in.u8());
        d.ordering = static_cast<Ordering>(in.u8());
        d.state = static_cast<QueueState>(in.u8());
        if (!in.ok()) break;
    }
    done(in);
    return out;
}

nlohmann::json Client::pool_control(const std::string& queue, uint8_t action, const std::string& settings) {
    std::string body = request(Opcode::kPoolControl);
    ByteWriter w(body);
    w.str16(queue);
    w.u8(action);
    w.str32(settings);
    auto in = expect(call(body), Opcode::kPoolControl);
    std::string text = in.str32();
    done(in);
    return nlohmann::json::parse(text);
}

nlohmann::json Client::pool_status(const std::string& queue) {
    std::string body = request(Opcode::kPoolStatus);
    ByteWriter(body).str16(queue);
    auto in = expect(call(body), Opcode::kPoolStatus);
    std::string text = in.str32();
    done(in);
    return nlohmann::json::parse(text);
}

Lsn Client::checkpoint() {
    auto in = expect(call(request(Opcode::kCheckpoint)), Opcode::kCheckpoint);
    Lsn lsn = in.u64();
    done(in);
    return lsn;
}

}  // namespace qdb::broker
