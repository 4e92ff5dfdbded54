#include "qdb/broker/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "qdb/broker/config.hpp"
#include "qdb/broker/report.hpp"
#include "qdb/pool/pool.hpp"

namespace qdb::broker {

namespace {

void need(const ByteReader& in) {
    if (!in.ok() || !in.at_end()) throw Error(ErrorCode::kUsage, "malformed request body");
}

}  // namespace

Session::Session(Engine& engine, std::string name, SessionLimits limits)
    : engine_(engine), name_(std::move(name)), limits_(limits) {}

Session::~Session() { close(); }

void Session::close() {
    for (auto& [id, txn] : txns_) {
        if (txn->state() != TxnState::kActive) continue;
        try {
            engine_.abort(*txn);
        } catch (...) {
        }
    }
    txns_.clear();
}

TxnPtr Session::owned(uint64_t id) {
    auto it = txns_.find(id);
    if (it == txns_.end()) {
        throw Error(ErrorCode::kUsage, "transaction " + std::to_string(id) + " is not open on this connection");
    }
    return it->second;
}

std::string Session::handle(std::string_view body) {
    if (body.empty()) return error_body(wire_code(ErrorCode::kUsage), "empty frame");
    auto op = static_cast<Opcode>(static_cast<uint8_t>(body[0]));
    ByteReader in(body.substr(1));
    try {
        return dispatch(op, in);
    } catch (const Error& e) {
        return error_body(wire_code(e.code()), e.what());
    } catch (const std::exception& e) {
        return error_body(wire_code(ErrorCode::kInternal), e.what());
    }
}

std::string Session::dispatch(Opcode op, ByteReader& in) {
    ByteWriter out;
    out.u8(static_cast<uint8_t>(op));
    // Runs `fn` in the named transaction, or in a fresh one committed on success.
    auto with_txn = [&](uint64_t id, auto&& fn) {
        if (id != 0) return fn(*owned(id));
        auto txn = engine_.begin(name_);
        try {
            auto r = fn(*txn);
            engine_.commit(*txn);
            return r;
        } catch (...) {
            if (txn->state() == TxnState::kActive) engine_.abort(*txn);
            throw;
        }
    };

    switch (op) {
        case Opcode::kBegin: {
            need(in);
            // Forget finished transactions (e.g. aborted by a trigger failure).
            for (auto it = txns_.begin(); it != txns_.end();) {
                it = it->second->state() == TxnState::kActive ? std::next(it) : txns_.erase(it);
            }
            if (txns_.size() >= limits_.max_open_txns) {
                throw Error(ErrorCode::kUsage, "too many open transactions on this connection");
            }
            auto txn = engine_.begin(name_);
            txns_[txn->id()] = txn;
            out.u64(txn->id());
            return out.take();
        }
        case Opcode::kCommit:
        case Opcode::kAbort: {
            uint64_t id = in.u64();
            need(in);
            auto txn = owned(id);
            txns_.erase(id);
            if (op == Opcode::kCommit) {
                engine_.commit(*txn);
            } else {
                engine_.abort(*txn);
            }
            return out.take();
        }
        case Opcode::kEnqueue: {
            uint64_t id = in.u64();
            std::string queue = in.str16();
            int64_t priority = in.i64();
            std::string payload = in.str32();
            need(in);
            MessageId mid = with_txn(id, [&](Transaction& t) {
                return engine_.enqueue(t, queue, priority, std::move(payload));
            });
            out.u64(mid);
            return out.take();
        }
        case Opcode::kDequeue: {
            uint64_t id = in.u64();
            std::string queue = in.str16();
            uint8_t iso = in.u8();
            uint32_t wait_ms = in.u32();
            need(in);
            if (iso > 1) throw Error(ErrorCode::kUsage, "isolation must be 0 or 1");
            auto wait = std::min<std::chrono::milliseconds>(std::chrono::milliseconds(wait_ms), limits_.max_wait);
            auto m = with_txn(id, [&](Transaction& t) {
                return engine_.dequeue(t, queue, static_cast<IsolationMode>(iso), WaitSpec::wait(wait));
            });
            out.u8(m ? 1 : 0);
            if (m) {
                out.u64(m->message_id);
                out.i64(m->priority);
                out.u64(m->enqueue_seq);
                out.u32(m->redeliveries);
                out.str32(m->payload);
            }
            return out.take();
        }
        case Opcode::kPoll: {
            std::string queue = in.str16();
            uint8_t dirty = in.u8();
            PollOptions opts;
            opts.include_dirty = dirty != 0;
            PollFilter filter;
            if (in.ok() && !in.at_end()) {
                opts.include_payload = in.u8() != 0;
                uint64_t mid = in.u64();
                if (mid != 0) filter = PollFilter::by_id(mid);
            }
            need(in);
            auto entries = engine_.poll(queue, filter, opts);
            out.u32(static_cast<uint32_t>(entries.size()));
            for (const auto& e : entries) {
                out.u64(e.message_id);
                out.i64(e.priority);
                out.u8(static_cast<uint8_t>(e.visibility));
                out.u64(e.writer_txn);
                out.u64(e.enqueue_seq);
                out.u8(e.payload ? 1 : 0);
                if (e.payload) out.str32(*e.payload);
            }
            return out.take();
        }
        case Opcode::kStats: {
            std::string queue = in.str16();
            need(in);
            auto report = stats_json(engine_, queue.empty() ? std::nullopt : std::optional(queue));
            out.str32(report.dump());
            return out.take();
        }
        case Opcode::kCreateQueue: {
            std::string name = in.str16();
            uint8_t d = in.u8();
            uint8_t o = in.u8();
            need(in);
            if (d > 1 || o > 1) throw Error(ErrorCode::kUsage, "bad durability or ordering");
            auto desc = engine_.create_queue(name, static_cast<Durability>(d), static_cast<Ordering>(o));
            out.u64(desc.queue_id);
            return out.take();
        }
        case Opcode::kDestroyQueue: {
            uint64_t id = in.u64();
            std::string name = in.str16();
            need(in);
            with_txn(id, [&](Transaction& t) {
                engine_.destroy_queue(t, name);
                return 0;
            });
            return out.take();
        }
        case Opcode::kList: {
            need(in);
            auto qs = engine_.list_queues();
            out.u32(static_cast<uint32_t>(qs.size()));
            for (const auto& d : qs) {
                out.u64(d.queue_id);
                out.str16(d.name);
                out.u8(static_cast<uint8_t>(d.durability));
                out.u8(static_cast<uint8_t>(d.ordering));
                out.u8(static_cast<uint8_t>(d.state));
            }
            return out.take();
        }
        case Opcode::kPoolControl: {
            std::string queue = in.str16();
            uint8_t action = in.u8();
            std::string settings = in.str32();
            need(in);
            auto& pools = engine_.pools();
            pool::PoolStatus st;
            switch (static_cast<PoolAction>(action)) {
                case PoolAction::kAttach:
                    pools.attach(pool_config(queue, parse_settings(settings)));
                    st = pools.status(queue);
                    break;
                case PoolAction::kStart: st = pools.start(queue); break;
                case PoolAction::kStop: st = pools.stop(queue); break;
                case PoolAction::kRedefine: {
                    auto s = parse_settings(settings);
                    auto cfg = pool_config(queue, s);
                    if (!s.count("handler")) {
                        cfg.handler = nullptr;
                        cfg.handler_name.clear();
                    }
                    st = pools.redefine(queue, std::move(cfg));
                    break;
                }
                default: throw Error(ErrorCode::kUsage, "unknown pool action");
            }
            out.str32(pool_json(st, engine_.clock().now()).dump());
            return out.take();
        }
        case Opcode::kPoolStatus: {
            std::string queue = in.str16();
            need(in);
            nlohmann::json j;
            if (queue.empty()) {
                j = nlohmann::json::array();
                for (const auto& s : engine_.pools().list()) j.push_back(pool_json(s, engine_.clock().now()));
            } else {
                j = pool_json(engine_.pools().status(queue), engine_.clock().now());
            }
            out.str32(j.dump());
            return out.take();
        }
        case Opcode::kCheckpoint: {
            need(in);
            out.u64(engine_.checkpoint().lsn);
            return out.take();
        }
        case Opcode::kError:
            break;
    }
    throw Error(ErrorCode::kUsage, "unknown opcode 0x" + to_hex(std::string(1, static_cast<char>(op))));
}

Broker::Broker(Engine& engine, const std::string& listen, SessionLimits limits)
    : engine_(engine), limits_(limits) {
    Endpoint ep = parse_endpoint(listen);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::kUnavailable, "socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host == "localhost" ? "127.0.0.1" : ep.host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw Error(ErrorCode::kUsage, "bad listen host '" + ep.host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
        ::close(listen_fd_);
        throw Error(ErrorCode::kUnavailable, "cannot listen on " + listen);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

Broker::~Broker() { stop(); }

void Broker::accept_loop() {
    uint64_t next_id = 1;
    while (!stopping_) {
        int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (stopping_) break;
            if (errno == EINTR || errno == ECONNABORTED) continue;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
            continue;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lk(mu_);
        if (stopping_) {
            ::close(fd);
            break;
        }
        conns_.insert(fd);
        uint64_t id = next_id++;
        workers_.emplace_back([this, fd, id] { serve(fd, id); });
    }
}

void Broker::serve(int fd, uint64_t id) {
    Session session(engine_, "conn-" + std::to_string(id), limits_);
    while (!stopping_) {
        std::optional<std::string> body;
        try {
            body = read_frame(fd);
        } catch (const Error& e) {
            // Oversized length prefix: the stream cannot be resynchronised.
            write_all(fd, frame(error_body(wire_code(e.code()), e.what())));
            break;
        }
        if (!body) break;
        if (!write_all(fd, frame(session.handle(*body)))) break;
    }
    session.close();
    {
        std::lock_guard lk(mu_);
        conns_.erase(fd);
    }
    ::close(fd);
    ++served_;
}

void Broker::stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lk(mu_);
        for (int fd : conns_) ::shutdown(fd, SHUT_RDWR);
        workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
}

}  // namespace qdb::broker
