#include "qdb/broker/protocol.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>

namespace qdb::broker {

std::string error_body(uint16_t code, std::string_view message) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(Opcode::kError));
    w.u16(code);
    w.str16(message.substr(0, 0xffff));
    return w.take();
}

std::string frame(std::string_view body) {
    ByteWriter w;
    w.u32(static_cast<uint32_t>(body.size()));
    w.raw(body);
    return w.take();
}

ErrorCode error_from_wire(uint16_t code) {
    switch (code) {
        case 1: return ErrorCode::kNotFound;
        case 2: return ErrorCode::kAlreadyExists;
        case 3: return ErrorCode::kUnavailable;
        case 4: return ErrorCode::kTimeout;
        case 5: return ErrorCode::kUsage;
        default: return ErrorCode::kInternal;
    }
}

bool write_all(int fd, std::string_view bytes) {
    while (!bytes.empty()) {
        ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

namespace {

bool read_exact(int fd, char* buf, std::size_t n) {
    while (n > 0) {
        ssize_t r = ::recv(fd, buf, n, 0);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) return false;
        buf += r;
        n -= static_cast<std::size_t>(r);
    }
    return true;
}

}  // namespace

std::optional<std::string> read_frame(int fd, uint32_t max_body) {
    char hdr[4];
    if (!read_exact(fd, hdr, 4)) return std::nullopt;
    ByteReader r(std::string_view(hdr, 4));
    uint32_t len = r.u32();
    if (len > max_body) {
        throw Error(ErrorCode::kUsage, "frame of " + std::to_string(len) + " bytes exceeds limit");
    }
    std::string body(len, '\0');
    if (len > 0 && !read_exact(fd, body.data(), len)) return std::nullopt;
    return body;
}

Endpoint parse_endpoint(const std::string& s) {
    Endpoint ep;
    std::string_view port = s;
    if (auto colon = s.rfind(':'); colon != std::string::npos) {
        if (colon > 0) ep.host = s.substr(0, colon);
        port = std::string_view(s).substr(colon + 1);
    }
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (ec != std::errc() || ptr != port.data() + port.size() || value > 65535) {
        throw Error(ErrorCode::kUsage, "bad address '" + s + "', expected host:port");
    }
    ep.port = static_cast<uint16_t>(value);
    return ep;
}

}  // namespace qdb::broker
