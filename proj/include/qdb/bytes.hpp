#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace qdb {

// Little-endian encoder over a growable std::string buffer.
class ByteWriter {
 public:
    ByteWriter() = default;
    explicit ByteWriter(std::string& out) : out_(&out) {}

    void u8(uint8_t v) { buf().push_back(static_cast<char>(v)); }
    void u16(uint16_t v) { put_le(v); }
    void u32(uint32_t v) { put_le(v); }
    void u64(uint64_t v) { put_le(v); }
    void i64(int64_t v) { put_le(static_cast<uint64_t>(v)); }
    void raw(std::string_view s) { buf().append(s); }
    void str16(std::string_view s) {
        u16(static_cast<uint16_t>(s.size()));
        raw(s);
    }
    void str32(std::string_view s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s);
    }

    // Overwrites a u32 previously written at `pos`.
    void patch_u32(std::size_t pos, uint32_t v) {
        for (int i = 0; i < 4; ++i) buf()[pos + i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }

    std::size_t size() const { return out_ ? out_->size() : own_.size(); }
    std::string& buf() { return out_ ? *out_ : own_; }
    std::string take() { return std::move(buf()); }

 private:
    template <typename T>
    void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf().push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }

    std::string own_;
    std::string* out_ = nullptr;
};

// Little-endian decoder. Every read reports failure through ok() instead of
// throwing so callers can decide whether a short buffer is a torn tail or an error.
class ByteReader {
 public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    uint8_t u8() { return get_le<uint8_t>(); }
    uint16_t u16() { return get_le<uint16_t>(); }
    uint32_t u32() { return get_le<uint32_t>(); }
    uint64_t u64() { return get_le<uint64_t>(); }
    int64_t i64() { return static_cast<int64_t>(get_le<uint64_t>()); }

    std::string_view raw(std::size_t n) {
        if (!ok_ || remaining() < n) {
            ok_ = false;
            return {};
        }
        std::string_view s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str16() { return std::string(raw(u16())); }
    std::string str32() { return std::string(raw(u32())); }

    bool ok() const { return ok_; }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

 private:
    template <typename T>
    T get_le() {
        if (!ok_ || remaining() < sizeof(T)) {
            ok_ = false;
            return T{};
        }
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<T>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    bool ok_ = true;
};

std::string to_hex(std::string_view bytes);
std::optional<std::string> from_hex(std::string_view hex);

}  // namespace qdb
