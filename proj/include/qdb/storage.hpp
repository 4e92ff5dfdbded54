#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>

namespace qdb {

// Append-only file handle used by the log and checkpoint writers.
class AppendFile {
 public:
    virtual ~AppendFile() = default;
    virtual void append(std::span<const std::byte> data) = 0;
    virtual void sync() = 0;
    virtual void truncate(uint64_t size) = 0;
    virtual uint64_t size() const = 0;
};

// The engine's only route to the file system. Every mutating call may throw
// IoError; the engine treats that as fatal and stops accepting work.
class Storage {
 public:
    virtual ~Storage() = default;

    // Opens for appending; creates the file when `truncate` is set or it is missing.
    virtual std::unique_ptr<AppendFile> open_append(const std::filesystem::path& path,
                                                    bool truncate) = 0;
    virtual std::optional<std::string> read_all(const std::filesystem::path& path) = 0;
    virtual void rename(const std::filesystem::path& from, const std::filesystem::path& to) = 0;
    virtual void remove(const std::filesystem::path& path) = 0;
    virtual void sync_dir(const std::filesystem::path& dir) = 0;
};

class PosixStorage final : public Storage {
 public:
    explicit PosixStorage(bool sync_enabled = true) : sync_enabled_(sync_enabled) {}

    std::unique_ptr<AppendFile> open_append(const std::filesystem::path& path,
                                            bool truncate) override;
    std::optional<std::string> read_all(const std::filesystem::path& path) override;
    void rename(const std::filesystem::path& from, const std::filesystem::path& to) override;
    void remove(const std::filesystem::path& path) override;
    void sync_dir(const std::filesystem::path& dir) override;

 private:
    bool sync_enabled_;
};

// Wraps another Storage and simulates a process crash: once the byte budget or
// the operation budget is exhausted, the write in progress is cut short and
// every later mutating call fails. Bytes that reached the inner storage before
// the crash stay there, as they would after kill -9.
class FaultInjectingStorage final : public Storage {
 public:
    struct Budget {
        std::optional<uint64_t> bytes;
        std::optional<uint64_t> operations;
    };

    FaultInjectingStorage(std::shared_ptr<Storage> inner, Budget budget);

    std::unique_ptr<AppendFile> open_append(const std::filesystem::path& path,
                                            bool truncate) override;
    std::optional<std::string> read_all(const std::filesystem::path& path) override;
    void rename(const std::filesystem::path& from, const std::filesystem::path& to) override;
    void remove(const std::filesystem::path& path) override;
    void sync_dir(const std::filesystem::path& dir) override;

    bool crashed() const;
    uint64_t bytes_written() const;
    uint64_t operations() const;

 private:
    class File;

    // Charges one mutating operation; throws once the process is "dead".
    void charge_operation();
    // Returns how many of `n` bytes may still be written.
    std::size_t charge_bytes(std::size_t n);

    std::shared_ptr<Storage> inner_;
    mutable std::mutex mu_;
    Budget budget_;
    uint64_t bytes_written_ = 0;
    uint64_t operations_ = 0;
    bool crashed_ = false;
};

}  // namespace qdb
