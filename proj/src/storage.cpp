#include "qdb/storage.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qdb/error.hpp"

namespace qdb {

namespace {

std::string errno_message(const std::string& op, const std::filesystem::path& path) {
    return op + " " + path.string() + ": " + std::strerror(errno);
}

class PosixFile final : public AppendFile {
 public:
    PosixFile(int fd, std::filesystem::path path, bool sync_enabled)
        : fd_(fd), path_(std::move(path)), sync_enabled_(sync_enabled) {
        struct stat st {};
        if (::fstat(fd_, &st) == 0) size_ = static_cast<uint64_t>(st.st_size);
    }
    ~PosixFile() override { ::close(fd_); }

    void append(std::span<const std::byte> data) override {
        const auto* p = reinterpret_cast<const char*>(data.data());
        std::size_t left = data.size();
        while (left > 0) {
            ssize_t n = ::write(fd_, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError(errno_message("write", path_));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
            size_ += static_cast<uint64_t>(n);
        }
    }

    void sync() override {
        if (!sync_enabled_) return;
        if (::fdatasync(fd_) != 0) throw IoError(errno_message("fdatasync", path_));
    }

    void truncate(uint64_t size) override {
        if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
            throw IoError(errno_message("ftruncate", path_));
        }
        size_ = size;
        sync();
    }

    uint64_t size() const override { return size_; }

 private:
    int fd_;
    std::filesystem::path path_;
    bool sync_enabled_;
    uint64_t size_ = 0;
};

}  // namespace

std::unique_ptr<AppendFile> PosixStorage::open_append(const std::filesystem::path& path,
                                                      bool truncate) {
    int flags = O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC;
    if (truncate) flags |= O_TRUNC;
    int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0) throw IoError(errno_message("open", path));
    return std::make_unique<PosixFile>(fd, path, sync_enabled_);
}

std::optional<std::string> PosixStorage::read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void PosixStorage::rename(const std::filesystem::path& from, const std::filesystem::path& to) {
    if (::rename(from.c_str(), to.c_str()) != 0) throw IoError(errno_message("rename", from));
}

void PosixStorage::remove(const std::filesystem::path& path) {
    if (::unlink(path.c_str()) != 0 && errno != ENOENT) throw IoError(errno_message("unlink", path));
}

void PosixStorage::sync_dir(const std::filesystem::path& dir) {
    if (!sync_enabled_) return;
    int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0) throw IoError(errno_message("open dir", dir));
    int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) throw IoError(errno_message("fsync dir", dir));
}

// ---------------------------------------------------------------------------

class FaultInjectingStorage::File final : public AppendFile {
 public:
    File(FaultInjectingStorage& owner, std::unique_ptr<AppendFile> inner)
        : owner_(owner), inner_(std::move(inner)) {}

    void append(std::span<const std::byte> data) override {
        owner_.charge_operation();
        std::size_t allowed = owner_.charge_bytes(data.size());
        if (allowed > 0) inner_->append(data.first(allowed));
        if (allowed < data.size()) throw IoError("injected crash during write");
    }
    void sync() override {
        owner_.charge_operation();
        inner_->sync();
    }
    void truncate(uint64_t size) override {
        owner_.charge_operation();
        inner_->truncate(size);
    }
    uint64_t size() const override { return inner_->size(); }

 private:
    FaultInjectingStorage& owner_;
    std::unique_ptr<AppendFile> inner_;
};

FaultInjectingStorage::FaultInjectingStorage(std::shared_ptr<Storage> inner, Budget budget)
    : inner_(std::move(inner)), budget_(budget) {}

void FaultInjectingStorage::charge_operation() {
    std::lock_guard lk(mu_);
    if (crashed_) throw IoError("injected crash: storage is dead");
    if (budget_.operations && operations_ >= *budget_.operations) {
        crashed_ = true;
        throw IoError("injected crash before operation");
    }
    ++operations_;
}

std::size_t FaultInjectingStorage::charge_bytes(std::size_t n) {
    std::lock_guard lk(mu_);
    if (crashed_) return 0;
    std::size_t allowed = n;
    if (budget_.bytes) {
        uint64_t left = *budget_.bytes > bytes_written_ ? *budget_.bytes - bytes_written_ : 0;
        if (left < n) {
            allowed = static_cast<std::size_t>(left);
            crashed_ = true;
        }
    }
    bytes_written_ += allowed;
    return allowed;
}

std::unique_ptr<AppendFile> FaultInjectingStorage::open_append(const std::filesystem::path& path,
                                                               bool truncate) {
    charge_operation();
    return std::make_unique<File>(*this, inner_->open_append(path, truncate));
}

std::optional<std::string> FaultInjectingStorage::read_all(const std::filesystem::path& path) {
    return inner_->read_all(path);
}

void FaultInjectingStorage::rename(const std::filesystem::path& from,
                                   const std::filesystem::path& to) {
    charge_operation();
    inner_->rename(from, to);
}

void FaultInjectingStorage::remove(const std::filesystem::path& path) {
    charge_operation();
    inner_->remove(path);
}

void FaultInjectingStorage::sync_dir(const std::filesystem::path& dir) {
    charge_operation();
    inner_->sync_dir(dir);
}

bool FaultInjectingStorage::crashed() const {
    std::lock_guard lk(mu_);
    return crashed_;
}

uint64_t FaultInjectingStorage::bytes_written() const {
    std::lock_guard lk(mu_);
    return bytes_written_;
}

uint64_t FaultInjectingStorage::operations() const {
    std::lock_guard lk(mu_);
    return operations_;
}

}  // namespace qdb
