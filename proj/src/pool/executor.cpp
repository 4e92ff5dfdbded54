#include "qdb/pool/executor.hpp"

namespace qdb::pool {

Executor::Executor(std::size_t threads) {
    if (threads == 0) threads = 1;
    for (std::size_t i = 0; i < threads; ++i) threads_.emplace_back([this] { run(); });
}

Executor::~Executor() { shutdown(); }

void Executor::post(std::function<void()> task) {
    {
        std::lock_guard lk(mu_);
        if (stopping_) return;
        tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
}

void Executor::wait_idle() {
    std::unique_lock lk(mu_);
    idle_cv_.wait(lk, [&] { return tasks_.empty() && running_ == 0; });
}

void Executor::shutdown() {
    {
        std::lock_guard lk(mu_);
        if (stopping_ && threads_.empty()) return;
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) {
        if (t.joinable()) t.join();
    }
    threads_.clear();
}

std::size_t Executor::pending() const {
    std::lock_guard lk(mu_);
    return tasks_.size() + running_;
}

uint64_t Executor::completed() const {
    std::lock_guard lk(mu_);
    return completed_;
}

void Executor::run() {
    std::unique_lock lk(mu_);
    while (true) {
        cv_.wait(lk, [&] { return stopping_ || !tasks_.empty(); });
        // Drain what is queued even when stopping so deferred work is not lost.
        if (tasks_.empty()) return;
        auto task = std::move(tasks_.front());
        tasks_.pop_front();
        ++running_;
        lk.unlock();
        try {
            task();
        } catch (...) {
        }
        lk.lock();
        --running_;
        ++completed_;
        if (tasks_.empty() && running_ == 0) idle_cv_.notify_all();
    }
}

}  // namespace qdb::pool
