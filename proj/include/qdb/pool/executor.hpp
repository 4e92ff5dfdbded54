#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace qdb::pool {

// Fixed-size work queue the engine uses for asynchronous (new top-level)
// trigger firings.
class Executor {
 public:
    explicit Executor(std::size_t threads);
    ~Executor();

    Executor(const Executor&) = delete;
    Executor& operator=(const Executor&) = delete;

    // Tasks posted after shutdown() are dropped.
    void post(std::function<void()> task);
    // Blocks until the queue is empty and no task is running.
    void wait_idle();
    void shutdown();

    std::size_t pending() const;
    uint64_t completed() const;

 private:
    void run();

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::deque<std::function<void()>> tasks_;
    std::vector<std::thread> threads_;
    std::size_t running_ = 0;
    uint64_t completed_ = 0;
    bool stopping_ = false;
};

}  // namespace qdb::pool
