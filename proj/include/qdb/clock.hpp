#pragma once

#include <atomic>
#include <chrono>
#include <memory>

namespace qdb {

using Duration = std::chrono::nanoseconds;
using TimePoint = std::chrono::time_point<std::chrono::steady_clock, Duration>;

// Time source for every time-based decision (lock deadlines, failure windows,
// idle shrink, periodic dispatch). Tests substitute ManualClock.
class Clock {
 public:
    virtual ~Clock() = default;
    virtual TimePoint now() const = 0;
};

class SteadyClock final : public Clock {
 public:
    TimePoint now() const override { return std::chrono::steady_clock::now(); }
};

class ManualClock final : public Clock {
 public:
    explicit ManualClock(TimePoint start = TimePoint{}) : ticks_(start.time_since_epoch().count()) {}

    TimePoint now() const override { return TimePoint{Duration{ticks_.load()}}; }
    void advance(Duration d) { ticks_ += d.count(); }
    void set(TimePoint t) { ticks_ = t.time_since_epoch().count(); }

 private:
    std::atomic<Duration::rep> ticks_;
};

std::shared_ptr<Clock> default_clock();

}  // namespace qdb
