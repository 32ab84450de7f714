#pragma once

#include <atomic>
#include <cstdint>

#include "wearsync/timebase.hpp"

namespace wearsync {

// Source of hub time: a monotonic boot clock plus a wall clock.
class Clock {
public:
    virtual ~Clock() = default;

    virtual BootNanos boot_now() const = 0;
    virtual UnixMillis unix_now() const = 0;

    TimeAnchor anchor_now() const { return TimeAnchor{boot_now(), unix_now()}; }
};

// Boot time is `scale` x CLOCK_MONOTONIC, so every process on the host that uses
// the same scale agrees on it. Unix time is the wall clock at construction
// advanced by scaled boot time, which keeps both bases in step under scaling.
class ScaledSystemClock final : public Clock {
public:
    explicit ScaledSystemClock(double scale = 1.0);

    BootNanos boot_now() const override;
    UnixMillis unix_now() const override;

    double scale() const { return scale_; }

    // Real nanoseconds needed for `sim_ns` of simulated time to elapse.
    std::int64_t to_real_ns(std::int64_t sim_ns) const;

private:
    double scale_;
    std::int64_t boot_at_start_;
    std::int64_t unix_ns_at_start_;
};

// Hand-driven clock for virtual-time simulation and tests.
class ManualClock final : public Clock {
public:
    ManualClock(BootNanos start, UnixMillis unix_at_start);

    BootNanos boot_now() const override { return BootNanos{now_.load()}; }
    UnixMillis unix_now() const override;

    void set(BootNanos t);
    void advance(std::int64_t ns) { now_.fetch_add(ns); }

private:
    std::atomic<std::int64_t> now_;
    std::int64_t start_;
    std::int64_t unix_ns_at_start_;
};

}  // namespace wearsync
