#include "wearsync/clock.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace wearsync {
namespace {

std::int64_t monotonic_ns()
{
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::int64_t wall_ns()
{
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

ScaledSystemClock::ScaledSystemClock(double scale)
    : scale_(scale)
    , boot_at_start_(0)
    , unix_ns_at_start_(wall_ns())
{
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw std::invalid_argument("time scale must be positive");
    boot_at_start_ = boot_now().value;
}

BootNanos ScaledSystemClock::boot_now() const
{
    const long double scaled = static_cast<long double>(monotonic_ns()) * scale_;
    return BootNanos{static_cast<std::int64_t>(std::llround(scaled))};
}

UnixMillis ScaledSystemClock::unix_now() const
{
    const std::int64_t unix_ns = unix_ns_at_start_ + (boot_now().value - boot_at_start_);
    return UnixMillis{floor_div(unix_ns, kNanosPerMilli)};
}

std::int64_t ScaledSystemClock::to_real_ns(std::int64_t sim_ns) const
{
    return static_cast<std::int64_t>(std::llround(static_cast<long double>(sim_ns) / scale_));
}

ManualClock::ManualClock(BootNanos start, UnixMillis unix_at_start)
    : now_(start.value)
    , start_(start.value)
    , unix_ns_at_start_(unix_at_start.value * kNanosPerMilli)
{
}

UnixMillis ManualClock::unix_now() const
{
    return UnixMillis{floor_div(unix_ns_at_start_ + (now_.load() - start_), kNanosPerMilli)};
}

void ManualClock::set(BootNanos t)
{
    if (t.value < now_.load())
        throw std::logic_error("ManualClock cannot run backwards");
    now_.store(t.value);
}

}  // namespace wearsync
