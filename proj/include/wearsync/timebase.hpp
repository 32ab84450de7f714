#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace wearsync {

inline constexpr std::int64_t kNanosPerMilli = 1'000'000;
inline constexpr std::int64_t kNanosPerSecond = 1'000'000'000;

// 2000-01-01T00:00:00Z expressed as Unix nanoseconds (10957 days, no leap seconds).
inline constexpr std::int64_t kEpoch2000OffsetNs = 946'684'800LL * kNanosPerSecond;

// Nanoseconds since a device booted. Only comparable within one device.
struct BootNanos {
    std::int64_t value = 0;
    auto operator<=>(const BootNanos&) const = default;
};

// Nanoseconds since 2000-01-01T00:00:00 UTC.
struct Epoch2000Nanos {
    std::int64_t value = 0;
    auto operator<=>(const Epoch2000Nanos&) const = default;
};

// Milliseconds since 1970-01-01T00:00:00 UTC.
struct UnixMillis {
    std::int64_t value = 0;
    auto operator<=>(const UnixMillis&) const = default;
};

// One three-timestamp exchange. t1 and t3 come from the hub clock, t2 from the device.
struct SyncRound {
    std::int64_t seq = 0;
    BootNanos t1;
    BootNanos t2;
    BootNanos t3;

    std::int64_t rtt_ns() const { return t3.value - t1.value; }
    bool operator==(const SyncRound&) const = default;
};

enum class Estimator {
    MinusHalfRtt,  // t1 - t2 - (t3 - t1) / 2
    Corrected,     // t1 - t2 + (t3 - t1) / 2
};

std::string_view to_string(Estimator estimator);
std::optional<Estimator> parse_estimator(std::string_view text);

struct OffsetEstimate {
    std::int64_t mean_offset_ns = 0;
    std::vector<SyncRound> rounds;
    std::vector<std::int64_t> per_round_offsets_ns;
    Estimator estimator = Estimator::Corrected;
    bool min_rtt_filtered = false;

    bool operator==(const OffsetEstimate&) const = default;
};

// A simultaneous reading of the hub's monotonic and wall clocks.
struct TimeAnchor {
    BootNanos boot_ns;
    UnixMillis unix_ms;

    bool operator==(const TimeAnchor&) const = default;
};

class TimebaseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::int64_t estimate_offset_round(const SyncRound& round, Estimator estimator);

struct AggregateOptions {
    // Keep only rounds whose RTT is within 1.5x the minimum RTT.
    bool min_rtt_filter = false;
};

// Throws TimebaseError when `rounds` is empty: the handshake never completed.
OffsetEstimate aggregate_offset(std::span<const SyncRound> rounds, Estimator estimator,
                                AggregateOptions options = {});

// Truncated (toward zero) integer mean. Throws on an empty input.
std::int64_t truncated_mean(std::span<const std::int64_t> values);

BootNanos rebase(BootNanos device_ts, const OffsetEstimate& estimate);
BootNanos rebase(BootNanos device_ts, std::int64_t mean_offset_ns);

std::int64_t epoch2000_to_unix_ns(Epoch2000Nanos ts);
Epoch2000Nanos unix_ns_to_epoch2000(std::int64_t unix_ns);

// anchor.unix_ms + round_half_up((ts - anchor.boot_ns) / 1e6)
UnixMillis boot_to_unix_ms(BootNanos ts, const TimeAnchor& anchor);

// Maps a Unix-ns instant onto the hub boot clock through an anchor (ms resolution of the anchor).
BootNanos unix_ns_to_boot(std::int64_t unix_ns, const TimeAnchor& anchor);

// Floor division, used where rounding must not depend on sign.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b)
{
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0)))
        --q;
    return q;
}

}  // namespace wearsync
