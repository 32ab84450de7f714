#include "wearsync/timebase.hpp"

#include <algorithm>
#include <string>

namespace wearsync {
namespace {

std::int64_t checked_add(std::int64_t a, std::int64_t b, const char* what)
{
    std::int64_t out = 0;
    if (__builtin_add_overflow(a, b, &out))
        throw TimebaseError(std::string("overflow in ") + what);
    return out;
}

std::int64_t checked_sub(std::int64_t a, std::int64_t b, const char* what)
{
    std::int64_t out = 0;
    if (__builtin_sub_overflow(a, b, &out))
        throw TimebaseError(std::string("overflow in ") + what);
    return out;
}

}  // namespace

std::string_view to_string(Estimator estimator)
{
    switch (estimator) {
    case Estimator::MinusHalfRtt:
        return "minus_half_rtt";
    case Estimator::Corrected:
        return "corrected";
    }
    return "corrected";
}

std::optional<Estimator> parse_estimator(std::string_view text)
{
    if (text == "minus_half_rtt")
        return Estimator::MinusHalfRtt;
    if (text == "corrected")
        return Estimator::Corrected;
    return std::nullopt;
}

std::int64_t estimate_offset_round(const SyncRound& round, Estimator estimator)
{
    const std::int64_t base = checked_sub(round.t1.value, round.t2.value, "t1 - t2");
    const std::int64_t half_rtt = checked_sub(round.t3.value, round.t1.value, "t3 - t1") / 2;
    if (estimator == Estimator::MinusHalfRtt)
        return checked_sub(base, half_rtt, "offset");
    return checked_add(base, half_rtt, "offset");
}

std::int64_t truncated_mean(std::span<const std::int64_t> values)
{
    if (values.empty())
        throw TimebaseError("mean of an empty set");
    __int128 sum = 0;
    for (std::int64_t v : values)
        sum += v;
    // __int128 division truncates toward zero like int64 division.
    return static_cast<std::int64_t>(sum / static_cast<__int128>(values.size()));
}

OffsetEstimate aggregate_offset(std::span<const SyncRound> rounds, Estimator estimator,
                                AggregateOptions options)
{
    if (rounds.empty())
        throw TimebaseError("no sync rounds: handshake never completed");

    OffsetEstimate estimate;
    estimate.estimator = estimator;
    estimate.min_rtt_filtered = options.min_rtt_filter;

    std::int64_t min_rtt = 0;
    if (options.min_rtt_filter) {
        min_rtt = std::min_element(rounds.begin(), rounds.end(), [](const auto& a, const auto& b) {
                      return a.rtt_ns() < b.rtt_ns();
                  })->rtt_ns();
    }

    for (const SyncRound& round : rounds) {
        // rtt <= 1.5 * min_rtt, kept in integers
        if (options.min_rtt_filter
            && static_cast<__int128>(round.rtt_ns()) * 2 > static_cast<__int128>(min_rtt) * 3)
            continue;
        estimate.rounds.push_back(round);
        estimate.per_round_offsets_ns.push_back(estimate_offset_round(round, estimator));
    }

    estimate.mean_offset_ns = truncated_mean(estimate.per_round_offsets_ns);
    return estimate;
}

BootNanos rebase(BootNanos device_ts, std::int64_t mean_offset_ns)
{
    return BootNanos{checked_add(device_ts.value, mean_offset_ns, "rebase")};
}

BootNanos rebase(BootNanos device_ts, const OffsetEstimate& estimate)
{
    if (estimate.rounds.empty())
        throw TimebaseError("rebase with an estimate that has no rounds");
    return rebase(device_ts, estimate.mean_offset_ns);
}

std::int64_t epoch2000_to_unix_ns(Epoch2000Nanos ts)
{
    return checked_add(ts.value, kEpoch2000OffsetNs, "epoch2000 to unix");
}

Epoch2000Nanos unix_ns_to_epoch2000(std::int64_t unix_ns)
{
    return Epoch2000Nanos{checked_sub(unix_ns, kEpoch2000OffsetNs, "unix to epoch2000")};
}

UnixMillis boot_to_unix_ms(BootNanos ts, const TimeAnchor& anchor)
{
    const std::int64_t delta = checked_sub(ts.value, anchor.boot_ns.value, "boot delta");
    const std::int64_t ms = floor_div(checked_add(delta, kNanosPerMilli / 2, "boot delta"), kNanosPerMilli);
    return UnixMillis{checked_add(anchor.unix_ms.value, ms, "boot to unix")};
}

BootNanos unix_ns_to_boot(std::int64_t unix_ns, const TimeAnchor& anchor)
{
    const std::int64_t anchor_unix_ns = anchor.unix_ms.value * kNanosPerMilli;
    return BootNanos{checked_add(anchor.boot_ns.value, checked_sub(unix_ns, anchor_unix_ns, "unix delta"),
                                 "unix to boot")};
}

}  // namespace wearsync
