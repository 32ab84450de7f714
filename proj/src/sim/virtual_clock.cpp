#include "wearsync/sim/virtual_clock.hpp"

#include <cmath>

namespace wearsync::sim {

VirtualClock::VirtualClock(std::int64_t true_offset_ns, double drift_ppm, ClockOrigin origin, BootNanos t0)
    : true_offset_ns_(true_offset_ns)
    , drift_ppm_(drift_ppm)
    , origin_(origin)
    , t0_(t0)
{
}

std::int64_t VirtualClock::reading(BootNanos hub_now) const
{
    std::int64_t drift = 0;
    if (drift_ppm_ != 0.0)
        drift = std::llround(drift_ppm_ * 1e-6 * static_cast<double>(hub_now.value - t0_.value));
    return origin_shift_ns_ + (hub_now.value - true_offset_ns_) + drift;
}

void VirtualClock::set_anchor(const TimeAnchor& hub_anchor)
{
    if (origin_ != ClockOrigin::Epoch2000)
        return;
    // hub boot t  ->  unix ns = anchor.unix + (t - anchor.boot)  ->  epoch2000 = unix - offset
    origin_shift_ns_ = hub_anchor.unix_ms.value * kNanosPerMilli - hub_anchor.boot_ns.value - kEpoch2000OffsetNs;
}

}  // namespace wearsync::sim
