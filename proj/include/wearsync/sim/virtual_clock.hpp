#pragma once

#include <cstdint>

#include "wearsync/timebase.hpp"

namespace wearsync::sim {

enum class ClockOrigin { Boot, Epoch2000 };

// A simulated device clock defined against hub boot time:
//
//   reading(t) = origin_shift + (t - true_offset_ns) + drift_ppm * 1e-6 * (t - t0)
//
// true_offset_ns is hub_time - device_time, i.e. exactly what the sync handshake
// should recover. For Epoch2000 clocks origin_shift maps hub boot time onto
// epoch-2000 nanoseconds and is set from the hub's anchor.
class VirtualClock {
public:
    VirtualClock(std::int64_t true_offset_ns, double drift_ppm, ClockOrigin origin, BootNanos t0 = {});

    std::int64_t reading(BootNanos hub_now) const;

    // Epoch-2000 clocks only; anchors the origin to the hub's boot/unix mapping.
    void set_anchor(const TimeAnchor& hub_anchor);

    std::int64_t true_offset_ns() const { return true_offset_ns_; }
    double drift_ppm() const { return drift_ppm_; }
    ClockOrigin origin() const { return origin_; }

private:
    std::int64_t true_offset_ns_;
    double drift_ppm_;
    ClockOrigin origin_;
    BootNanos t0_;
    std::int64_t origin_shift_ns_ = 0;
};

}  // namespace wearsync::sim
