#pragma once

// Drives one DeviceSim over a real TCP connection to the hub, with the
// configured one-way latencies applied in simulated time on both directions.

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>

#include "wearsync/clock.hpp"
#include "wearsync/sim/device.hpp"
#include "wearsync/sim/latency.hpp"

namespace wearsync::net {

struct RunnerOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = wire::kDefaultPort;
    sim::LinkLatency latency;
    // Consecutive connection attempts that fail (refused, or closed before the
    // hub acknowledged the hello) before giving up.
    int max_attempts = 10;
    std::int64_t backoff_initial_ms = 100;  // wall time, doubled per failure
    std::int64_t backoff_max_ms = 2000;
};

struct RunnerResult {
    int exit_code = 0;  // 0 after a requested stop, 1 when the hub stayed unreachable
    std::string error;
    int connections = 0;
};

// Runs until `stop` becomes true or the attempts are exhausted. `observe`, if
// set, is called after every loop iteration with the device.
RunnerResult run_device(sim::DeviceConfig config, const ScaledSystemClock& clock, const RunnerOptions& options,
                        const std::atomic<bool>& stop,
                        const std::function<void(const sim::DeviceSim&)>& observe = {});

}  // namespace wearsync::net
