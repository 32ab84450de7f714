#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wearsync/sim/signals.hpp"
#include "wearsync/sim/virtual_clock.hpp"
#include "wearsync/timebase.hpp"
#include "wearsync/wire.hpp"

namespace wearsync::sim {

struct DeviceConfig {
    DeviceConfig(wire::DeviceKind kind, ActivityProtocol protocol);

    wire::DeviceKind kind;
    std::string device_id;
    std::uint64_t seed = 1;
    std::int64_t offset_ns = 0;  // hub_time - device_time
    double drift_ppm = 0.0;
    double hr_rate_hz = 1.0;
    double acc_rate_hz;          // 200 Hz chest, 50 Hz watch
    double gyro_rate_hz = 50.0;  // watch only
    HrModel hr;
    MotionModel motion;
    ActivityProtocol protocol;
    // Motion impulses at hub-clock instants; converted to device time at capture start.
    std::vector<BootNanos> impulses_hub;
    std::int64_t keepalive_period_ns = kNanosPerSecond;
    std::int64_t flush_interval_ns = 100 * kNanosPerMilli;
    std::size_t max_batch = wire::kMaxBatchItems;

    wire::DeviceDescriptor descriptor() const;
    ClockOrigin clock_origin() const;
};

// One simulated wearable, independent of any transport. Inputs are decoded
// messages and the current hub time; outputs are the messages the device sends.
class DeviceSim {
public:
    DeviceSim(DeviceConfig config, BootNanos hub_now);

    wire::WireMessage hello() const;

    std::vector<wire::WireMessage> on_message(const wire::WireMessage& message, BootNanos hub_now);

    // Emits samples that are due, batched, plus keepalives.
    std::vector<wire::WireMessage> poll(BootNanos hub_now);

    // Forget link state after a reconnect; capture state and sample counters survive.
    void reset_link();

    bool registered() const { return registered_; }
    bool capturing() const { return capturing_; }
    std::optional<std::int64_t> session_id() const { return session_id_; }
    int missed_acks() const { return missed_acks_; }
    bool hub_lost(int max_missed = 3) const { return missed_acks_ >= max_missed; }
    const VirtualClock& clock() const { return clock_; }
    const DeviceConfig& config() const { return config_; }
    std::int64_t emitted(wire::StreamKind stream) const;
    const std::string& last_error() const { return last_error_; }

private:
    struct StreamState {
        wire::StreamKind stream = wire::StreamKind::Hr;
        bool active = false;
        std::int64_t period_ns = 0;
        std::int64_t next_index = 0;
        std::int64_t emitted = 0;
        std::mt19937_64 rng;
        std::vector<wire::HrItem> pending_hr;
        std::vector<wire::MotionItem> pending_motion;
    };

    void start_capture(std::int64_t session_id, BootNanos hub_now);
    void generate(BootNanos hub_now, std::vector<wire::WireMessage>& out);
    void flush(StreamState& state, bool everything, std::vector<wire::WireMessage>& out);

    DeviceConfig config_;
    VirtualClock clock_;
    std::array<StreamState, 3> streams_;
    MotionModel motion_;  // impulses in device time
    bool registered_ = false;
    bool capturing_ = false;
    std::optional<std::int64_t> session_id_;
    std::int64_t capture_start_dev_ = 0;
    std::int64_t last_flush_hub_ = 0;
    std::int64_t next_keepalive_hub_ = 0;
    bool awaiting_ack_ = false;
    int missed_acks_ = 0;
    std::string last_error_;
};

}  // namespace wearsync::sim
