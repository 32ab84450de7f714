#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "wearsync/clock.hpp"
#include "wearsync/hub/hub_core.hpp"
#include "wearsync/sim/device.hpp"
#include "wearsync/sim/latency.hpp"
#include "wearsync/store/store.hpp"
#include "wearsync/wire.hpp"

namespace wearsync::lab {

using DropRule = std::function<bool(const wire::WireMessage&)>;

struct LabOptions {
    BootNanos start{5 * kNanosPerSecond};
    UnixMillis unix_start{1'790'000'000'000};  // 2026-09-21
    std::int64_t device_poll_ns = kNanosPerMilli;
    // Keep every encoded frame per connection and direction.
    bool record_transcript = false;
};

// Hub and simulated devices in one process on a shared virtual clock. Every
// message is encoded, delayed on its link and decoded again, so the hub sees
// exactly what it would see over TCP, only without wall time.
class VirtualLab : private hub::Outbox {
public:
    VirtualLab(hub::HubConfig config, store::Store& store, LabOptions options = {});
    ~VirtualLab() override;

    // Opens a link and sends hello. Returns the hub-side connection id.
    hub::ConnectionId connect(sim::DeviceConfig device, sim::LinkLatency latency);
    // Reconnects an existing device on a fresh link (new connection id).
    hub::ConnectionId reconnect(hub::ConnectionId old);

    // Orderly close seen by both ends.
    void disconnect(hub::ConnectionId id);
    // Silently loses everything in both directions while set.
    void partition(hub::ConnectionId id, bool lost);
    void drop_uplink(hub::ConnectionId id, DropRule rule);
    void drop_downlink(hub::ConnectionId id, DropRule rule);
    // Injects raw bytes on the uplink as if the device had sent them.
    void inject_uplink(hub::ConnectionId id, std::vector<std::uint8_t> bytes);

    void run_until(BootNanos t);
    void run_for(std::int64_t ns);
    // Runs until `done` holds or `limit` of virtual time passes. Returns whether it held.
    bool run_until(const std::function<bool()>& done, std::int64_t limit_ns);

    BootNanos now() const { return clock_.boot_now(); }
    ManualClock& clock() { return clock_; }
    hub::HubCore& hub() { return hub_; }
    sim::DeviceSim& device(hub::ConnectionId id);
    bool open(hub::ConnectionId id) const;

    const std::vector<std::vector<std::uint8_t>>& uplink_frames(hub::ConnectionId id) const;
    const std::vector<std::vector<std::uint8_t>>& downlink_frames(hub::ConnectionId id) const;

private:
    using Frame = std::vector<std::uint8_t>;

    struct Link {
        Link(std::shared_ptr<sim::DeviceSim> d, sim::LinkLatency l)
            : device(std::move(d))
            , latency(l)
            , up(l.uplink)
            , down(l.downlink)
        {
        }

        std::shared_ptr<sim::DeviceSim> device;
        sim::LinkLatency latency;
        sim::LatencySampler up;
        sim::LatencySampler down;
        sim::DelayLine<Frame> uplink;
        sim::DelayLine<Frame> downlink;
        wire::FrameDecoder hub_decoder;
        wire::FrameDecoder device_decoder;
        bool open = true;
        bool lost = false;
        DropRule drop_up;
        DropRule drop_down;
        std::vector<Frame> up_transcript;
        std::vector<Frame> down_transcript;
    };

    void send(hub::ConnectionId id, const wire::WireMessage& message) override;
    void close(hub::ConnectionId id) override;

    hub::ConnectionId open_link(std::shared_ptr<sim::DeviceSim> device, sim::LinkLatency latency);
    void device_send(hub::ConnectionId id, Link& link, const std::vector<wire::WireMessage>& messages);
    void step(BootNanos t);
    void advance(BootNanos next);
    std::optional<BootNanos> next_event() const;
    Link& link(hub::ConnectionId id);
    const Link& link(hub::ConnectionId id) const;

    LabOptions options_;
    ManualClock clock_;
    hub::HubCore hub_;
    std::map<hub::ConnectionId, Link> links_;
    hub::ConnectionId next_id_ = 1;
    std::int64_t next_poll_;
    std::optional<std::int64_t> last_step_;
};

}  // namespace wearsync::lab
