#include "wearsync/sim/device.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wearsync::sim {
namespace {

std::size_t slot(wire::StreamKind stream)
{
    return static_cast<std::size_t>(stream);
}

std::int64_t period_for(double rate_hz)
{
    if (!(rate_hz > 0.0) || !std::isfinite(rate_hz))
        throw std::invalid_argument("sample rates must be positive");
    return std::llround(1e9 / rate_hz);
}

}  // namespace

DeviceConfig::DeviceConfig(wire::DeviceKind kind_, ActivityProtocol protocol_)
    : kind(kind_)
    , device_id(kind_ == wire::DeviceKind::ChestStrap ? "chest-1" : "watch-1")
    , acc_rate_hz(kind_ == wire::DeviceKind::ChestStrap ? 200.0 : 50.0)
    , protocol(std::move(protocol_))
{
}

ClockOrigin DeviceConfig::clock_origin() const
{
    return kind == wire::DeviceKind::ChestStrap ? ClockOrigin::Epoch2000 : ClockOrigin::Boot;
}

wire::DeviceDescriptor DeviceConfig::descriptor() const
{
    using wire::StreamKind;
    using wire::TimebaseKind;
    wire::DeviceDescriptor d;
    d.device_id = device_id;
    d.kind = kind;
    if (kind == wire::DeviceKind::ChestStrap) {
        d.streams = {{StreamKind::Hr, hr_rate_hz, TimebaseKind::None},
                     {StreamKind::Acc, acc_rate_hz, TimebaseKind::Epoch2000Nanos}};
    } else {
        d.streams = {{StreamKind::Hr, hr_rate_hz, TimebaseKind::BootNanos},
                     {StreamKind::Acc, acc_rate_hz, TimebaseKind::BootNanos},
                     {StreamKind::Gyro, gyro_rate_hz, TimebaseKind::BootNanos}};
    }
    return d;
}

DeviceSim::DeviceSim(DeviceConfig config, BootNanos hub_now)
    : config_(std::move(config))
    , clock_(config_.offset_ns, config_.drift_ppm, config_.clock_origin(), hub_now)
    , motion_(config_.motion)
{
    config_.hr.validate();
    const bool watch = config_.kind == wire::DeviceKind::Watch;
    const std::array<std::pair<wire::StreamKind, double>, 3> rates{{
        {wire::StreamKind::Hr, config_.hr_rate_hz},
        {wire::StreamKind::Acc, config_.acc_rate_hz},
        {wire::StreamKind::Gyro, config_.gyro_rate_hz},
    }};
    for (const auto& [stream, rate] : rates) {
        StreamState& s = streams_[slot(stream)];
        s.stream = stream;
        s.active = watch || stream != wire::StreamKind::Gyro;
        if (s.active)
            s.period_ns = period_for(rate);
        std::seed_seq seq{config_.seed, static_cast<std::uint64_t>(config_.kind), static_cast<std::uint64_t>(stream)};
        s.rng.seed(seq);
    }
}

wire::WireMessage DeviceSim::hello() const
{
    return wire::Hello{wire::kProtocolVersion, config_.descriptor()};
}

std::int64_t DeviceSim::emitted(wire::StreamKind stream) const
{
    return streams_[slot(stream)].emitted;
}

void DeviceSim::reset_link()
{
    registered_ = false;
    awaiting_ack_ = false;
    missed_acks_ = 0;
}

std::vector<wire::WireMessage> DeviceSim::on_message(const wire::WireMessage& message, BootNanos hub_now)
{
    std::vector<wire::WireMessage> out;
    if (const auto* ack = std::get_if<wire::HelloAck>(&message)) {
        registered_ = true;
        clock_.set_anchor(TimeAnchor{BootNanos{ack->anchor_boot_ns}, UnixMillis{ack->anchor_unix_ms}});
        next_keepalive_hub_ = hub_now.value + config_.keepalive_period_ns;
        awaiting_ack_ = false;
        missed_acks_ = 0;
    } else if (const auto* ping = std::get_if<wire::SyncPing>(&message)) {
        // t2 is this clock's reading at the instant the ping is handled
        out.push_back(wire::SyncPong{ping->seq, ping->t1_ns, clock_.reading(hub_now)});
    } else if (const auto* start = std::get_if<wire::StartCapture>(&message)) {
        if (!(capturing_ && session_id_ == start->session_id))
            start_capture(start->session_id, hub_now);
    } else if (const auto* stop = std::get_if<wire::StopCapture>(&message)) {
        if (capturing_ && session_id_ == stop->session_id) {
            generate(hub_now, out);
            for (auto& s : streams_)
                if (s.active)
                    flush(s, true, out);
            capturing_ = false;
        }
    } else if (std::holds_alternative<wire::KeepaliveAck>(message)) {
        awaiting_ack_ = false;
        missed_acks_ = 0;
    } else if (const auto* error = std::get_if<wire::Error>(&message)) {
        last_error_ = error->code + ": " + error->detail;
    }
    return out;
}

std::vector<wire::WireMessage> DeviceSim::poll(BootNanos hub_now)
{
    std::vector<wire::WireMessage> out;
    if (registered_ && hub_now.value >= next_keepalive_hub_) {
        if (awaiting_ack_)
            ++missed_acks_;
        out.push_back(wire::Keepalive{});
        awaiting_ack_ = true;
        next_keepalive_hub_ += config_.keepalive_period_ns;
        if (next_keepalive_hub_ <= hub_now.value)
            next_keepalive_hub_ = hub_now.value + config_.keepalive_period_ns;
    }
    if (capturing_) {
        generate(hub_now, out);
        const bool interval_due = hub_now.value - last_flush_hub_ >= config_.flush_interval_ns;
        for (auto& s : streams_)
            if (s.active)
                flush(s, interval_due, out);
        if (interval_due)
            last_flush_hub_ = hub_now.value;
    }
    return out;
}

void DeviceSim::start_capture(std::int64_t session_id, BootNanos hub_now)
{
    capturing_ = true;
    session_id_ = session_id;
    capture_start_dev_ = clock_.reading(hub_now);
    last_flush_hub_ = hub_now.value;
    for (auto& s : streams_) {
        s.next_index = 0;
        s.pending_hr.clear();
        s.pending_motion.clear();
    }
    motion_.impulse_device_ns.clear();
    for (BootNanos t : config_.impulses_hub)
        motion_.impulse_device_ns.push_back(clock_.reading(t));
}

void DeviceSim::generate(BootNanos hub_now, std::vector<wire::WireMessage>& out)
{
    const std::int64_t dev_now = clock_.reading(hub_now);
    const bool chest = config_.kind == wire::DeviceKind::ChestStrap;
    const double total = config_.protocol.total_duration_s();

    for (auto& s : streams_) {
        if (!s.active)
            continue;
        while (true) {
            const std::int64_t offset = s.next_index * s.period_ns;
            const std::int64_t dev_ts = capture_start_dev_ + offset;
            if (dev_ts > dev_now)
                break;
            const double t_s = static_cast<double>(offset) / 1e9;
            if (s.stream == wire::StreamKind::Hr) {
                const double clamped = std::min(t_s, total);
                const double truth = hr_ground_truth(config_.protocol, config_.hr, clamped);
                if (chest) {
                    s.pending_hr.push_back(sample_chest_hr(truth, config_.hr.noise_std_chest, s.rng));
                } else {
                    const auto phase = config_.protocol.phases()[config_.protocol.phase_index_at(clamped)].label;
                    s.pending_hr.push_back(sample_watch_hr(truth, config_.hr.noise_std_watch,
                                                           config_.hr.dropout(phase), dev_ts, s.rng));
                }
            } else {
                s.pending_motion.push_back(sample_motion(config_.protocol, motion_, s.stream, t_s, dev_ts, s.rng));
            }
            ++s.next_index;
            ++s.emitted;
            // chest HR has no device stamp; it is sent as soon as it exists
            if (chest && s.stream == wire::StreamKind::Hr)
                flush(s, true, out);
            else if (s.pending_hr.size() + s.pending_motion.size() >= config_.max_batch)
                flush(s, false, out);
        }
    }
}

void DeviceSim::flush(StreamState& s, bool everything, std::vector<wire::WireMessage>& out)
{
    const std::size_t batch = std::max<std::size_t>(1, std::min(config_.max_batch, wire::kMaxBatchItems));
    auto emit = [&](auto& pending, auto member) {
        std::size_t pos = 0;
        while (pending.size() - pos >= batch || (everything && pos < pending.size())) {
            const std::size_t n = std::min(batch, pending.size() - pos);
            wire::Samples msg;
            msg.session_id = session_id_.value_or(0);
            msg.stream = s.stream;
            (msg.*member).assign(pending.begin() + static_cast<std::ptrdiff_t>(pos),
                                 pending.begin() + static_cast<std::ptrdiff_t>(pos + n));
            out.push_back(std::move(msg));
            pos += n;
        }
        pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(pos));
    };
    if (s.stream == wire::StreamKind::Hr)
        emit(s.pending_hr, &wire::Samples::hr);
    else
        emit(s.pending_motion, &wire::Samples::motion);
}

}  // namespace wearsync::sim
