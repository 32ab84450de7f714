#include "wearsync/lab/virtual_lab.hpp"

#include <stdexcept>

namespace wearsync::lab {

VirtualLab::VirtualLab(hub::HubConfig config, store::Store& store, LabOptions options)
    : options_(options)
    , clock_(options.start, options.unix_start)
    , hub_(std::move(config), clock_, store, *this)
    , next_poll_(options.start.value)
{
    if (options_.device_poll_ns <= 0)
        throw std::invalid_argument("device poll interval must be positive");
}

VirtualLab::~VirtualLab() = default;

VirtualLab::Link& VirtualLab::link(hub::ConnectionId id)
{
    auto it = links_.find(id);
    if (it == links_.end())
        throw std::out_of_range("no link " + std::to_string(id));
    return it->second;
}

const VirtualLab::Link& VirtualLab::link(hub::ConnectionId id) const
{
    auto it = links_.find(id);
    if (it == links_.end())
        throw std::out_of_range("no link " + std::to_string(id));
    return it->second;
}

sim::DeviceSim& VirtualLab::device(hub::ConnectionId id)
{
    return *link(id).device;
}

bool VirtualLab::open(hub::ConnectionId id) const
{
    return link(id).open;
}

const std::vector<std::vector<std::uint8_t>>& VirtualLab::uplink_frames(hub::ConnectionId id) const
{
    return link(id).up_transcript;
}

const std::vector<std::vector<std::uint8_t>>& VirtualLab::downlink_frames(hub::ConnectionId id) const
{
    return link(id).down_transcript;
}

hub::ConnectionId VirtualLab::open_link(std::shared_ptr<sim::DeviceSim> device, sim::LinkLatency latency)
{
    const hub::ConnectionId id = next_id_++;
    Link& l = links_.try_emplace(id, std::move(device), latency).first->second;
    hub_.on_connect(id, now());
    device_send(id, l, {l.device->hello()});
    return id;
}

hub::ConnectionId VirtualLab::connect(sim::DeviceConfig config, sim::LinkLatency latency)
{
    return open_link(std::make_shared<sim::DeviceSim>(std::move(config), now()), latency);
}

hub::ConnectionId VirtualLab::reconnect(hub::ConnectionId old)
{
    Link& l = link(old);
    if (l.open)
        disconnect(old);
    l.device->reset_link();
    return open_link(l.device, l.latency);
}

void VirtualLab::disconnect(hub::ConnectionId id)
{
    Link& l = link(id);
    if (!l.open)
        return;
    l.open = false;
    l.uplink.clear();
    l.downlink.clear();
    hub_.on_disconnect(id, now());
}

void VirtualLab::partition(hub::ConnectionId id, bool lost)
{
    link(id).lost = lost;
}

void VirtualLab::drop_uplink(hub::ConnectionId id, DropRule rule)
{
    link(id).drop_up = std::move(rule);
}

void VirtualLab::drop_downlink(hub::ConnectionId id, DropRule rule)
{
    link(id).drop_down = std::move(rule);
}

void VirtualLab::inject_uplink(hub::ConnectionId id, std::vector<std::uint8_t> bytes)
{
    Link& l = link(id);
    l.uplink.push(std::move(bytes), now().value, l.up.next_ns());
}

void VirtualLab::device_send(hub::ConnectionId id, Link& l, const std::vector<wire::WireMessage>& messages)
{
    for (const auto& message : messages) {
        if (!l.open)
            return;
        const std::int64_t delay = l.up.next_ns();
        if (l.lost || (l.drop_up && l.drop_up(message)))
            continue;
        Frame frame = wire::encode(message);
        if (options_.record_transcript)
            l.up_transcript.push_back(frame);
        l.uplink.push(std::move(frame), now().value, delay);
    }
    (void)id;
}

void VirtualLab::send(hub::ConnectionId id, const wire::WireMessage& message)
{
    auto it = links_.find(id);
    if (it == links_.end() || !it->second.open)
        return;
    Link& l = it->second;
    const std::int64_t delay = l.down.next_ns();
    if (l.lost || (l.drop_down && l.drop_down(message)))
        return;
    Frame frame = wire::encode(message);
    if (options_.record_transcript)
        l.down_transcript.push_back(frame);
    l.downlink.push(std::move(frame), now().value, delay);
}

void VirtualLab::close(hub::ConnectionId id)
{
    auto it = links_.find(id);
    if (it == links_.end())
        return;
    // Frames already queued towards the device still arrive (the error that explains the close).
    it->second.open = false;
    it->second.uplink.clear();
}

std::optional<BootNanos> VirtualLab::next_event() const
{
    std::optional<BootNanos> next = hub_.next_timer();
    auto consider = [&](std::int64_t t) {
        if (!next || t < next->value)
            next = BootNanos{t};
    };
    bool any_open = false;
    for (const auto& [id, l] : links_) {
        if (auto t = l.uplink.next_release())
            consider(*t);
        if (auto t = l.downlink.next_release())
            consider(*t);
        any_open = any_open || l.open;
    }
    if (any_open)
        consider(next_poll_);
    return next;
}

void VirtualLab::step(BootNanos t)
{
    clock_.set(t);
    hub_.tick(t);

    if (t.value >= next_poll_) {
        for (auto& [id, l] : links_)
            if (l.open)
                device_send(id, l, l.device->poll(t));
        while (next_poll_ <= t.value)
            next_poll_ += options_.device_poll_ns;
    }

    // zero-delay replies land within the same instant
    bool delivered = true;
    while (delivered) {
        delivered = false;
        for (auto& [id, l] : links_) {
            for (auto& frame : l.downlink.pop_due(t.value)) {
                delivered = true;
                l.device_decoder.feed(frame);
                while (true) {
                    auto result = l.device_decoder.next();
                    auto* message = std::get_if<wire::WireMessage>(&result);
                    if (!message)
                        break;
                    auto replies = l.device->on_message(*message, t);
                    device_send(id, l, replies);
                }
            }
        }

        for (auto& [id, l] : links_) {
            for (auto& frame : l.uplink.pop_due(t.value)) {
                delivered = true;
                if (!l.open)
                    break;
                l.hub_decoder.feed(frame);
                while (l.open) {
                    auto result = l.hub_decoder.next();
                    if (std::holds_alternative<wire::NeedMoreBytes>(result))
                        break;
                    if (auto* error = std::get_if<wire::DecodeError>(&result)) {
                        hub_.on_decode_error(id, *error, t);
                        if (l.hub_decoder.failed())
                            break;
                        continue;
                    }
                    hub_.on_message(id, std::get<wire::WireMessage>(result), t);
                }
            }
        }
    }

}

void VirtualLab::advance(BootNanos next)
{
    BootNanos t = std::max(next, now());
    // a timer that stays due would otherwise stall virtual time
    if (last_step_ && t.value <= *last_step_)
        t = BootNanos{*last_step_ + 1};
    last_step_ = t.value;
    step(t);
}

void VirtualLab::run_until(BootNanos t)
{
    while (true) {
        auto next = next_event();
        if (!next || *next > t)
            break;
        advance(*next);
    }
    if (t > now())
        clock_.set(t);
}

void VirtualLab::run_for(std::int64_t ns)
{
    run_until(BootNanos{now().value + ns});
}

bool VirtualLab::run_until(const std::function<bool()>& done, std::int64_t limit_ns)
{
    const BootNanos limit{now().value + limit_ns};
    while (!done()) {
        auto next = next_event();
        if (!next || *next > limit) {
            clock_.set(limit);
            return done();
        }
        advance(*next);
    }
    return true;
}

}  // namespace wearsync::lab
