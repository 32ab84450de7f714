#include "wearsync/net/device_runner.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <thread>

#include "wearsync/net/socket.hpp"

namespace wearsync::net {

namespace {

constexpr std::int64_t kMaxWaitRealNs = kNanosPerMilli;

void sleep_interruptible(std::int64_t ms, const std::atomic<bool>& stop)
{
    const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(ms);
    while (!stop && std::chrono::steady_clock::now() < until)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
}

}  // namespace

RunnerResult run_device(sim::DeviceConfig config, const ScaledSystemClock& clock, const RunnerOptions& options,
                        const std::atomic<bool>& stop, const std::function<void(const sim::DeviceSim&)>& observe)
{
    const std::string name = std::string(wire::to_string(config.kind)) + " '" + config.device_id + "'";
    sim::DeviceSim device(std::move(config), clock.boot_now());
    sim::LatencySampler up_delay(options.latency.uplink);
    sim::LatencySampler down_delay(options.latency.downlink);

    RunnerResult result;
    int failures = 0;
    std::int64_t backoff = options.backoff_initial_ms;
    std::vector<std::uint8_t> buffer(64 * 1024);

    auto fail_attempt = [&](const std::string& why) {
        ++failures;
        result.error = why;
        spdlog::warn("{}: {} (attempt {} of {})", name, why, failures, options.max_attempts);
        if (failures >= options.max_attempts)
            return false;
        sleep_interruptible(backoff, stop);
        backoff = std::min(backoff * 2, options.backoff_max_ms);
        return true;
    };

    while (!stop) {
        Socket socket;
        try {
            socket = Socket::connect(options.host, options.port);
        } catch (const NetError& e) {
            if (!fail_attempt(e.what()))
                break;
            continue;
        }
        ++result.connections;
        if (result.connections > 1)
            device.reset_link();

        wire::FrameDecoder decoder;
        sim::DelayLine<std::vector<std::uint8_t>> uplink;
        sim::DelayLine<wire::WireMessage> downlink;
        auto queue_up = [&](const std::vector<wire::WireMessage>& messages, std::int64_t now) {
            for (const auto& m : messages)
                uplink.push(wire::encode(m), now, up_delay.next_ns());
        };
        queue_up({device.hello()}, clock.boot_now().value);

        bool registered_once = false;
        std::string ended = "hub closed the connection";
        try {
            while (!stop) {
                std::int64_t now = clock.boot_now().value;
                for (auto& frame : uplink.pop_due(now))
                    socket.send_all(frame);
                for (auto& m : downlink.pop_due(now))
                    queue_up(device.on_message(m, BootNanos{now}), now);
                queue_up(device.poll(BootNanos{now}), now);
                registered_once = registered_once || device.registered();
                if (observe)
                    observe(device);
                if (device.hub_lost()) {
                    ended = "hub stopped acknowledging keepalives";
                    break;
                }

                std::int64_t wait = kMaxWaitRealNs;
                for (auto next : {uplink.next_release(), downlink.next_release()})
                    if (next)
                        wait = std::min(wait, clock.to_real_ns(std::max<std::int64_t>(0, *next - now)));
                const auto n = socket.recv_some(buffer, wait);
                if (!n)
                    continue;
                if (*n == 0)
                    break;
                decoder.feed(std::span<const std::uint8_t>(buffer.data(), *n));
                now = clock.boot_now().value;
                for (;;) {
                    auto r = decoder.next();
                    if (std::holds_alternative<wire::NeedMoreBytes>(r))
                        break;
                    if (auto* m = std::get_if<wire::WireMessage>(&r))
                        downlink.push(std::move(*m), now, down_delay.next_ns());
                    else
                        spdlog::warn("{}: undecodable frame from hub ({})", name,
                                     wire::to_string(std::get<wire::DecodeError>(r)));
                    if (decoder.failed())
                        break;
                }
                if (decoder.failed()) {
                    ended = "unreadable stream from hub";
                    break;
                }
            }
        } catch (const NetError& e) {
            ended = e.what();
        }
        socket.close();
        if (stop)
            break;
        if (!device.last_error().empty())
            ended += " (" + device.last_error() + ")";
        if (registered_once) {
            failures = 0;
            backoff = options.backoff_initial_ms;
            spdlog::warn("{}: {}; reconnecting", name, ended);
            sleep_interruptible(backoff, stop);
        } else if (!fail_attempt(ended)) {
            break;
        }
    }

    result.exit_code = stop ? 0 : 1;
    if (result.exit_code == 0)
        result.error.clear();
    return result;
}

}  // namespace wearsync::net
