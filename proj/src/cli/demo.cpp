#include "wearsync/cli/demo.hpp"

#include <spdlog/fmt/fmt.h>

#include <chrono>
#include <mutex>
#include <thread>

#include "api_client.hpp"
#include "wearsync/lab/virtual_lab.hpp"
#include "wearsync/net/device_runner.hpp"
#include "wearsync/net/hub_server.hpp"

namespace wearsync::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Devices {
    sim::DeviceConfig chest;
    sim::DeviceConfig watch;
    sim::LinkLatency chest_latency;
    sim::LinkLatency watch_latency;
};

Devices make_devices(const DemoOptions& o)
{
    Devices d{sim::DeviceConfig(wire::DeviceKind::ChestStrap, o.protocol),
              sim::DeviceConfig(wire::DeviceKind::Watch, o.protocol), {}, {}};
    d.chest.seed = o.seed;
    d.chest.hr = o.hr;
    d.watch.seed = o.seed + 1;
    d.watch.hr = o.hr;
    d.watch.offset_ns = o.watch_offset_ns;
    d.chest_latency = sim::LinkLatency::symmetric(o.latency_mean_ms, o.latency_jitter_ms, o.seed * 31 + 5);
    d.watch_latency = sim::LinkLatency::symmetric(o.latency_mean_ms, o.latency_jitter_ms, o.seed * 31 + 11);
    return d;
}

void say(const DemoOptions& o, const std::string& text)
{
    if (o.progress)
        o.progress(text);
}

void counters_from(const hub::HubCore& hub, DemoResult& r)
{
    for (std::size_t i = 0; i < std::size(store::kAllStreams); ++i)
        r.counters[i] = hub.counters(store::kAllStreams[i]);
}

void set_meta(hub::HubConfig& c, const std::string& key, const std::string& value)
{
    for (auto& [k, v] : c.metadata)
        if (k == key) {
            v = value;
            return;
        }
    c.metadata.emplace_back(key, value);
}

hub::HubConfig with_metadata(const DemoOptions& o, const std::string& store_path)
{
    hub::HubConfig c = o.hub;
    set_meta(c, "store", store_path);
    set_meta(c, "time_scale", o.virtual_time ? "virtual" : fmt::format("{}", o.time_scale));
    set_meta(c, "protocol", o.protocol.to_string());
    set_meta(c, "demo.watch_offset_ns", std::to_string(o.watch_offset_ns));
    set_meta(c, "device.seed", std::to_string(o.seed));
    set_meta(c, "device.latency_mean_ms", fmt::format("{}", o.latency_mean_ms));
    set_meta(c, "device.latency_jitter_ms", fmt::format("{}", o.latency_jitter_ms));
    const auto& p = o.hr.dropout_prob;
    set_meta(c, "hr.dropout", fmt::format("rest:{},walk:{},run:{}", p[0], p[1], p[2]));
    return c;
}

void run_virtual(const DemoOptions& o, store::Store& st, DemoResult& r)
{
    const Devices d = make_devices(o);
    lab::VirtualLab lab(with_metadata(o, r.store_path.string()), st);
    lab.connect(d.chest, d.chest_latency);
    const auto watch = lab.connect(d.watch, d.watch_latency);
    auto synced = [&] {
        const auto s = lab.hub().live_status();
        return s.chest.link == hub::LinkState::Synced && s.watch.link == hub::LinkState::Synced;
    };
    if (!lab.run_until(synced, 30 * kNanosPerSecond))
        throw DemoError("devices did not synchronize");
    say(o, "synced");

    r.session_id = lab.hub().start_session(o.title, "simulated activity protocol " + o.protocol.to_string());
    const auto total_ns = static_cast<std::int64_t>(o.protocol.total_duration_s() * 1e9);
    const auto end = lab.now().value + total_ns;
    while (lab.now().value < end) {
        lab.run_until(BootNanos{std::min(end, lab.now().value + kNanosPerSecond)});
        if (lab.hub().live_status().watch.link != hub::LinkState::Synced || !lab.open(watch))
            r.watch_stayed_synced = false;
    }
    lab.hub().stop_session(r.session_id);
    if (!lab.run_until([&] { return lab.hub().session_finalized(); }, 30 * kNanosPerSecond))
        throw DemoError("session did not finalize");
    counters_from(lab.hub(), r);
}

void run_real(const DemoOptions& o, store::Store& st, DemoResult& r)
{
    const Devices d = make_devices(o);
    ScaledSystemClock clock(o.time_scale);
    net::HubServer server(with_metadata(o, r.store_path.string()), clock, st, net::ServerOptions{o.host, o.device_port, o.http_port, 1000});
    server.start();

    std::atomic<bool> stop_devices{false};
    std::mutex failure_mutex;
    std::string failure;
    std::vector<std::thread> threads;
    auto launch = [&](const sim::DeviceConfig& cfg, const sim::LinkLatency& latency) {
        net::RunnerOptions opt;
        opt.host = o.host;
        opt.port = server.device_port();
        opt.latency = latency;
        threads.emplace_back([&, cfg, opt] {
            const auto res = net::run_device(cfg, clock, opt, stop_devices);
            if (res.exit_code != 0) {
                std::lock_guard lock(failure_mutex);
                failure = cfg.device_id + ": " + res.error;
            }
        });
    };
    auto failed = [&] {
        std::lock_guard lock(failure_mutex);
        return failure;
    };
    auto shutdown = [&] {
        stop_devices = true;
        for (auto& t : threads)
            t.join();
        threads.clear();
        server.stop();
    };

    try {
        launch(d.chest, d.chest_latency);
        launch(d.watch, d.watch_latency);

        ApiClient api("http://" + o.host + ":" + std::to_string(server.http_port()));
        const auto deadline = Clock::now() + std::chrono::seconds(30);
        for (;;) {
            const auto s = api.get("/status");
            if (s["chest_strap"]["link"] == "synced" && s["watch"]["link"] == "synced")
                break;
            if (const auto f = failed(); !f.empty())
                throw DemoError("device gave up: " + f);
            if (Clock::now() > deadline)
                throw DemoError("devices did not synchronize within 30 s");
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        say(o, "synced");

        const auto created = api.post("/sessions", {{"title", o.title},
                                                    {"description", "simulated activity protocol " + o.protocol.to_string()}});
        r.session_id = created["id"].get<store::SessionId>();
        api.post("/sessions/" + std::to_string(r.session_id) + "/start");
        say(o, "recording session " + std::to_string(r.session_id));

        const auto total_ns = static_cast<std::int64_t>(o.protocol.total_duration_s() * 1e9);
        const auto end = Clock::now() + std::chrono::nanoseconds(clock.to_real_ns(total_ns));
        while (Clock::now() < end) {
            std::this_thread::sleep_for(std::min<Clock::duration>(std::chrono::milliseconds(100), end - Clock::now()));
            if (const auto f = failed(); !f.empty())
                throw DemoError("device gave up: " + f);
            if (server.status().watch.link != hub::LinkState::Synced)
                r.watch_stayed_synced = false;
        }

        api.post("/sessions/" + std::to_string(r.session_id) + "/stop");
        const auto fin_deadline = Clock::now() + std::chrono::seconds(30);
        while (!server.call([](hub::HubCore& h, store::Store&) { return h.session_finalized(); })) {
            if (Clock::now() > fin_deadline)
                throw DemoError("session did not finalize");
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        server.call([&](hub::HubCore& h, store::Store&) {
            counters_from(h, r);
            return 0;
        });
    } catch (const ApiError& e) {
        shutdown();
        throw DemoError(e.what());
    } catch (...) {
        shutdown();
        throw;
    }
    shutdown();
}

}  // namespace

DemoResult run_usecase(const DemoOptions& options)
{
    if (!(options.time_scale > 0.0))
        throw DemoError("time scale must be positive");
    try {
        options.hr.validate();
    } catch (const std::invalid_argument& e) {
        throw DemoError(e.what());
    }
    const auto started = Clock::now();

    DemoResult r;
    r.store_path = options.store_path.empty() ? options.out_dir / "wearsync.db" : options.store_path;
    fs::create_directories(options.out_dir);
    if (r.store_path.has_parent_path())
        fs::create_directories(r.store_path.parent_path());

    store::Store st(r.store_path.string());
    if (options.virtual_time)
        run_virtual(options, st, r);
    else
        run_real(options, st, r);
    st.flush();

    r.export_dir = st.export_csv(r.session_id, options.out_dir);
    say(options, "exported " + r.export_dir.string());

    r.agreement = analysis::compare_export(r.export_dir, options.protocol);
    const auto rounds = st.sync_rounds(r.session_id);
    r.sync = analysis::sync_error_report(rounds, options.watch_offset_ns);

    const auto bundle = st.render_csv(r.session_id);
    const auto meta = st.get_session(r.session_id);
    const auto chest = analysis::load_chest_hr(bundle[1].second);
    const auto watch = analysis::load_watch_hr(bundle[3].second);
    store::CsvBundle report{
        {"report.csv", analysis::report_csv(r.agreement)},
        {"phases.csv", analysis::phases_csv(r.agreement)},
        {"merged.csv", analysis::merged_csv(chest, watch, meta.start->boot_ns.value, options.protocol.total_duration_s(),
                                            options.protocol)},
        {"sync_error.csv", analysis::sync_error_csv(r.sync)},
        {"sync_rounds.csv", analysis::sync_rounds_csv(rounds, options.watch_offset_ns)},
    };
    r.report_dir = store::write_bundle(report, options.out_dir, std::to_string(r.session_id) + "-report");
    r.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    return r;
}

}  // namespace wearsync::cli
