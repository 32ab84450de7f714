#include "wearsync/cli/cli.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "api_client.hpp"
#include "wearsync/analysis/analysis.hpp"
#include "wearsync/cli/config.hpp"
#include "wearsync/cli/demo.hpp"
#include "wearsync/hub/json_views.hpp"
#include "wearsync/net/device_runner.hpp"
#include "wearsync/net/hub_server.hpp"

namespace wearsync::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Context {
    Context(const Environment& e, std::ostream& o, std::ostream& er)
        : env(e)
        , out(o)
        , err(er)
    {
    }

    const Environment& env;
    std::ostream& out;
    std::ostream& err;
    std::map<std::string, std::string> flags;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string format = "text";
    std::string log_level = "warn";

    // per-command options that are not settings
    std::int64_t id = -1;
    std::string title;
    std::string description;
    std::string out_dir;
    std::string dir;
    double duration_s = 0.0;
    std::optional<std::int64_t> true_offset_ns;

    Settings settings;

    bool json() const { return format == "json"; }
    bool stopping() const { return env.stop && env.stop->load(); }
};

void bind(CLI::App* app, Context& ctx, const std::string& flag, const std::string& key)
{
    const KeyInfo* info = find_key(key);
    std::string help = std::string(info->help) + " [" + key;
    help += info->default_value.empty() ? "]" : ", default " + std::string(info->default_value) + "]";
    app->add_option_function<std::string>(flag, [&ctx, key](const std::string& v) { ctx.flags[key] = v; }, help);
}

void bind_switch(CLI::App* app, Context& ctx, const std::string& flag, const std::string& key)
{
    const KeyInfo* info = find_key(key);
    app->add_flag_function(flag, [&ctx, key](std::int64_t) { ctx.flags[key] = "true"; },
                           std::string(info->help) + " [" + key + "]");
}

void bind_sync(CLI::App* app, Context& ctx)
{
    bind(app, ctx, "--sync-rounds", "sync.rounds");
    bind(app, ctx, "--sync-spacing-ms", "sync.spacing_ms");
    bind(app, ctx, "--estimator", "sync.estimator");
    bind(app, ctx, "--min-rounds", "sync.min_rounds");
    bind_switch(app, ctx, "--min-rtt-filter", "sync.min_rtt_filter");
    bind(app, ctx, "--keepalive-ms", "keepalive_ms");
    bind(app, ctx, "--grace-ms", "grace_ms");
}

void bind_device_signal(CLI::App* app, Context& ctx)
{
    bind(app, ctx, "--seed", "device.seed");
    bind(app, ctx, "--latency-mean-ms", "device.latency_mean_ms");
    bind(app, ctx, "--latency-jitter-ms", "device.latency_jitter_ms");
    bind(app, ctx, "--protocol", "protocol");
    bind(app, ctx, "--dropout", "hr.dropout");
}

std::uint16_t port_setting(const Settings& s, std::string_view key)
{
    const auto v = get_int(s, key);
    if (v < 0 || v > 65535)
        throw UsageError(std::string(key) + ": port out of range");
    return static_cast<std::uint16_t>(v);
}

double time_scale(const Settings& s)
{
    const double v = get_double(s, "time_scale");
    if (!(v > 0.0 && v <= 1000.0))
        throw UsageError("time_scale must be within (0, 1000]");
    return v;
}

void print(Context& ctx, const ordered_json& j, const std::string& text)
{
    if (ctx.json())
        ctx.out << j.dump(2) << "\n";
    else
        ctx.out << text;
    ctx.out.flush();
}

std::string fmt_opt(const std::optional<double>& v)
{
    return v ? fmt::format("{:.1f}", *v) : std::string("-");
}

ordered_json agreement_json(const analysis::AgreementReport& r)
{
    ordered_json phases = ordered_json::array();
    for (const auto& p : r.phases) {
        phases.push_back({{"activity", sim::to_string(p.activity)},
                          {"start_s", p.start_s},
                          {"end_s", p.end_s},
                          {"chest_mean", p.chest_mean ? ordered_json(*p.chest_mean) : ordered_json(nullptr)},
                          {"watch_mean", p.watch_mean ? ordered_json(*p.watch_mean) : ordered_json(nullptr)},
                          {"chest_count", p.chest_count},
                          {"watch_count", p.watch_count},
                          {"watch_zeros", p.watch_zeros}});
    }
    return {{"mae_bpm", r.mae_bpm},
            {"pearson_r", r.pearson_r},
            {"watch_zero_fraction", r.watch_zero_fraction},
            {"chest_count", r.chest_count},
            {"watch_count", r.watch_count},
            {"pair_count", r.pair_count},
            {"valid_pair_count", r.valid_pair_count},
            {"phases", phases}};
}

std::string agreement_text(const analysis::AgreementReport& r)
{
    std::string t = fmt::format("samples: chest {}, watch {}, pairs {} ({} with a watch reading)\n", r.chest_count,
                                r.watch_count, r.pair_count, r.valid_pair_count);
    t += fmt::format("MAE {:.2f} bpm, Pearson r {:.3f}, watch zero fraction {:.3f}\n", r.mae_bpm, r.pearson_r,
                     r.watch_zero_fraction);
    for (const auto& p : r.phases)
        t += fmt::format("  {:<5} {:>6.0f}-{:<6.0f} s  chest {:>6}  watch {:>6}  zeros {}/{}\n", sim::to_string(p.activity),
                         p.start_s, p.end_s, fmt_opt(p.chest_mean), fmt_opt(p.watch_mean), p.watch_zeros, p.watch_count);
    return t;
}

ordered_json sync_json(const analysis::SyncErrorReport& r)
{
    return {{"true_offset_ns", r.true_offset_ns},
            {"rounds", r.rounds},
            {"corrected_offset_ns", r.corrected_offset_ns},
            {"minus_half_rtt_offset_ns", r.minus_half_rtt_offset_ns},
            {"corrected_error_ns", r.corrected_error_ns},
            {"minus_half_rtt_error_ns", r.minus_half_rtt_error_ns},
            {"mean_rtt_ns", r.mean_rtt_ns}};
}

std::string sync_text(const analysis::SyncErrorReport& r)
{
    return fmt::format("sync: {} rounds, true offset {} ns, mean RTT {} ns\n"
                       "  corrected  offset {} ns, error {} ns\n"
                       "  minus_half_rtt  offset {} ns, error {} ns\n",
                       r.rounds, r.true_offset_ns, r.mean_rtt_ns, r.corrected_offset_ns, r.corrected_error_ns,
                       r.minus_half_rtt_offset_ns, r.minus_half_rtt_error_ns);
}

std::string session_line(const ordered_json& s)
{
    const auto dur = s["duration_ms"].is_null() ? std::string("-") : fmt::format("{:.1f}s", s["duration_ms"].get<std::int64_t>() / 1000.0);
    return fmt::format("{:>4}  {:<9}  {:>8}  {}\n", s["id"].get<std::int64_t>(), s["status"].get<std::string>(), dur,
                       s["title"].get<std::string>());
}

// Offline when a store was configured and no hub url was given.
bool offline(const Settings& s)
{
    return from_user(s, "store") && !from_user(s, "hub.url");
}

std::unique_ptr<store::Store> open_existing_store(const Settings& s)
{
    const auto path = get(s, "store");
    if (!fs::exists(path))
        throw UsageError("store not found: " + path);
    return std::make_unique<store::Store>(path);
}

std::int64_t require_id(const Context& ctx)
{
    if (ctx.id < 0)
        throw UsageError("--id is required");
    return ctx.id;
}

int hub_serve(Context& ctx)
{
    const auto& s = ctx.settings;
    store::Store st(get(s, "store"));
    ScaledSystemClock clock(time_scale(s));
    net::HubServer server(hub_config(s), clock, st,
                          net::ServerOptions{get(s, "hub.host"), port_setting(s, "hub.device_port"),
                                             port_setting(s, "hub.http_port"), 1000});
    server.start();
    print(ctx, ordered_json{{"device_port", server.device_port()}, {"http_port", server.http_port()}},
          fmt::format("hub listening: devices on {}:{}, control API on http://{}:{}\n", get(s, "hub.host"),
                      server.device_port(), get(s, "hub.host"), server.http_port()));
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(ctx.duration_s);
    while (!ctx.stopping() && (ctx.duration_s <= 0 || std::chrono::steady_clock::now() < until))
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    server.stop();
    return 0;
}

int device_run(Context& ctx)
{
    const auto& s = ctx.settings;
    const auto config = device_config(s);
    ScaledSystemClock clock(time_scale(s));
    net::RunnerOptions opt;
    opt.host = get(s, "hub.host");
    opt.port = port_setting(s, "hub.device_port");
    opt.latency = device_latency(s);
    opt.max_attempts = static_cast<int>(get_int(s, "device.max_attempts"));
    if (opt.max_attempts < 1)
        throw UsageError("device.max_attempts must be at least 1");

    std::atomic<bool> stop{false};
    std::atomic<bool> finished{false};
    std::thread watcher([&] {
        const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(ctx.duration_s);
        while (!finished) {
            if (ctx.stopping() || (ctx.duration_s > 0 && std::chrono::steady_clock::now() >= until))
                stop = true;
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    });
    const auto result = net::run_device(config, clock, opt, stop);
    finished = true;
    watcher.join();

    if (result.exit_code != 0) {
        ctx.err << "error: " << config.device_id << " gave up: " << result.error << "\n";
        return 1;
    }
    print(ctx, ordered_json{{"device_id", config.device_id}, {"connections", result.connections}},
          fmt::format("{} stopped after {} connection(s)\n", config.device_id, result.connections));
    return 0;
}

int session_start(Context& ctx)
{
    ApiClient api(get(ctx.settings, "hub.url"));
    std::int64_t id = ctx.id;
    if (id < 0)
        id = api.post("/sessions", {{"title", ctx.title}, {"description", ctx.description}})["id"].get<std::int64_t>();
    const auto j = api.post("/sessions/" + std::to_string(id) + "/start");
    print(ctx, j, "recording: " + session_line(j));
    return 0;
}

int session_stop(Context& ctx)
{
    ApiClient api(get(ctx.settings, "hub.url"));
    const auto j = api.post("/sessions/" + std::to_string(require_id(ctx)) + "/stop");
    print(ctx, j, "stopped: " + session_line(j));
    return 0;
}

int session_list(Context& ctx)
{
    ordered_json list = ordered_json::array();
    if (offline(ctx.settings)) {
        const auto st = open_existing_store(ctx.settings);
        for (const auto& m : st->list_sessions())
            list.push_back(hub::session_json(m));
    } else {
        const auto body = ApiClient(get(ctx.settings, "hub.url")).get("/sessions");
        list = body.at("sessions");
    }
    std::string text;
    for (const auto& s : list)
        text += session_line(s);
    print(ctx, ordered_json{{"sessions", list}}, text.empty() ? "no sessions\n" : text);
    return 0;
}

int session_show(Context& ctx)
{
    const auto id = require_id(ctx);
    ordered_json j;
    if (offline(ctx.settings)) {
        const auto st = open_existing_store(ctx.settings);
        j = hub::session_detail_json(*st, id);
    } else {
        j = ApiClient(get(ctx.settings, "hub.url")).get("/sessions/" + std::to_string(id));
    }
    std::string text = session_line(j);
    text += "  description: " + j["description"].get<std::string>() + "\n";
    if (!j["mean_offset_ns"].is_null())
        text += fmt::format("  watch offset: {} ns from {} rounds ({})\n", j["mean_offset_ns"].get<std::int64_t>(),
                            j["sync_rounds_used"].get<std::int64_t>(), j["estimator"].get<std::string>());
    for (const auto& [stream, n] : j["rows"].items())
        text += fmt::format("  {:<11} {} rows\n", stream, n.get<std::int64_t>());
    print(ctx, j, text);
    return 0;
}

int session_export(Context& ctx)
{
    const auto id = require_id(ctx);
    const fs::path out = ctx.out_dir.empty() ? fs::path(".") : fs::path(ctx.out_dir);
    fs::path written;
    if (offline(ctx.settings)) {
        const auto st = open_existing_store(ctx.settings);
        written = st->export_csv(id, out);
    } else {
        const auto j = ApiClient(get(ctx.settings, "hub.url")).get("/sessions/" + std::to_string(id) + "/export");
        written = store::write_bundle(hub::bundle_from_json(j), out, std::to_string(id));
    }
    print(ctx, ordered_json{{"session_id", id}, {"dir", written.string()}}, "exported " + written.string() + "\n");
    return 0;
}

int demo_usecase(Context& ctx)
{
    const auto& s = ctx.settings;
    DemoOptions o;
    o.out_dir = ctx.out_dir.empty() ? fs::path("demo-out") : fs::path(ctx.out_dir);
    if (from_user(s, "store"))
        o.store_path = get(s, "store");
    o.virtual_time = get_bool(s, "demo.virtual");
    o.time_scale = from_user(s, "time_scale") ? time_scale(s) : 10.0;
    o.protocol = protocol_setting(s);
    o.hr.dropout_prob = parse_dropout(get(s, "hr.dropout"));
    o.seed = static_cast<std::uint64_t>(get_int(s, "device.seed"));
    o.watch_offset_ns = get_int(s, "demo.watch_offset_ns");
    o.latency_mean_ms = get_double(s, "device.latency_mean_ms");
    o.latency_jitter_ms = get_double(s, "device.latency_jitter_ms");
    if (o.latency_mean_ms < 0 || o.latency_jitter_ms < 0)
        throw UsageError("latency mean and jitter must not be negative");
    o.hub = hub_config(s);
    o.host = get(s, "hub.host");
    o.device_port = port_setting(s, "hub.device_port");
    o.http_port = port_setting(s, "hub.http_port");
    if (!ctx.title.empty())
        o.title = ctx.title;
    o.progress = [&ctx](const std::string& m) { ctx.err << m << "\n"; };

    const auto r = run_usecase(o);
    const double expected = sim::expected_zero_fraction(o.protocol, o.hr);
    ordered_json counts = ordered_json::object();
    for (std::size_t i = 0; i < r.counters.size(); ++i)
        counts[std::string(store::to_string(store::kAllStreams[i]))] = r.counters[i].stored;
    ordered_json j{{"session_id", r.session_id},
                   {"store", r.store_path.string()},
                   {"export_dir", r.export_dir.string()},
                   {"report_dir", r.report_dir.string()},
                   {"rows", counts},
                   {"expected_zero_fraction", expected},
                   {"watch_stayed_synced", r.watch_stayed_synced},
                   {"wall_seconds", r.wall_seconds},
                   {"agreement", agreement_json(r.agreement)},
                   {"sync", sync_json(r.sync)}};
    std::string text = fmt::format("session {} in {:.1f} s\nexport: {}\nreport: {}\n", r.session_id, r.wall_seconds,
                                   r.export_dir.string(), r.report_dir.string());
    text += agreement_text(r.agreement);
    text += fmt::format("configured watch dropout (time-weighted) {:.3f}\n", expected);
    text += sync_text(r.sync);
    print(ctx, j, text);
    return 0;
}

int analyze_sync_error(Context& ctx)
{
    const auto id = require_id(ctx);
    if (!ctx.true_offset_ns)
        throw UsageError("--true-offset-ns is required");
    const auto st = open_existing_store(ctx.settings);
    st->get_session(id);
    const auto rounds = st->sync_rounds(id);
    if (rounds.empty())
        throw UsageError("session " + std::to_string(id) + " has no sync rounds");
    const auto r = analysis::sync_error_report(rounds, ctx.true_offset_ns);
    auto j = sync_json(r);
    std::string text = sync_text(r);
    if (!ctx.out_dir.empty()) {
        const auto dir = store::write_bundle({{"sync_error.csv", analysis::sync_error_csv(r)},
                                              {"sync_rounds.csv", analysis::sync_rounds_csv(rounds, *ctx.true_offset_ns)}},
                                             ctx.out_dir, std::to_string(id) + "-sync");
        j["dir"] = dir.string();
        text += "wrote " + dir.string() + "\n";
    }
    print(ctx, j, text);
    return 0;
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw UsageError("cannot read " + p.string());
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int analyze_hr(Context& ctx)
{
    if (ctx.dir.empty())
        throw UsageError("--dir is required");
    const fs::path dir(ctx.dir);
    const auto protocol = protocol_setting(ctx.settings);
    const auto report = analysis::compare_export(dir, protocol);
    auto j = agreement_json(report);
    std::string text = agreement_text(report);
    if (!ctx.out_dir.empty()) {
        const auto meta = analysis::load_meta(read_file(dir / "meta.csv"));
        const auto chest = analysis::load_chest_hr(read_file(dir / "chest_hr.csv"));
        const auto watch = analysis::load_watch_hr(read_file(dir / "watch_hr.csv"));
        if (!meta.start)
            throw UsageError("session in " + dir.string() + " never started");
        const double duration = meta.duration_ms() ? *meta.duration_ms() / 1000.0 : protocol.total_duration_s();
        const auto out = store::write_bundle({{"report.csv", analysis::report_csv(report)},
                                              {"phases.csv", analysis::phases_csv(report)},
                                              {"merged.csv", analysis::merged_csv(chest, watch, meta.start->boot_ns.value,
                                                                                  duration, protocol)}},
                                             ctx.out_dir, std::to_string(meta.id) + "-report");
        j["dir"] = out.string();
        text += "wrote " + out.string() + "\n";
    }
    print(ctx, j, text);
    return 0;
}

int user_error(std::ostream& err, const std::string& what)
{
    err << "error: " << what << "\n";
    return 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& env)
{
    Context ctx(env, out, err);
    CLI::App app{"Synchronized capture of heart rate and motion from a chest strap and a watch.", "wearsync"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", ctx.config_path, "key = value settings file");
    app.add_option("--set", ctx.overrides, "override any setting, key=value (repeatable)");
    app.add_option("--format", ctx.format, "output format")->check(CLI::IsMember({"text", "json"}))->capture_default_str();
    app.add_option("--log-level", ctx.log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    app.footer("The store path can also be set with WEARSYNC_STORE. Precedence: flags, WEARSYNC_STORE, config file, defaults.");

    std::vector<std::pair<CLI::App*, std::function<int(Context&)>>> commands;

    auto* hub = app.add_subcommand("hub", "run the hub")->require_subcommand(1);
    auto* serve = hub->add_subcommand("serve", "accept devices and serve the control API until interrupted");
    bind(serve, ctx, "--store", "store");
    bind(serve, ctx, "--host", "hub.host");
    bind(serve, ctx, "--device-port", "hub.device_port");
    bind(serve, ctx, "--http-port", "hub.http_port");
    bind(serve, ctx, "--time-scale", "time_scale");
    bind_sync(serve, ctx);
    serve->add_option("--duration-s", ctx.duration_s, "stop after this many wall seconds (0: run until interrupted)");
    commands.emplace_back(serve, hub_serve);

    auto* device = app.add_subcommand("device", "run a simulated wearable")->require_subcommand(1);
    auto* drun = device->add_subcommand("run", "connect to the hub and stream until interrupted");
    bind(drun, ctx, "--kind", "device.kind");
    bind(drun, ctx, "--id", "device.id");
    bind(drun, ctx, "--offset-ns", "device.offset_ns");
    bind(drun, ctx, "--drift-ppm", "device.drift_ppm");
    bind_device_signal(drun, ctx);
    bind(drun, ctx, "--hr-rate-hz", "device.hr_rate_hz");
    bind(drun, ctx, "--acc-rate-hz", "device.acc_rate_hz");
    bind(drun, ctx, "--gyro-rate-hz", "device.gyro_rate_hz");
    bind(drun, ctx, "--max-attempts", "device.max_attempts");
    bind(drun, ctx, "--host", "hub.host");
    bind(drun, ctx, "--port", "hub.device_port");
    bind(drun, ctx, "--time-scale", "time_scale");
    drun->add_option("--duration-s", ctx.duration_s, "stop after this many wall seconds (0: run until interrupted)");
    commands.emplace_back(drun, device_run);

    auto* session = app.add_subcommand("session", "manage recording sessions")->require_subcommand(1);
    auto* sstart = session->add_subcommand("start", "create and start a session, or start an existing one with --id");
    auto* sstop = session->add_subcommand("stop", "stop a recording session");
    auto* slist = session->add_subcommand("list", "list sessions");
    auto* sshow = session->add_subcommand("show", "show one session");
    auto* sexport = session->add_subcommand("export", "write a session's CSV files to <out>/<id>");
    for (auto* sub : {sstart, sstop, slist, sshow, sexport}) {
        bind(sub, ctx, "--hub-url", "hub.url");
        if (sub != sstart && sub != sstop)
            bind(sub, ctx, "--store", "store");
    }
    for (auto* sub : {sstart, sstop, sshow, sexport})
        sub->add_option("--id", ctx.id, "session id");
    sstart->add_option("--title", ctx.title, "title of a new session");
    sstart->add_option("--description", ctx.description, "description of a new session");
    sexport->add_option("--out", ctx.out_dir, "output directory (default: current directory)");
    session->footer("list, show and export read the store directly when a store is configured and --hub-url is not given.");
    commands.emplace_back(sstart, session_start);
    commands.emplace_back(sstop, session_stop);
    commands.emplace_back(slist, session_list);
    commands.emplace_back(sshow, session_show);
    commands.emplace_back(sexport, session_export);

    auto* demo = app.add_subcommand("demo", "end-to-end scenarios")->require_subcommand(1);
    auto* usecase = demo->add_subcommand("usecase", "hub plus both devices over one activity protocol, then export and analyze");
    usecase->add_option("--out", ctx.out_dir, "output directory (default: demo-out)");
    usecase->add_option("--title", ctx.title, "session title");
    bind(usecase, ctx, "--store", "store");
    bind(usecase, ctx, "--time-scale", "time_scale");
    usecase->footer("The demo runs at 10x unless a time scale is set. Its store defaults to <out>/wearsync.db.");
    bind_switch(usecase, ctx, "--virtual", "demo.virtual");
    bind(usecase, ctx, "--watch-offset-ns", "demo.watch_offset_ns");
    bind_device_signal(usecase, ctx);
    bind(usecase, ctx, "--host", "hub.host");
    bind(usecase, ctx, "--device-port", "hub.device_port");
    bind(usecase, ctx, "--http-port", "hub.http_port");
    bind_sync(usecase, ctx);
    commands.emplace_back(usecase, demo_usecase);

    auto* analyze = app.add_subcommand("analyze", "offline analysis")->require_subcommand(1);
    auto* syncerr = analyze->add_subcommand("sync-error", "offset estimates of a session against the true offset");
    syncerr->add_option("--session", ctx.id, "session id")->required();
    syncerr->add_option("--true-offset-ns", ctx.true_offset_ns, "true watch offset, hub time minus watch time")->required();
    syncerr->add_option("--out", ctx.out_dir, "also write sync_error.csv and sync_rounds.csv to <out>/<id>-sync");
    bind(syncerr, ctx, "--store", "store");
    commands.emplace_back(syncerr, analyze_sync_error);
    auto* hr = analyze->add_subcommand("hr", "chest and watch heart-rate agreement of an exported session");
    hr->add_option("--dir", ctx.dir, "exported session directory")->required();
    hr->add_option("--out", ctx.out_dir, "also write report.csv, phases.csv and merged.csv to <out>/<id>-report");
    bind(hr, ctx, "--protocol", "protocol");
    commands.emplace_back(hr, analyze_hr);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(ctx.log_level));
        for (const auto& o : ctx.overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos)
                throw UsageError("--set expects key=value, got '" + o + "'");
            const auto key = o.substr(0, eq);
            if (!ctx.flags.count(key))
                ctx.flags[key] = o.substr(eq + 1);
        }
        const auto file = ctx.config_path.empty() ? std::map<std::string, std::string>{} : load_config_file(ctx.config_path);
        ctx.settings = resolve(file, env.store, ctx.flags);
        std::vector<std::string> keys;
        for (const auto& k : known_keys())
            keys.emplace_back(k.key);
        err << echo(ctx.settings, keys);

        for (auto& [sub, handler] : commands)
            if (sub->parsed())
                return handler(ctx);
        return user_error(err, "no command given");
    } catch (const UsageError& e) {
        return user_error(err, e.what());
    } catch (const ApiError& e) {
        return user_error(err, e.what());
    } catch (const DemoError& e) {
        return user_error(err, e.what());
    } catch (const analysis::AnalysisError& e) {
        return user_error(err, e.what());
    } catch (const hub::HubError& e) {
        return user_error(err, e.what());
    } catch (const net::NetError& e) {
        return user_error(err, e.what());
    } catch (const store::StoreError& e) {
        if (e.code() == store::StoreError::Code::Io || e.code() == store::StoreError::Code::Database) {
            err << "internal error: " << e.what() << "\n";
            return 2;
        }
        return user_error(err, e.what());
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace wearsync::cli
