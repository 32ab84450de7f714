#include "wearsync/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wearsync/analysis/analysis.hpp"

namespace wearsync::cli {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(Source source)
{
    switch (source) {
    case Source::Default:
        return "default";
    case Source::File:
        return "config";
    case Source::Env:
        return "env";
    case Source::Flag:
        return "flag";
    }
    return "?";
}

const std::vector<KeyInfo>& known_keys()
{
    static const std::vector<KeyInfo> keys{
        {"store", "wearsync.db", "SQLite store path (WEARSYNC_STORE overrides the config file)"},
        {"hub.host", "127.0.0.1", "address the hub binds and devices connect to"},
        {"hub.device_port", "7007", "device TCP port (0 picks a free port)"},
        {"hub.http_port", "7008", "control API port (0 picks a free port)"},
        {"hub.url", "http://127.0.0.1:7008", "control API used by session commands"},
        {"time_scale", "1", "simulated seconds per wall second"},
        {"sync.rounds", "10", "ping/pong rounds per handshake"},
        {"sync.spacing_ms", "100", "spacing between pings"},
        {"sync.estimator", "corrected", "corrected or minus_half_rtt"},
        {"sync.min_rounds", "3", "answered rounds needed for a valid estimate"},
        {"sync.min_rtt_filter", "false", "keep only rounds within 1.5x the minimum RTT"},
        {"keepalive_ms", "1000", "keepalive period; three misses mark a link disconnected"},
        {"grace_ms", "2000", "window after stop in which in-flight samples are kept"},
        {"device.kind", "watch", "chest_strap or watch"},
        {"device.id", "", "device id (defaults to chest-1 or watch-1)"},
        {"device.seed", "1", "signal and latency seed"},
        {"device.offset_ns", "0", "true clock offset, hub time minus device time"},
        {"device.drift_ppm", "0", "device clock drift"},
        {"device.latency_mean_ms", "5", "one-way latency mean, both directions"},
        {"device.latency_jitter_ms", "1", "one-way latency standard deviation"},
        {"device.hr_rate_hz", "1", "heart-rate rate"},
        {"device.acc_rate_hz", "", "accelerometer rate (200 chest, 50 watch)"},
        {"device.gyro_rate_hz", "50", "gyroscope rate (watch)"},
        {"device.max_attempts", "10", "connection attempts before giving up"},
        {"protocol", "rest:30,run:120,walk:120,run:120,walk:120", "activity phases, label:seconds"},
        {"hr.dropout", "rest:0.02,walk:0.1,run:0.3", "watch zero-bpm probability per phase"},
        {"demo.watch_offset_ns", "123456789", "true watch offset in the demo"},
        {"demo.virtual", "false", "run the demo on virtual time instead of sockets"},
    };
    return keys;
}

const KeyInfo* find_key(std::string_view key)
{
    for (const auto& k : known_keys())
        if (k.key == key)
            return &k;
    return nullptr;
}

std::map<std::string, std::string> parse_config_text(std::string_view text)
{
    std::map<std::string, std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(number) + ": expected key=value");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        if (!find_key(key))
            throw UsageError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
        out[key] = trim(std::string_view(t).substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot read config file " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return parse_config_text(s.str());
}

Settings resolve(const std::map<std::string, std::string>& file, const std::optional<std::string>& env_store,
                 const std::map<std::string, std::string>& flags)
{
    Settings s;
    for (const auto& k : known_keys())
        s[std::string(k.key)] = Setting{std::string(k.default_value), Source::Default};
    for (const auto& [k, v] : file)
        s[k] = Setting{v, Source::File};
    if (env_store && !env_store->empty())
        s["store"] = Setting{*env_store, Source::Env};
    for (const auto& [k, v] : flags) {
        if (!find_key(k))
            throw UsageError("unknown setting '" + k + "'");
        s[k] = Setting{v, Source::Flag};
    }
    return s;
}

std::string get(const Settings& s, std::string_view key)
{
    const auto it = s.find(std::string(key));
    if (it == s.end())
        throw UsageError("missing setting '" + std::string(key) + "'");
    return it->second.value;
}

bool from_user(const Settings& s, std::string_view key)
{
    const auto it = s.find(std::string(key));
    return it != s.end() && it->second.source != Source::Default;
}

std::int64_t get_int(const Settings& s, std::string_view key)
{
    const std::string v = get(s, key);
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw UsageError(std::string(key) + ": expected an integer, got '" + v + "'");
    return out;
}

double get_double(const Settings& s, std::string_view key)
{
    const std::string v = get(s, key);
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(out))
        throw UsageError(std::string(key) + ": expected a number, got '" + v + "'");
    return out;
}

bool get_bool(const Settings& s, std::string_view key)
{
    const std::string v = get(s, key);
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw UsageError(std::string(key) + ": expected true or false, got '" + v + "'");
}

namespace {

std::int64_t positive_ms(const Settings& s, std::string_view key)
{
    const auto v = get_int(s, key);
    if (v <= 0)
        throw UsageError(std::string(key) + " must be positive");
    return v * kNanosPerMilli;
}

}  // namespace

hub::HubConfig hub_config(const Settings& s)
{
    hub::HubConfig c;
    c.sync.rounds = static_cast<int>(get_int(s, "sync.rounds"));
    c.sync.min_rounds = static_cast<int>(get_int(s, "sync.min_rounds"));
    if (c.sync.rounds < 1 || c.sync.min_rounds < 1 || c.sync.min_rounds > c.sync.rounds)
        throw UsageError("sync.rounds and sync.min_rounds must satisfy 1 <= min_rounds <= rounds");
    c.sync.spacing_ns = positive_ms(s, "sync.spacing_ms");
    const auto est = parse_estimator(get(s, "sync.estimator"));
    if (!est)
        throw UsageError("sync.estimator: expected corrected or minus_half_rtt");
    c.sync.estimator = *est;
    c.sync.min_rtt_filter = get_bool(s, "sync.min_rtt_filter");
    c.keepalive_period_ns = positive_ms(s, "keepalive_ms");
    c.grace_ns = get_int(s, "grace_ms") * kNanosPerMilli;
    if (c.grace_ns < 0)
        throw UsageError("grace_ms must not be negative");
    // the hub records its own sync, keepalive and grace settings
    for (const auto& [k, v] : s)
        if (k.rfind("sync.", 0) != 0 && k != "keepalive_ms" && k != "grace_ms")
            c.metadata.emplace_back(k, v.value);
    return c;
}

sim::ActivityProtocol protocol_setting(const Settings& s)
{
    try {
        return sim::ActivityProtocol::parse(get(s, "protocol"));
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("protocol: ") + e.what());
    }
}

std::array<double, 3> parse_dropout(std::string_view text)
{
    std::array<double, 3> out = sim::HrModel{}.dropout_prob;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        const auto colon = item.find(':');
        const auto activity = colon == std::string_view::npos ? std::nullopt : sim::parse_activity(trim(item.substr(0, colon)));
        if (!activity)
            throw UsageError("hr.dropout: expected label:probability items, got '" + std::string(item) + "'");
        double p = -1;
        try {
            p = std::stod(trim(item.substr(colon + 1)));
        } catch (const std::exception&) {
        }
        if (!(p >= 0.0 && p <= 1.0))
            throw UsageError("hr.dropout: probability must be within [0, 1]");
        out[static_cast<std::size_t>(*activity)] = p;
        if (comma == std::string_view::npos)
            break;
        pos = comma + 1;
    }
    return out;
}

sim::DeviceConfig device_config(const Settings& s)
{
    const auto kind = wire::parse_device_kind(get(s, "device.kind"));
    if (!kind)
        throw UsageError("device.kind: expected chest_strap or watch");
    sim::DeviceConfig c(*kind, protocol_setting(s));
    if (!get(s, "device.id").empty())
        c.device_id = get(s, "device.id");
    c.seed = static_cast<std::uint64_t>(get_int(s, "device.seed"));
    c.offset_ns = get_int(s, "device.offset_ns");
    c.drift_ppm = get_double(s, "device.drift_ppm");
    c.hr_rate_hz = get_double(s, "device.hr_rate_hz");
    if (!get(s, "device.acc_rate_hz").empty())
        c.acc_rate_hz = get_double(s, "device.acc_rate_hz");
    c.gyro_rate_hz = get_double(s, "device.gyro_rate_hz");
    for (double r : {c.hr_rate_hz, c.acc_rate_hz, c.gyro_rate_hz})
        if (!(r > 0.0 && r <= 10'000.0))
            throw UsageError("sample rates must be within (0, 10000] Hz");
    c.hr.dropout_prob = parse_dropout(get(s, "hr.dropout"));
    return c;
}

sim::LinkLatency device_latency(const Settings& s)
{
    const double mean = get_double(s, "device.latency_mean_ms");
    const double jitter = get_double(s, "device.latency_jitter_ms");
    if (mean < 0 || jitter < 0)
        throw UsageError("latency mean and jitter must not be negative");
    return sim::LinkLatency::symmetric(mean, jitter, static_cast<std::uint64_t>(get_int(s, "device.seed")) * 7919 + 17);
}

std::string echo(const Settings& s, const std::vector<std::string>& keys)
{
    std::string out;
    for (const auto& k : keys) {
        const auto it = s.find(k);
        if (it == s.end())
            continue;
        out += k + "=" + it->second.value + " (" + std::string(to_string(it->second.source)) + ")\n";
    }
    return out;
}

}  // namespace wearsync::cli
