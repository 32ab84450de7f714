#pragma once

// Layered key=value settings: built-in defaults, then a config file, then the
// WEARSYNC_STORE environment variable (store path only), then command-line flags.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wearsync/hub/hub_core.hpp"
#include "wearsync/sim/device.hpp"
#include "wearsync/sim/latency.hpp"

namespace wearsync::cli {

// Bad flags, bad config values, unknown sessions: exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Source { Default, File, Env, Flag };
std::string_view to_string(Source source);

struct Setting {
    std::string value;
    Source source = Source::Default;
};

using Settings = std::map<std::string, Setting>;

struct KeyInfo {
    std::string_view key;
    std::string_view default_value;
    std::string_view help;
};

// Every key the CLI understands, with its default.
const std::vector<KeyInfo>& known_keys();
const KeyInfo* find_key(std::string_view key);

// "key = value" lines; '#' starts a comment line. Throws UsageError naming the line.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

Settings resolve(const std::map<std::string, std::string>& file, const std::optional<std::string>& env_store,
                 const std::map<std::string, std::string>& flags);

// Typed accessors; throw UsageError on malformed values.
std::string get(const Settings& s, std::string_view key);
std::int64_t get_int(const Settings& s, std::string_view key);
double get_double(const Settings& s, std::string_view key);
bool get_bool(const Settings& s, std::string_view key);
bool from_user(const Settings& s, std::string_view key);

hub::HubConfig hub_config(const Settings& s);
sim::ActivityProtocol protocol_setting(const Settings& s);
// "rest:0.02,walk:0.1,run:0.3"
std::array<double, 3> parse_dropout(std::string_view text);
sim::DeviceConfig device_config(const Settings& s);
sim::LinkLatency device_latency(const Settings& s);

// "key=value (source)" lines for the given keys.
std::string echo(const Settings& s, const std::vector<std::string>& keys);

}  // namespace wearsync::cli
