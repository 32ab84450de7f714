#pragma once

// The end-to-end use case: a chest strap and a watch record one activity
// protocol through the hub, the session is exported and compared.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "wearsync/analysis/analysis.hpp"
#include "wearsync/hub/hub_core.hpp"
#include "wearsync/sim/signals.hpp"
#include "wearsync/store/store.hpp"

namespace wearsync::cli {

class DemoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DemoOptions {
    std::filesystem::path out_dir = "demo-out";
    std::filesystem::path store_path;  // empty: <out_dir>/wearsync.db
    double time_scale = 10.0;
    // Virtual time instead of sockets and threads; finishes as fast as it computes.
    bool virtual_time = false;
    sim::ActivityProtocol protocol = analysis::default_protocol();
    sim::HrModel hr;
    std::uint64_t seed = 1;
    std::int64_t watch_offset_ns = 123'456'789;
    double latency_mean_ms = 5.0;
    double latency_jitter_ms = 1.0;
    hub::HubConfig hub;
    std::string host = "127.0.0.1";
    std::uint16_t device_port = 0;
    std::uint16_t http_port = 0;
    std::string title = "use case";
    std::function<void(const std::string&)> progress;
};

struct DemoResult {
    store::SessionId session_id = 0;
    std::filesystem::path store_path;
    std::filesystem::path export_dir;
    std::filesystem::path report_dir;
    analysis::AgreementReport agreement;
    analysis::SyncErrorReport sync;
    // Hub counters per stream, in store::kAllStreams order.
    std::array<hub::StreamCounters, 5> counters{};
    // Whether the watch link was Synced at every check during recording.
    bool watch_stayed_synced = true;
    double wall_seconds = 0.0;
};

// Throws DemoError when a device gives up, sync never completes or the hub refuses a request.
DemoResult run_usecase(const DemoOptions& options);

}  // namespace wearsync::cli
