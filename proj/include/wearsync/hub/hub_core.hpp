#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wearsync/clock.hpp"
#include "wearsync/store/store.hpp"
#include "wearsync/timebase.hpp"
#include "wearsync/wire.hpp"

namespace wearsync::hub {

using ConnectionId = std::uint64_t;

enum class SessionState { Idle, Ready, Recording, Stopped };
enum class LinkState { Disconnected, Connected, Synced };

std::string_view to_string(SessionState state);
std::string_view to_string(LinkState state);

struct SyncConfig {
    int rounds = 10;
    std::int64_t spacing_ns = 100 * kNanosPerMilli;
    Estimator estimator = Estimator::Corrected;
    bool min_rtt_filter = false;
    int min_rounds = 3;
    std::int64_t pong_timeout_ns = kNanosPerSecond;  // measured from the last ping
    std::int64_t retry_delay_ns = 2 * kNanosPerSecond;
};

struct HubConfig {
    SyncConfig sync;
    std::int64_t keepalive_period_ns = kNanosPerSecond;
    int keepalive_misses = 3;
    std::int64_t grace_ns = 2 * kNanosPerSecond;
    // Extra key/value pairs written into each session's config_text.
    std::vector<std::pair<std::string, std::string>> metadata;
};

struct DeviceStatus {
    LinkState link = LinkState::Disconnected;
    std::string device_id;
    std::optional<std::int64_t> latest_bpm;
    bool low_quality = false;  // watch reported 0 bpm: poor PPG signal, not a link failure
    std::optional<std::int64_t> sync_rounds_used;
    std::string sync_error;
};

struct LiveStatus {
    SessionState state = SessionState::Idle;
    std::optional<store::SessionId> session_id;
    DeviceStatus chest;
    DeviceStatus watch;
    std::int64_t elapsed_ms = 0;
};

struct StreamCounters {
    std::int64_t received = 0;
    std::int64_t stored = 0;
    std::int64_t rejected = 0;  // bad or non-monotonic items
    std::int64_t dropped = 0;   // arrived outside the recording window
};

class Outbox {
public:
    virtual ~Outbox() = default;
    virtual void send(ConnectionId connection, const wire::WireMessage& message) = 0;
    virtual void close(ConnectionId connection) = 0;
};

class HubError : public std::runtime_error {
public:
    enum class Code { NotReady, UnknownSession, InvalidState };

    HubError(Code code, const std::string& what)
        : std::runtime_error(what)
        , code_(code)
    {
    }
    Code code() const { return code_; }

private:
    Code code_;
};

// Owns device registration, the sync handshake, the session lifecycle and
// ingestion. Not thread-safe: callers serialize every call (the TCP server does
// so through a single actor thread; the virtual lab is single-threaded).
//
// Timestamps passed in are hub boot time at which the event was observed
// (decode completion for messages).
class HubCore {
public:
    HubCore(HubConfig config, const Clock& clock, store::Store& store, Outbox& outbox);

    void on_connect(ConnectionId connection, BootNanos now);
    void on_message(ConnectionId connection, const wire::WireMessage& message, BootNanos received_at);
    void on_decode_error(ConnectionId connection, wire::DecodeError error, BootNanos now);
    void on_disconnect(ConnectionId connection, BootNanos now);

    // Runs timers: sync pings, sync completion, keepalive timeouts, grace window.
    void tick(BootNanos now);
    std::optional<BootNanos> next_timer() const;

    store::SessionId create_session(const std::string& title, const std::string& description);
    void start_session(store::SessionId id);
    store::SessionId start_session(const std::string& title, const std::string& description);
    store::SessionMeta stop_session(store::SessionId id);

    LiveStatus live_status() const;
    SessionState state() const;
    const StreamCounters& counters(store::Stream stream) const;
    std::optional<OffsetEstimate> watch_estimate() const { return watch_estimate_; }
    // The estimate frozen into the current (or last) session.
    std::optional<OffsetEstimate> session_estimate() const;
    bool session_finalized() const { return session_ && session_->finalized; }
    std::int64_t discarded_pongs() const { return discarded_pongs_; }
    const HubConfig& config() const { return config_; }

    std::string config_text() const;

private:
    struct Connection {
        std::optional<wire::DeviceDescriptor> device;
        BootNanos last_heard;
    };

    struct SyncRun {
        ConnectionId connection = 0;
        int next_seq = 0;
        BootNanos next_ping_at;
        BootNanos deadline;  // valid once every ping has been sent
        std::map<std::int64_t, std::int64_t> outstanding;  // seq -> t1
        std::vector<SyncRound> rounds;
    };

    struct Session {
        store::SessionId id = 0;
        SessionState state = SessionState::Ready;
        std::optional<TimeAnchor> start;
        std::optional<TimeAnchor> end;
        std::optional<OffsetEstimate> estimate;
        BootNanos grace_until;
        bool finalized = false;
    };

    void handle_hello(ConnectionId id, Connection& conn, const wire::Hello& hello, BootNanos now);
    void handle_pong(ConnectionId id, const wire::SyncPong& pong, BootNanos now);
    void ingest(ConnectionId id, const wire::DeviceDescriptor& device, const wire::Samples& samples, BootNanos now);
    void refuse(ConnectionId id, const std::string& code, const std::string& detail);
    void drop_connection(ConnectionId id);
    void start_sync(ConnectionId id, BootNanos now);
    void run_sync(BootNanos now);
    void finish_sync(BootNanos now);
    void finalize_session();
    bool recording_window_open(store::SessionId id, BootNanos now) const;
    DeviceStatus& status_for(wire::DeviceKind kind);
    std::optional<ConnectionId>& slot_for(wire::DeviceKind kind);

    HubConfig config_;
    const Clock& clock_;
    store::Store& store_;
    Outbox& outbox_;

    std::map<ConnectionId, Connection> connections_;
    std::optional<ConnectionId> chest_;
    std::optional<ConnectionId> watch_;
    DeviceStatus chest_status_;
    DeviceStatus watch_status_;
    std::optional<SyncRun> sync_;
    std::optional<BootNanos> sync_retry_at_;
    std::optional<OffsetEstimate> watch_estimate_;
    std::optional<Session> session_;
    std::array<StreamCounters, 5> counters_{};
    std::int64_t discarded_pongs_ = 0;
};

}  // namespace wearsync::hub
