#include "wearsync/hub/hub_core.hpp"

#include <algorithm>
#include <sstream>

#include <spdlog/spdlog.h>

namespace wearsync::hub {
namespace {

std::size_t slot(store::Stream stream)
{
    return static_cast<std::size_t>(stream);
}

std::string streams_text(const wire::DeviceDescriptor& device)
{
    std::ostringstream out;
    for (std::size_t i = 0; i < device.streams.size(); ++i) {
        const auto& s = device.streams[i];
        if (i > 0)
            out << '|';
        out << wire::to_string(s.stream) << '@' << s.rate_hz << ':' << wire::to_string(s.timebase);
    }
    return out.str();
}

}  // namespace

std::string_view to_string(SessionState state)
{
    switch (state) {
    case SessionState::Idle:
        return "idle";
    case SessionState::Ready:
        return "ready";
    case SessionState::Recording:
        return "recording";
    case SessionState::Stopped:
        return "stopped";
    }
    return "idle";
}

std::string_view to_string(LinkState state)
{
    switch (state) {
    case LinkState::Disconnected:
        return "disconnected";
    case LinkState::Connected:
        return "connected";
    case LinkState::Synced:
        return "synced";
    }
    return "disconnected";
}

HubCore::HubCore(HubConfig config, const Clock& clock, store::Store& store, Outbox& outbox)
    : config_(std::move(config))
    , clock_(clock)
    , store_(store)
    , outbox_(outbox)
{
    if (config_.sync.rounds < 1 || config_.sync.min_rounds < 1)
        throw std::invalid_argument("sync rounds must be positive");
}

DeviceStatus& HubCore::status_for(wire::DeviceKind kind)
{
    return kind == wire::DeviceKind::ChestStrap ? chest_status_ : watch_status_;
}

std::optional<ConnectionId>& HubCore::slot_for(wire::DeviceKind kind)
{
    return kind == wire::DeviceKind::ChestStrap ? chest_ : watch_;
}

void HubCore::on_connect(ConnectionId connection, BootNanos now)
{
    connections_[connection] = Connection{std::nullopt, now};
}

void HubCore::refuse(ConnectionId id, const std::string& code, const std::string& detail)
{
    spdlog::warn("refusing connection {}: {} ({})", id, code, detail);
    outbox_.send(id, wire::Error{code, detail});
    drop_connection(id);
}

void HubCore::drop_connection(ConnectionId id)
{
    auto it = connections_.find(id);
    if (it == connections_.end())
        return;
    if (it->second.device) {
        const auto kind = it->second.device->kind;
        auto& registered = slot_for(kind);
        if (registered == id) {
            registered.reset();
            DeviceStatus& status = status_for(kind);
            status.link = LinkState::Disconnected;
            if (kind == wire::DeviceKind::Watch) {
                // rounds interrupted by a disconnect are discarded
                sync_.reset();
                sync_retry_at_.reset();
            }
        }
    }
    connections_.erase(it);
    outbox_.close(id);
}

void HubCore::on_disconnect(ConnectionId connection, BootNanos)
{
    drop_connection(connection);
}

void HubCore::on_decode_error(ConnectionId connection, wire::DecodeError error, BootNanos)
{
    if (!connections_.count(connection))
        return;
    // A bad length prefix leaves the stream unreadable; other errors only spoil one frame.
    if (error == wire::DecodeError::MalformedLength) {
        refuse(connection, "protocol_error", std::string(wire::to_string(error)));
        return;
    }
    spdlog::warn("connection {}: dropped frame ({})", connection, wire::to_string(error));
    outbox_.send(connection, wire::Error{"protocol_error", std::string(wire::to_string(error))});
}

void HubCore::on_message(ConnectionId id, const wire::WireMessage& message, BootNanos received_at)
{
    auto it = connections_.find(id);
    if (it == connections_.end())
        return;
    Connection& conn = it->second;
    conn.last_heard = received_at;

    if (const auto* hello = std::get_if<wire::Hello>(&message)) {
        if (conn.device) {
            refuse(id, "duplicate_hello", "connection already registered");
            return;
        }
        handle_hello(id, conn, *hello, received_at);
        return;
    }
    if (!conn.device) {
        refuse(id, "expected_hello", "first message must be hello, got " + std::string(wire::type_name(message)));
        return;
    }

    if (std::holds_alternative<wire::Keepalive>(message)) {
        outbox_.send(id, wire::KeepaliveAck{});
    } else if (const auto* pong = std::get_if<wire::SyncPong>(&message)) {
        handle_pong(id, *pong, received_at);
    } else if (const auto* samples = std::get_if<wire::Samples>(&message)) {
        ingest(id, *conn.device, *samples, received_at);
    } else if (const auto* error = std::get_if<wire::Error>(&message)) {
        spdlog::warn("device {} reported {}: {}", conn.device->device_id, error->code, error->detail);
    } else if (!std::holds_alternative<wire::KeepaliveAck>(message)) {
        outbox_.send(id, wire::Error{"unexpected_message", std::string(wire::type_name(message))});
    }
}

void HubCore::handle_hello(ConnectionId id, Connection& conn, const wire::Hello& hello, BootNanos now)
{
    if (hello.protocol_version != wire::kProtocolVersion) {
        refuse(id, "version_mismatch",
               "protocol_version " + std::to_string(hello.protocol_version) + " is not supported (expected "
                   + std::to_string(wire::kProtocolVersion) + ")");
        return;
    }
    if (auto problem = wire::validate_descriptor(hello.device)) {
        refuse(id, "invalid_descriptor", *problem);
        return;
    }
    const auto kind = hello.device.kind;
    auto& registered = slot_for(kind);
    if (registered) {
        refuse(id, "duplicate_kind", "a " + std::string(wire::to_string(kind)) + " is already connected");
        return;
    }

    conn.device = hello.device;
    registered = id;
    DeviceStatus& status = status_for(kind);
    status = DeviceStatus{};
    status.device_id = hello.device.device_id;
    status.link = LinkState::Connected;

    const TimeAnchor anchor = clock_.anchor_now();
    outbox_.send(id, wire::HelloAck{hello.device.device_id, anchor.boot_ns.value, anchor.unix_ms.value});
    spdlog::info("{} '{}' connected", wire::to_string(kind), hello.device.device_id);

    if (kind == wire::DeviceKind::ChestStrap) {
        // epoch-2000 stamps convert by a constant; nothing to measure
        status.link = LinkState::Synced;
        if (session_ && session_->state == SessionState::Recording)
            outbox_.send(id, wire::StartCapture{session_->id});
    } else {
        start_sync(id, now);
    }
}

void HubCore::start_sync(ConnectionId id, BootNanos now)
{
    SyncRun run;
    run.connection = id;
    run.next_ping_at = now;
    sync_ = std::move(run);
    sync_retry_at_.reset();
    run_sync(now);
}

void HubCore::run_sync(BootNanos now)
{
    if (!sync_)
        return;
    SyncRun& run = *sync_;
    while (run.next_seq < config_.sync.rounds && now >= run.next_ping_at) {
        // t1 is the hub clock when the ping leaves
        const std::int64_t t1 = std::max(now.value, run.next_ping_at.value);
        run.outstanding[run.next_seq] = t1;
        outbox_.send(run.connection, wire::SyncPing{run.next_seq, t1});
        ++run.next_seq;
        run.next_ping_at = BootNanos{run.next_ping_at.value + config_.sync.spacing_ns};
        if (run.next_seq == config_.sync.rounds)
            run.deadline = BootNanos{t1 + config_.sync.pong_timeout_ns};
    }
    if (run.next_seq == config_.sync.rounds && (run.outstanding.empty() || now >= run.deadline))
        finish_sync(now);
}

void HubCore::handle_pong(ConnectionId id, const wire::SyncPong& pong, BootNanos now)
{
    if (!sync_ || sync_->connection != id) {
        ++discarded_pongs_;
        return;
    }
    auto it = sync_->outstanding.find(pong.seq);
    if (it == sync_->outstanding.end() || it->second != pong.t1_ns) {
        ++discarded_pongs_;
        return;
    }
    sync_->rounds.push_back(SyncRound{pong.seq, BootNanos{pong.t1_ns}, BootNanos{pong.t2_ns}, now});
    sync_->outstanding.erase(it);
    run_sync(now);
}

void HubCore::finish_sync(BootNanos now)
{
    SyncRun run = std::move(*sync_);
    sync_.reset();
    DeviceStatus& status = watch_status_;
    std::sort(run.rounds.begin(), run.rounds.end(),
              [](const SyncRound& a, const SyncRound& b) { return a.seq < b.seq; });

    if (static_cast<int>(run.rounds.size()) < config_.sync.min_rounds) {
        status.sync_error = "sync failed: " + std::to_string(run.rounds.size()) + " of "
            + std::to_string(config_.sync.rounds) + " rounds answered (need "
            + std::to_string(config_.sync.min_rounds) + ")";
        sync_retry_at_ = BootNanos{now.value + config_.sync.retry_delay_ns};
        spdlog::warn("{}", status.sync_error);
        return;
    }

    watch_estimate_ = aggregate_offset(run.rounds, config_.sync.estimator,
                                       AggregateOptions{config_.sync.min_rtt_filter});
    status.link = LinkState::Synced;
    status.sync_error.clear();
    status.sync_rounds_used = static_cast<std::int64_t>(watch_estimate_->rounds.size());
    spdlog::info("watch synced: offset {} ns over {} rounds", watch_estimate_->mean_offset_ns,
                 watch_estimate_->rounds.size());

    if (session_ && session_->state == SessionState::Recording)
        outbox_.send(run.connection, wire::StartCapture{session_->id});
}

bool HubCore::recording_window_open(store::SessionId id, BootNanos now) const
{
    if (!session_ || session_->id != id || session_->finalized)
        return false;
    if (session_->state == SessionState::Recording)
        return true;
    return session_->state == SessionState::Stopped && now <= session_->grace_until;
}

void HubCore::ingest(ConnectionId id, const wire::DeviceDescriptor& device, const wire::Samples& samples,
                     BootNanos now)
{
    const auto stream = store::stream_for(device.kind, samples.stream);
    if (!stream) {
        outbox_.send(id, wire::Error{"unknown_stream", std::string(wire::to_string(samples.stream))
                                                           + " is not a stream of " + std::string(wire::to_string(device.kind))});
        return;
    }
    StreamCounters& counter = counters_[slot(*stream)];
    const auto n = static_cast<std::int64_t>(samples.size());
    counter.received += n;

    if (samples.stream == wire::StreamKind::Hr && !samples.hr.empty()) {
        DeviceStatus& status = status_for(device.kind);
        status.latest_bpm = samples.hr.back().bpm;
        status.low_quality = device.kind == wire::DeviceKind::Watch && samples.hr.back().bpm == 0;
    }

    if (!recording_window_open(samples.session_id, now)) {
        if (counter.dropped == 0)
            spdlog::warn("{} samples outside the recording window are dropped", store::to_string(*stream));
        counter.dropped += n;
        return;
    }

    const store::SessionId sid = session_->id;
    const TimeAnchor& start = *session_->start;
    const std::int64_t offset = session_->estimate->mean_offset_ns;

    auto store_row = [&](auto&& append) {
        try {
            append();
            ++counter.stored;
        } catch (const store::StoreError& e) {
            ++counter.rejected;
            spdlog::debug("rejected {} row: {}", store::to_string(*stream), e.what());
        } catch (const TimebaseError& e) {
            ++counter.rejected;
            spdlog::debug("rejected {} row: {}", store::to_string(*stream), e.what());
        }
    };

    switch (*stream) {
    case store::Stream::ChestHr:
        for (const auto& item : samples.hr)
            store_row([&] { store_.append(sid, store::ChestHrRow{now, boot_to_unix_ms(now, start), item.bpm}); });
        break;
    case store::Stream::ChestAcc:
        for (const auto& item : samples.motion)
            store_row([&] {
                const Epoch2000Nanos ts{item.ts_ns};
                store_.append(sid, store::ChestAccRow{ts, epoch2000_to_unix_ns(ts), item.x, item.y, item.z});
            });
        break;
    case store::Stream::WatchHr:
        for (const auto& item : samples.hr) {
            if (!item.ts_ns) {
                ++counter.rejected;
                continue;
            }
            store_row([&] {
                const BootNanos ts{*item.ts_ns};
                store_.append(sid, store::WatchHrRow{ts, rebase(ts, offset), item.bpm});
            });
        }
        break;
    case store::Stream::WatchAcc:
    case store::Stream::WatchGyro:
        for (const auto& item : samples.motion)
            store_row([&] {
                const BootNanos ts{item.ts_ns};
                store_.append(sid, *stream, store::WatchMotionRow{ts, rebase(ts, offset), item.x, item.y, item.z});
            });
        break;
    }
    store_.flush();
}

void HubCore::tick(BootNanos now)
{
    if (sync_)
        run_sync(now);
    else if (sync_retry_at_ && now >= *sync_retry_at_ && watch_)
        start_sync(*watch_, now);

    const std::int64_t timeout = config_.keepalive_period_ns * config_.keepalive_misses;
    std::vector<ConnectionId> stale;
    for (const auto& [id, conn] : connections_)
        if (now.value - conn.last_heard.value > timeout)
            stale.push_back(id);
    for (ConnectionId id : stale) {
        spdlog::warn("connection {} timed out", id);
        drop_connection(id);
    }

    if (session_ && session_->state == SessionState::Stopped && !session_->finalized && now > session_->grace_until)
        finalize_session();
}

std::optional<BootNanos> HubCore::next_timer() const
{
    std::optional<BootNanos> next;
    auto consider = [&](BootNanos t) {
        if (!next || t < *next)
            next = t;
    };
    if (sync_) {
        if (sync_->next_seq < config_.sync.rounds)
            consider(sync_->next_ping_at);
        else
            consider(sync_->deadline);
    } else if (sync_retry_at_ && watch_) {
        consider(*sync_retry_at_);
    }
    const std::int64_t timeout = config_.keepalive_period_ns * config_.keepalive_misses;
    for (const auto& [id, conn] : connections_)
        consider(BootNanos{conn.last_heard.value + timeout + 1});
    if (session_ && session_->state == SessionState::Stopped && !session_->finalized)
        consider(BootNanos{session_->grace_until.value + 1});
    return next;
}

void HubCore::finalize_session()
{
    store_.finalize(session_->id, *session_->end);
    session_->finalized = true;
    spdlog::info("session {} finalized", session_->id);
}

std::string HubCore::config_text() const
{
    std::vector<std::pair<std::string, std::string>> kv{
        {"sync.estimator", std::string(to_string(config_.sync.estimator))},
        {"sync.rounds", std::to_string(config_.sync.rounds)},
        {"sync.spacing_ms", std::to_string(config_.sync.spacing_ns / kNanosPerMilli)},
        {"sync.min_rounds", std::to_string(config_.sync.min_rounds)},
        {"sync.min_rtt_filter", config_.sync.min_rtt_filter ? "1" : "0"},
        {"keepalive_ms", std::to_string(config_.keepalive_period_ns / kNanosPerMilli)},
        {"grace_ms", std::to_string(config_.grace_ns / kNanosPerMilli)},
        {"chest_hr.stamp", "hub_decode_completion"},
        {"units.acc", "m/s^2"},
        {"units.gyro", "deg/s"},
    };
    for (auto kind : {wire::DeviceKind::ChestStrap, wire::DeviceKind::Watch}) {
        const auto& registered = kind == wire::DeviceKind::ChestStrap ? chest_ : watch_;
        if (!registered)
            continue;
        const auto& device = *connections_.at(*registered).device;
        const std::string prefix(wire::to_string(kind));
        kv.emplace_back(prefix + ".device_id", device.device_id);
        kv.emplace_back(prefix + ".streams", streams_text(device));
    }
    for (const auto& entry : config_.metadata)
        kv.push_back(entry);

    std::string text;
    for (std::size_t i = 0; i < kv.size(); ++i) {
        if (i > 0)
            text += ';';
        text += kv[i].first + '=' + kv[i].second;
    }
    return text;
}

store::SessionId HubCore::create_session(const std::string& title, const std::string& description)
{
    if (session_ && (session_->state == SessionState::Ready || session_->state == SessionState::Recording))
        throw HubError(HubError::Code::InvalidState,
                       "session " + std::to_string(session_->id) + " is already " + std::string(to_string(session_->state)));
    if (session_ && !session_->finalized)
        finalize_session();

    const store::SessionId id = store_.create_session(title, description, clock_.unix_now());
    session_ = Session{};
    session_->id = id;
    session_->state = SessionState::Ready;
    return id;
}

void HubCore::start_session(store::SessionId id)
{
    if (!session_ || session_->id != id) {
        throw HubError(HubError::Code::UnknownSession, "session " + std::to_string(id) + " is not the pending session");
    }
    if (session_->state != SessionState::Ready)
        throw HubError(HubError::Code::InvalidState,
                       "session " + std::to_string(id) + " is " + std::string(to_string(session_->state)));

    std::vector<std::string> missing;
    if (chest_status_.link != LinkState::Synced)
        missing.push_back("chest_strap is " + std::string(to_string(chest_status_.link)));
    if (watch_status_.link != LinkState::Synced || !watch_estimate_)
        missing.push_back("watch is " + std::string(to_string(watch_status_.link))
                          + (watch_status_.sync_error.empty() ? "" : " (" + watch_status_.sync_error + ")"));
    if (!missing.empty()) {
        std::string message = "cannot start recording: ";
        for (std::size_t i = 0; i < missing.size(); ++i)
            message += (i ? "; " : "") + missing[i];
        throw HubError(HubError::Code::NotReady, message);
    }

    const TimeAnchor anchor = clock_.anchor_now();
    store_.begin_recording(id, anchor, *watch_estimate_, config_text());
    session_->start = anchor;
    session_->estimate = watch_estimate_;
    session_->state = SessionState::Recording;
    for (ConnectionId c : {*chest_, *watch_})
        outbox_.send(c, wire::StartCapture{id});
    spdlog::info("session {} recording", id);
}

store::SessionId HubCore::start_session(const std::string& title, const std::string& description)
{
    const auto id = create_session(title, description);
    start_session(id);
    return id;
}

store::SessionMeta HubCore::stop_session(store::SessionId id)
{
    if (!session_ || session_->id != id)
        throw HubError(HubError::Code::UnknownSession, "session " + std::to_string(id) + " is not the active session");
    if (session_->state != SessionState::Recording)
        throw HubError(HubError::Code::InvalidState,
                       "session " + std::to_string(id) + " is " + std::string(to_string(session_->state)));

    for (auto registered : {chest_, watch_})
        if (registered)
            outbox_.send(*registered, wire::StopCapture{id});
    const TimeAnchor end = clock_.anchor_now();
    session_->end = end;
    session_->state = SessionState::Stopped;
    session_->grace_until = BootNanos{end.boot_ns.value + config_.grace_ns};
    store_.flush();

    store::SessionMeta meta = store_.get_session(id);
    meta.end = end;
    meta.status = store::SessionStatus::Stopped;
    spdlog::info("session {} stopped", id);
    return meta;
}

SessionState HubCore::state() const
{
    return session_ ? session_->state : SessionState::Idle;
}

std::optional<OffsetEstimate> HubCore::session_estimate() const
{
    if (!session_)
        return std::nullopt;
    return session_->estimate;
}

LiveStatus HubCore::live_status() const
{
    LiveStatus status;
    status.state = state();
    status.chest = chest_status_;
    status.watch = watch_status_;
    if (session_) {
        status.session_id = session_->id;
        if (session_->start) {
            const std::int64_t until
                = session_->end ? session_->end->boot_ns.value : std::max(clock_.boot_now().value, session_->start->boot_ns.value);
            status.elapsed_ms = (until - session_->start->boot_ns.value) / kNanosPerMilli;
        }
    }
    return status;
}

const StreamCounters& HubCore::counters(store::Stream stream) const
{
    return counters_[slot(stream)];
}

}  // namespace wearsync::hub
