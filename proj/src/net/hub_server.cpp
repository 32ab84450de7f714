#include "wearsync/net/hub_server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <chrono>

#include "wearsync/hub/json_views.hpp"

namespace wearsync::net {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::int64_t kReadPollNs = 50 * kNanosPerMilli;
constexpr auto kActorIdle = std::chrono::milliseconds(1);

void reply(httplib::Response& res, int status, const ordered_json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& detail)
{
    reply(res, status, ordered_json{{"error", code}, {"detail", detail}});
}

// Maps hub and store failures onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& f)
{
    try {
        f();
    } catch (const hub::HubError& e) {
        switch (e.code()) {
        case hub::HubError::Code::UnknownSession:
            return reply_error(res, 404, "unknown_session", e.what());
        case hub::HubError::Code::NotReady:
            return reply_error(res, 409, "not_ready", e.what());
        case hub::HubError::Code::InvalidState:
            return reply_error(res, 409, "invalid_state", e.what());
        }
    } catch (const store::StoreError& e) {
        switch (e.code()) {
        case store::StoreError::Code::UnknownSession:
            return reply_error(res, 404, "unknown_session", e.what());
        case store::StoreError::Code::NotStopped:
        case store::StoreError::Code::InvalidState:
        case store::StoreError::Code::ClosedSession:
            return reply_error(res, 409, "invalid_state", e.what());
        default:
            return reply_error(res, 500, "store_error", e.what());
        }
    } catch (const NetError& e) {
        return reply_error(res, 503, "unavailable", e.what());
    } catch (const std::exception& e) {
        return reply_error(res, 500, "internal_error", e.what());
    }
}

store::SessionId path_id(const httplib::Request& req)
{
    return std::stoll(req.matches[1].str());
}

}  // namespace

HubServer::HubServer(hub::HubConfig config, const Clock& clock, store::Store& store, ServerOptions options)
    : clock_(clock)
    , store_(store)
    , options_(std::move(options))
    , hub_(std::move(config), clock, store, *this)
{
}

HubServer::~HubServer()
{
    stop();
}

void HubServer::start()
{
    if (running_)
        return;
    listener_ = std::make_unique<Listener>(options_.host, options_.device_port);
    device_port_ = listener_->port();

    http_ = std::make_unique<httplib::Server>();
    setup_http();
    if (options_.http_port == 0) {
        const int port = http_->bind_to_any_port(options_.host);
        if (port <= 0)
            throw NetError("cannot bind the control API on " + options_.host);
        http_port_ = static_cast<std::uint16_t>(port);
    } else {
        if (!http_->bind_to_port(options_.host, options_.http_port))
            throw NetError("cannot bind the control API on " + options_.host + ":" + std::to_string(options_.http_port));
        http_port_ = options_.http_port;
    }

    running_ = true;
    {
        std::lock_guard lock(queue_mutex_);
        accepting_tasks_ = true;
    }
    actor_ = std::thread([this] { actor_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
    http_thread_ = std::thread([this] { http_->listen_after_bind(); });
    spdlog::info("hub listening: devices on {}:{}, control API on http://{}:{}", options_.host, device_port_,
                 options_.host, http_port_);
}

void HubServer::stop()
{
    if (!running_.exchange(false))
        return;
    if (http_)
        http_->stop();
    if (http_thread_.joinable())
        http_thread_.join();
    if (acceptor_.joinable())
        acceptor_.join();
    reap_connections(true);
    {
        std::lock_guard lock(queue_mutex_);
        accepting_tasks_ = false;
    }
    queue_cv_.notify_all();
    if (actor_.joinable())
        actor_.join();
    store_.flush();
}

void HubServer::post(std::function<void()> task)
{
    {
        std::lock_guard lock(queue_mutex_);
        if (!accepting_tasks_)
            throw NetError("hub is not running");
        queue_.push_back(std::move(task));
    }
    queue_cv_.notify_one();
}

void HubServer::actor_loop()
{
    for (;;) {
        std::deque<std::function<void()>> batch;
        bool open = true;
        {
            std::unique_lock lock(queue_mutex_);
            queue_cv_.wait_for(lock, kActorIdle, [this] { return !queue_.empty() || !accepting_tasks_; });
            batch.swap(queue_);
            open = accepting_tasks_;
        }
        for (auto& task : batch) {
            try {
                task();
            } catch (const std::exception& e) {
                spdlog::error("hub task failed: {}", e.what());
            }
        }
        try {
            hub_.tick(clock_.boot_now());
        } catch (const std::exception& e) {
            spdlog::error("hub tick failed: {}", e.what());
        }
        if (!open && batch.empty())
            return;
    }
}

void HubServer::accept_loop()
{
    while (running_) {
        std::optional<Socket> sock;
        try {
            sock = listener_->accept(kReadPollNs);
        } catch (const NetError& e) {
            spdlog::error("accept failed: {}", e.what());
        }
        reap_connections(false);
        if (!sock)
            continue;
        auto shared = std::make_shared<Socket>(std::move(*sock));
        std::lock_guard lock(conn_mutex_);
        const hub::ConnectionId id = next_id_++;
        try {
            post([this, id] { hub_.on_connect(id, clock_.boot_now()); });
        } catch (const NetError&) {
            return;
        }
        auto conn = std::make_unique<Connection>();
        conn->socket = shared;
        Connection* raw = conn.get();
        conn->reader = std::thread([this, id, shared, raw] {
            read_loop(id, shared);
            raw->done = true;
        });
        connections_.emplace(id, std::move(conn));
    }
}

void HubServer::read_loop(hub::ConnectionId id, std::shared_ptr<Socket> socket)
{
    wire::FrameDecoder decoder;
    std::vector<std::uint8_t> buffer(64 * 1024);
    try {
        while (running_) {
            const auto n = socket->recv_some(buffer, kReadPollNs);
            if (!n)
                continue;
            if (*n == 0)
                break;
            decoder.feed(std::span<const std::uint8_t>(buffer.data(), *n));
            for (;;) {
                auto result = decoder.next();
                if (std::holds_alternative<wire::NeedMoreBytes>(result))
                    break;
                // Arrival stamps are taken at decode completion.
                const BootNanos at = clock_.boot_now();
                if (auto* message = std::get_if<wire::WireMessage>(&result)) {
                    post([this, id, at, m = std::move(*message)] { hub_.on_message(id, m, at); });
                } else {
                    const auto error = std::get<wire::DecodeError>(result);
                    post([this, id, at, error] { hub_.on_decode_error(id, error, at); });
                    if (decoder.failed())
                        break;
                }
            }
            if (decoder.failed())
                break;
        }
    } catch (const NetError& e) {
        spdlog::debug("connection {}: {}", id, e.what());
    }
    try {
        post([this, id] { hub_.on_disconnect(id, clock_.boot_now()); });
    } catch (const NetError&) {
    }
}

void HubServer::reap_connections(bool all)
{
    std::vector<std::unique_ptr<Connection>> finished;
    {
        std::lock_guard lock(conn_mutex_);
        for (auto it = connections_.begin(); it != connections_.end();) {
            if (all)
                it->second->socket->shutdown();
            if (all || it->second->done) {
                finished.push_back(std::move(it->second));
                it = connections_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& c : finished)
        if (c->reader.joinable())
            c->reader.join();
}

void HubServer::send(hub::ConnectionId id, const wire::WireMessage& message)
{
    std::shared_ptr<Socket> socket;
    {
        std::lock_guard lock(conn_mutex_);
        auto it = connections_.find(id);
        if (it == connections_.end())
            return;
        socket = it->second->socket;
    }
    try {
        socket->send_all(wire::encode(message));
    } catch (const std::exception& e) {
        spdlog::warn("connection {}: send failed ({})", id, e.what());
        socket->shutdown();
    }
}

void HubServer::close(hub::ConnectionId id)
{
    std::lock_guard lock(conn_mutex_);
    auto it = connections_.find(id);
    if (it != connections_.end())
        it->second->socket->shutdown();
}

void HubServer::setup_http()
{
    auto& s = *http_;
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    s.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        std::string title, description;
        try {
            const json body = req.body.empty() ? json::object() : json::parse(req.body);
            if (!body.is_object())
                return reply_error(res, 400, "bad_request", "body must be an object");
            if (body.contains("title"))
                title = body.at("title").get<std::string>();
            if (body.contains("description"))
                description = body.at("description").get<std::string>();
        } catch (const json::exception& e) {
            return reply_error(res, 400, "bad_request", e.what());
        }
        guarded(res, [&] {
            const auto meta = call([&](hub::HubCore& h, store::Store& st) {
                return st.get_session(h.create_session(title, description));
            });
            reply(res, 201, hub::session_json(meta));
        });
    });

    s.Post(R"(/sessions/(\d+)/start)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = path_id(req);
            const auto meta = call([&](hub::HubCore& h, store::Store& st) {
                h.start_session(id);
                return st.get_session(id);
            });
            reply(res, 200, hub::session_json(meta));
        });
    });

    s.Post(R"(/sessions/(\d+)/stop)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = path_id(req);
            const auto meta = call([&](hub::HubCore& h, store::Store&) { return h.stop_session(id); });
            reply(res, 200, hub::session_json(meta));
        });
    });

    s.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            const auto all = call([](hub::HubCore&, store::Store& st) { return st.list_sessions(); });
            ordered_json list = ordered_json::array();
            for (const auto& m : all)
                list.push_back(hub::session_json(m));
            reply(res, 200, ordered_json{{"sessions", list}});
        });
    });

    s.Get(R"(/sessions/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = path_id(req);
            reply(res, 200, call([&](hub::HubCore&, store::Store& st) { return hub::session_detail_json(st, id); }));
        });
    });

    s.Get(R"(/sessions/(\d+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = path_id(req);
            const auto bundle = call([&](hub::HubCore&, store::Store& st) { return st.render_csv(id); });
            if (req.has_param("file")) {
                const auto name = req.get_param_value("file");
                for (const auto& [file, content] : bundle)
                    if (file == name)
                        return res.set_content(content, "text/csv");
                return reply_error(res, 404, "unknown_file", "no file '" + name + "' in the bundle");
            }
            reply(res, 200, hub::bundle_json(id, bundle));
        });
    });

    s.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { reply(res, 200, hub::status_json(status())); });
    });

    s.Get("/events", [this](const httplib::Request&, httplib::Response& res) {
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this](std::size_t, httplib::DataSink& sink) {
            if (!running_)
                return false;
            std::string event;
            try {
                event = "event: status\ndata: " + hub::status_json(status()).dump() + "\n\n";
            } catch (const std::exception&) {
                return false;
            }
            if (!sink.write(event.data(), event.size()))
                return false;
            const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(options_.sse_period_ms);
            while (running_ && std::chrono::steady_clock::now() < until) {
                if (!sink.is_writable())
                    return false;
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
            return running_.load();
        });
    });
}

}  // namespace wearsync::net
