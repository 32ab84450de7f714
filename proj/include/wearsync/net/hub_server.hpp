#pragma once

// The hub on real sockets. Device connections are read by one thread each;
// every decoded message, timer tick and control request is executed on a
// single actor thread that owns the HubCore and the Store.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>

#include "wearsync/clock.hpp"
#include "wearsync/hub/hub_core.hpp"
#include "wearsync/net/socket.hpp"
#include "wearsync/store/store.hpp"

namespace httplib {
class Server;
}

namespace wearsync::net {

struct ServerOptions {
    std::string host = "127.0.0.1";
    std::uint16_t device_port = wire::kDefaultPort;
    std::uint16_t http_port = 7008;
    std::int64_t sse_period_ms = 1000;  // wall time
};

class HubServer : private hub::Outbox {
public:
    HubServer(hub::HubConfig config, const Clock& clock, store::Store& store, ServerOptions options = {});
    ~HubServer() override;

    // Binds both ports and starts the threads. Throws NetError if a port is taken.
    void start();
    void stop();

    std::uint16_t device_port() const { return device_port_; }
    std::uint16_t http_port() const { return http_port_; }

    // Runs `f(hub, store)` on the actor thread and returns its result; exceptions propagate.
    template <class F>
    auto call(F&& f) -> std::invoke_result_t<F, hub::HubCore&, store::Store&>
    {
        using R = std::invoke_result_t<F, hub::HubCore&, store::Store&>;
        auto task = std::make_shared<std::packaged_task<R()>>([this, fn = std::forward<F>(f)]() mutable {
            return fn(hub_, store_);
        });
        auto result = task->get_future();
        post([task] { (*task)(); });
        return result.get();
    }

    hub::LiveStatus status()
    {
        return call([](hub::HubCore& h, store::Store&) { return h.live_status(); });
    }

private:
    struct Connection {
        std::shared_ptr<Socket> socket;
        std::thread reader;
        std::atomic<bool> done{false};
    };

    void post(std::function<void()> task);
    void actor_loop();
    void accept_loop();
    void read_loop(hub::ConnectionId id, std::shared_ptr<Socket> socket);
    void setup_http();
    void reap_connections(bool all);

    void send(hub::ConnectionId id, const wire::WireMessage& message) override;
    void close(hub::ConnectionId id) override;

    const Clock& clock_;
    store::Store& store_;
    ServerOptions options_;
    hub::HubCore hub_;

    std::unique_ptr<Listener> listener_;
    std::unique_ptr<httplib::Server> http_;
    std::uint16_t device_port_ = 0;
    std::uint16_t http_port_ = 0;

    std::atomic<bool> running_{false};
    std::thread actor_;
    std::thread acceptor_;
    std::thread http_thread_;

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::deque<std::function<void()>> queue_;
    bool accepting_tasks_ = false;

    std::mutex conn_mutex_;
    std::map<hub::ConnectionId, std::unique_ptr<Connection>> connections_;
    hub::ConnectionId next_id_ = 1;
};

}  // namespace wearsync::net
