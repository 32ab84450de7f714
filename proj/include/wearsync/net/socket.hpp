#pragma once

// Minimal blocking TCP over POSIX sockets, IPv4 only.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace wearsync::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd)
        : fd_(fd)
    {
    }
    ~Socket() { close(); }
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    // Throws NetError when the peer refuses or cannot be reached.
    static Socket connect(const std::string& host, std::uint16_t port);

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    // Throws NetError if the connection breaks.
    void send_all(std::span<const std::uint8_t> bytes);

    // Waits up to `timeout_ns` (negative: forever) for data. Returns the number
    // of bytes read, 0 at end of stream, nullopt on timeout. Throws on error.
    std::optional<std::size_t> recv_some(std::span<std::uint8_t> buffer, std::int64_t timeout_ns);

    // Wakes any reader with end of stream; the descriptor stays open.
    void shutdown();
    void close();

private:
    int fd_ = -1;
};

class Listener {
public:
    // Port 0 picks a free ephemeral port.
    Listener(const std::string& host, std::uint16_t port);
    std::uint16_t port() const { return port_; }

    // nullopt on timeout or after shutdown().
    std::optional<Socket> accept(std::int64_t timeout_ns);
    void shutdown();

private:
    Socket socket_;
    std::uint16_t port_ = 0;
};

}  // namespace wearsync::net
