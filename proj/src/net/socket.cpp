#include "wearsync/net/socket.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace wearsync::net {

namespace {

std::string errno_text(const std::string& what)
{
    return what + ": " + std::strerror(errno);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1)
        return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &found) != 0 || !found)
        throw NetError("cannot resolve host '" + host + "'");
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(found->ai_addr)->sin_addr;
    ::freeaddrinfo(found);
    return addr;
}

// Returns false on timeout.
bool wait_readable(int fd, std::int64_t timeout_ns)
{
    pollfd p{fd, POLLIN, 0};
    timespec ts{};
    timespec* tsp = nullptr;
    if (timeout_ns >= 0) {
        ts.tv_sec = static_cast<time_t>(timeout_ns / 1'000'000'000);
        ts.tv_nsec = static_cast<long>(timeout_ns % 1'000'000'000);
        tsp = &ts;
    }
    for (;;) {
        const int n = ::ppoll(&p, 1, tsp, nullptr);
        if (n >= 0)
            return n > 0;
        if (errno != EINTR)
            throw NetError(errno_text("poll"));
    }
}

}  // namespace

Socket::Socket(Socket&& other) noexcept
    : fd_(other.fd_)
{
    other.fd_ = -1;
}

Socket& Socket::operator=(Socket&& other) noexcept
{
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

Socket Socket::connect(const std::string& host, std::uint16_t port)
{
    const sockaddr_in addr = resolve(host, port);
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid())
        throw NetError(errno_text("socket"));
    if (::connect(s.fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
        throw NetError(errno_text("connect to " + host + ":" + std::to_string(port)));
    const int one = 1;
    ::setsockopt(s.fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

void Socket::send_all(std::span<const std::uint8_t> bytes)
{
    std::size_t done = 0;
    while (done < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw NetError(errno_text("send"));
        }
        done += static_cast<std::size_t>(n);
    }
}

std::optional<std::size_t> Socket::recv_some(std::span<std::uint8_t> buffer, std::int64_t timeout_ns)
{
    if (!wait_readable(fd_, timeout_ns))
        return std::nullopt;
    for (;;) {
        const ssize_t n = ::recv(fd_, buffer.data(), buffer.size(), 0);
        if (n >= 0)
            return static_cast<std::size_t>(n);
        if (errno == EINTR)
            continue;
        if (errno == ECONNRESET)
            return 0;
        throw NetError(errno_text("recv"));
    }
}

void Socket::shutdown()
{
    if (fd_ >= 0)
        ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close()
{
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Listener::Listener(const std::string& host, std::uint16_t port)
    : socket_(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0))
{
    if (!socket_.valid())
        throw NetError(errno_text("socket"));
    const int one = 1;
    ::setsockopt(socket_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(host, port);
    if (::bind(socket_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
        throw NetError(errno_text("bind " + host + ":" + std::to_string(port)));
    if (::listen(socket_.fd(), 16) != 0)
        throw NetError(errno_text("listen"));
    socklen_t len = sizeof addr;
    ::getsockname(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

std::optional<Socket> Listener::accept(std::int64_t timeout_ns)
{
    if (!socket_.valid() || !wait_readable(socket_.fd(), timeout_ns))
        return std::nullopt;
    const int fd = ::accept4(socket_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0)
        return std::nullopt;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Socket(fd);
}

void Listener::shutdown()
{
    socket_.shutdown();
}

}  // namespace wearsync::net
