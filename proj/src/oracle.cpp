#include "relex/oracle.hpp"

#include <nlohmann/json.hpp>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <sstream>

namespace relex {

Oracle::Oracle(int input_dim, int output_dim) : in_(input_dim), out_(output_dim) {
    if (input_dim < 1 || output_dim < 1) throw ConfigError("oracle dimensions must be positive");
}

VectorXd Oracle::query(const VectorXd& x) {
    if (x.size() != in_)
        throw ShapeError("query: input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(in_));
    if (budget_) {
        const uint64_t c = count_.fetch_add(1) + 1;
        if (c > *budget_) {
            count_.fetch_sub(1);
            throw BudgetExhausted(count_.load());
        }
    } else {
        count_.fetch_add(1);
    }
    return do_query(x);
}

NetworkOracle::NetworkOracle(Network net)
    : Oracle(net.input_dim(), net.output_dim()), net_(std::move(net)) {}

VectorXd NetworkOracle::do_query(const VectorXd& x) { return net_.forward(x); }

// ---------------------------------------------------------------------------
// Wire helpers

namespace {

void send_all(int fd, const std::string& data) {
    size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) throw TransportError("send failed: " + std::string(std::strerror(errno)));
        sent += static_cast<size_t>(n);
    }
}

// Reads one newline-terminated line; returns false on orderly shutdown.
bool recv_line(int fd, std::string& buf, std::string& line) {
    for (;;) {
        const size_t pos = buf.find('\n');
        if (pos != std::string::npos) {
            line = buf.substr(0, pos);
            buf.erase(0, pos + 1);
            return true;
        }
        char chunk[4096];
        const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n == 0) return false;
        if (n < 0) throw TransportError("recv failed: " + std::string(std::strerror(errno)));
        buf.append(chunk, static_cast<size_t>(n));
    }
}

std::string vector_json(const char* key, const VectorXd& v) {
    std::ostringstream os;
    os << "{\"" << key << "\":[";
    for (int i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt_double17(v[i]);
    os << "]}\n";
    return os.str();
}

std::pair<std::string, std::string> split_host_port(const std::string& endpoint) {
    std::string addr = endpoint;
    const std::string prefix = "tcp://";
    if (addr.rfind(prefix, 0) == 0) addr = addr.substr(prefix.size());
    const size_t colon = addr.rfind(':');
    if (colon == std::string::npos)
        throw ConfigError("endpoint must look like host:port, got '" + endpoint + "'");
    return {addr.substr(0, colon), addr.substr(colon + 1)};
}

int dial(const std::string& endpoint) {
    auto [host, port] = split_host_port(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res);
    if (rc != 0) throw TransportError("cannot resolve " + endpoint + ": " + gai_strerror(rc));
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("connection refused: " + endpoint);
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

}  // namespace

// ---------------------------------------------------------------------------
// RemoteOracle

RemoteOracle::RemoteOracle(int fd, int in, int out) : Oracle(in, out), fd_(fd) {}

RemoteOracle::~RemoteOracle() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<RemoteOracle> RemoteOracle::connect(const std::string& endpoint) {
    const int fd = dial(endpoint);
    std::string buf, line;
    if (!recv_line(fd, buf, line)) {
        ::close(fd);
        throw TransportError("server closed connection before handshake");
    }
    int in = 0, out = 0;
    try {
        const auto hello = nlohmann::json::parse(line);
        if (hello.value("hello", 0) != 1) throw TransportError("unexpected handshake: " + line);
        in = hello.at("input_dim").get<int>();
        out = hello.at("output_dim").get<int>();
    } catch (const nlohmann::json::exception& e) {
        ::close(fd);
        throw TransportError(std::string("bad handshake: ") + e.what());
    }
    auto oracle = std::unique_ptr<RemoteOracle>(new RemoteOracle(fd, in, out));
    oracle->rxbuf_ = std::move(buf);
    return oracle;
}

VectorXd RemoteOracle::do_query(const VectorXd& x) {
    std::lock_guard<std::mutex> lock(io_mutex_);
    send_all(fd_, vector_json("x", x));
    std::string line;
    if (!recv_line(fd_, rxbuf_, line)) throw TransportError("server closed connection");
    try {
        const auto resp = nlohmann::json::parse(line);
        if (resp.contains("error"))
            throw TransportError("server error: " + resp.at("error").get<std::string>());
        const auto& y = resp.at("y");
        if (static_cast<int>(y.size()) != output_dim())
            throw TransportError("response has wrong output length");
        VectorXd out(output_dim());
        for (int i = 0; i < out.size(); ++i) out[i] = y.at(static_cast<size_t>(i)).get<double>();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("bad response: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// OracleServer

OracleServer::OracleServer(Network net, const std::string& listen_addr) : net_(std::move(net)) {
    auto [host, port] = split_host_port(listen_addr);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("cannot create socket");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(std::stoi(port)));
    if (host.empty() || host == "0.0.0.0") {
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
    } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw ConfigError("listen address must be an IPv4 address, got '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        throw TransportError("bind failed on " + listen_addr + ": " + std::strerror(errno));
    }
    if (::listen(listen_fd_, 16) != 0) {
        ::close(listen_fd_);
        throw TransportError("listen failed");
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

OracleServer::~OracleServer() { stop(); }

std::string OracleServer::endpoint() const { return "tcp://127.0.0.1:" + std::to_string(port_); }

void OracleServer::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(workers_mutex_);
    for (auto& t : workers_)
        if (t.joinable()) t.join();
    workers_.clear();
}

void OracleServer::accept_loop() {
    for (;;) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_) return;
            continue;
        }
        std::lock_guard<std::mutex> lock(workers_mutex_);
        workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void OracleServer::serve_connection(int fd) {
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    try {
        std::ostringstream hello;
        hello << "{\"hello\":1,\"input_dim\":" << net_.input_dim()
              << ",\"output_dim\":" << net_.output_dim() << "}\n";
        send_all(fd, hello.str());
        std::string buf, line;
        while (recv_line(fd, buf, line)) {
            if (line.empty()) continue;
            std::string reply;
            try {
                const auto req = nlohmann::json::parse(line);
                const auto& jx = req.at("x");
                if (static_cast<int>(jx.size()) != net_.input_dim()) {
                    reply = "{\"error\":\"dimension mismatch: expected " +
                            std::to_string(net_.input_dim()) + " inputs\"}\n";
                } else {
                    VectorXd x(net_.input_dim());
                    for (int i = 0; i < x.size(); ++i)
                        x[i] = jx.at(static_cast<size_t>(i)).get<double>();
                    const VectorXd y = net_.forward(x);
                    served_.fetch_add(1);
                    reply = vector_json("y", y);
                }
            } catch (const nlohmann::json::exception&) {
                reply = "{\"error\":\"malformed request\"}\n";
            } catch (const Error& e) {
                reply = std::string("{\"error\":\"") + e.what() + "\"}\n";
            }
            send_all(fd, reply);
        }
    } catch (const TransportError&) {
        // peer went away; drop the connection
    }
    ::close(fd);
}

}  // namespace relex
