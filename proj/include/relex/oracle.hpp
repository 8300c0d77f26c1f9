#pragma once

#include "relex/network.hpp"

#include <atomic>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace relex {

// Black-box query interface between extractor and target. Query counting is
// atomic; handles may be shared across threads. Repeated queries at the same
// input return identical outputs (targets are deterministic).
class Oracle {
public:
    Oracle(int input_dim, int output_dim);
    virtual ~Oracle() = default;

    int input_dim() const { return in_; }
    int output_dim() const { return out_; }

    VectorXd query(const VectorXd& x);
    uint64_t query_count() const { return count_.load(); }

    void set_budget(std::optional<uint64_t> max_queries) { budget_ = max_queries; }
    std::optional<uint64_t> budget() const { return budget_; }

private:
    virtual VectorXd do_query(const VectorXd& x) = 0;

    int in_;
    int out_;
    std::atomic<uint64_t> count_{0};
    std::optional<uint64_t> budget_;
};

class NetworkOracle final : public Oracle {
public:
    explicit NetworkOracle(Network net);
    const Network& net() const { return net_; }

private:
    VectorXd do_query(const VectorXd& x) override;
    Network net_;
};

// Client for the newline-delimited JSON wire protocol. The server greets with
// {"hello":1,"input_dim":m,"output_dim":n}; each request {"x":[...]} yields
// {"y":[...]} or {"error":"..."}. Doubles travel as 17-significant-digit
// decimal, so remote outputs are bitwise equal to local ones.
class RemoteOracle final : public Oracle {
public:
    ~RemoteOracle() override;
    // endpoint: "tcp://host:port" or "host:port".
    static std::unique_ptr<RemoteOracle> connect(const std::string& endpoint);

private:
    RemoteOracle(int fd, int in, int out);
    VectorXd do_query(const VectorXd& x) override;

    int fd_;
    std::mutex io_mutex_;
    std::string rxbuf_;
};

// Serves a network over the wire protocol. Listens immediately; stop() (or
// destruction) shuts the listener and joins worker threads.
class OracleServer {
public:
    OracleServer(Network net, const std::string& listen_addr);
    ~OracleServer();

    int port() const { return port_; }
    std::string endpoint() const;
    uint64_t queries_served() const { return served_.load(); }
    void stop();

private:
    void accept_loop();
    void serve_connection(int fd);

    Network net_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> served_{0};
    std::thread accept_thread_;
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
};

}  // namespace relex
