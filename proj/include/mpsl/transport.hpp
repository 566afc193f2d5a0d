#pragma once

// TCP transport between named nodes. One acceptor thread, one receiver thread
// per inbound connection feeding a single inbound queue, and one sender thread
// per outbound peer. send() never blocks; failures surface on the status
// channel. Outbound peers may be given a bandwidth, in which case the sender
// holds each message for payload_bytes / bandwidth before writing it.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpsl/wire.hpp"

namespace mpsl {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text);  // host:port
  std::string str() const;
};

struct Inbound {
  std::string from;  // peer id announced by the connection, or "local"
  TaskMessage msg;
  std::chrono::steady_clock::time_point received = std::chrono::steady_clock::now();
};

struct PeerStatus {
  std::string peer;
  std::string error;
};

struct TrafficCounters {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
};

class Transport {
 public:
  /// Binds and starts accepting. Port 0 picks an ephemeral port.
  Transport(std::string self_id, const Endpoint& listen);
  ~Transport();
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  const std::string& id() const { return self_id_; }
  Endpoint local_endpoint() const { return local_; }

  /// Opens the outbound connection to a peer, retrying until `timeout`.
  /// Throws WireError naming the peer if it stays unreachable.
  void connect(const std::string& peer, const Endpoint& endpoint, double bandwidth_bytes_per_s = 0.0,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  bool has_peer(const std::string& peer) const;

  /// Queues a message; `on_sent` runs on the sender thread once it is written.
  void send(const std::string& peer, TaskMessage msg, std::function<void()> on_sent = {});

  /// Blocks until a message arrives or the transport shuts down.
  std::optional<Inbound> receive();
  std::optional<Inbound> receive_for(std::chrono::milliseconds timeout);
  std::optional<Inbound> try_receive();
  /// Injects an event into the inbound queue.
  void post_local(TaskMessage msg);

  std::optional<PeerStatus> poll_status();

  /// Waits until every queued outbound message has been written.
  bool flush(std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

  TrafficCounters counters() const;
  std::map<std::string, TrafficCounters> peer_counters() const;

  void shutdown();

 private:
  struct Outgoing {
    TaskMessage msg;
    std::function<void()> on_sent;
  };
  struct Peer {
    std::string id;
    int fd = -1;
    double bandwidth = 0.0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Outgoing> queue;
    bool closing = false;
    bool busy = false;
    std::thread thread;
  };

  void accept_loop();
  void receive_loop(int fd);
  void send_loop(Peer& peer);
  void report(const std::string& peer, const std::string& error);
  void count_received(const std::string& peer, std::uint64_t bytes);

  std::string self_id_;
  Endpoint local_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;

  mutable std::mutex peers_mu_;
  std::map<std::string, std::unique_ptr<Peer>> peers_;
  std::vector<std::thread> receivers_;
  std::vector<int> inbound_fds_;

  std::mutex in_mu_;
  std::condition_variable in_cv_;
  std::deque<Inbound> inbound_;

  std::mutex status_mu_;
  std::deque<PeerStatus> status_;

  mutable std::mutex counters_mu_;
  std::map<std::string, TrafficCounters> counters_;
};

}  // namespace mpsl
