#include "mpsl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace mpsl {

namespace {

constexpr std::string_view kHello = "hello";

sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string host = ep.host.empty() ? "0.0.0.0" : ep.host;
  if (const int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || res == nullptr)
    throw WireError("cannot resolve host '" + host + "': " + gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

bool write_all(int fd, const std::string& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw WireError("endpoint '" + std::string(text) + "' is not host:port");
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const std::string port(text.substr(colon + 1));
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(port, &used);
    if (used != port.size() || v > 65535) throw std::invalid_argument(port);
    ep.port = static_cast<std::uint16_t>(v);
  } catch (const std::logic_error&) {
    throw WireError("endpoint '" + std::string(text) + "' has an invalid port");
  }
  return ep;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Transport::Transport(std::string self_id, const Endpoint& listen) : self_id_(std::move(self_id)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw WireError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(listen);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 128) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw WireError("cannot listen on " + listen.str() + ": " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  local_.host = listen.host.empty() || listen.host == "0.0.0.0" ? "127.0.0.1" : listen.host;
  local_.port = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

Transport::~Transport() { shutdown(); }

void Transport::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(peers_mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    inbound_fds_.push_back(fd);
    receivers_.emplace_back([this, fd] { receive_loop(fd); });
  }
}

void Transport::receive_loop(int fd) {
  FrameDecoder decoder;
  std::string from;
  std::vector<char> buf(1 << 16);
  while (true) {
    const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      if (n < 0 && !stopping_) report(from.empty() ? "?" : from, std::string("recv: ") + std::strerror(errno));
      return;
    }
    decoder.feed(buf.data(), static_cast<std::size_t>(n));
    try {
      while (auto msg = decoder.next()) {
        if (from.empty()) {
          if (msg->kind != MessageKind::Ack || msg->payload != kHello) {
            report("?", "connection did not announce itself");
            return;
          }
          from = msg->owner;
          continue;
        }
        count_received(from, decoder.last_frame_bytes());
        {
          std::lock_guard lock(in_mu_);
          inbound_.push_back({from, std::move(*msg), std::chrono::steady_clock::now()});
        }
        in_cv_.notify_one();
      }
    } catch (const WireError& e) {
      report(from.empty() ? "?" : from, e.what());
      return;
    }
  }
}

void Transport::count_received(const std::string& peer, std::uint64_t bytes) {
  std::lock_guard lock(counters_mu_);
  auto& c = counters_[peer];
  c.bytes_received += bytes;
  ++c.messages_received;
}

void Transport::connect(const std::string& peer, const Endpoint& endpoint, double bandwidth_bytes_per_s,
                        std::chrono::milliseconds timeout) {
  if (has_peer(peer)) return;
  const sockaddr_in addr = resolve(endpoint);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int fd = -1;
  std::string last_error;
  while (true) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw WireError(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
    if (stopping_ || std::chrono::steady_clock::now() >= deadline)
      throw WireError("node '" + peer + "' unreachable at " + endpoint.str() + ": " + last_error);
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  if (!write_all(fd, frame(make_message(MessageKind::Ack, self_id_, 0, 0, 0, std::string(kHello))))) {
    ::close(fd);
    throw WireError("node '" + peer + "' closed the connection during setup");
  }
  auto p = std::make_unique<Peer>();
  p->id = peer;
  p->fd = fd;
  p->bandwidth = bandwidth_bytes_per_s;
  Peer& ref = *p;
  std::lock_guard lock(peers_mu_);
  peers_[peer] = std::move(p);
  ref.thread = std::thread([this, &ref] { send_loop(ref); });
}

bool Transport::has_peer(const std::string& peer) const {
  std::lock_guard lock(peers_mu_);
  return peers_.count(peer) > 0;
}

void Transport::send(const std::string& peer, TaskMessage msg, std::function<void()> on_sent) {
  Peer* p = nullptr;
  {
    std::lock_guard lock(peers_mu_);
    const auto it = peers_.find(peer);
    if (it != peers_.end()) p = it->second.get();
  }
  if (p == nullptr) {
    report(peer, "no connection to peer");
    return;
  }
  {
    std::lock_guard lock(p->mu);
    p->queue.push_back({std::move(msg), std::move(on_sent)});
  }
  p->cv.notify_one();
}

void Transport::send_loop(Peer& peer) {
  while (true) {
    Outgoing out;
    {
      std::unique_lock lock(peer.mu);
      peer.cv.wait(lock, [&] { return peer.closing || !peer.queue.empty(); });
      if (peer.closing) return;
      out = std::move(peer.queue.front());
      peer.queue.pop_front();
      peer.busy = true;
    }
    const std::string bytes = frame(out.msg);
    if (peer.bandwidth > 0.0 && !out.msg.payload.empty()) {
      const auto hold = std::chrono::duration<double>(static_cast<double>(out.msg.payload.size()) / peer.bandwidth);
      std::unique_lock lock(peer.mu);
      if (peer.cv.wait_for(lock, hold, [&] { return peer.closing; })) return;
    }
    if (!write_all(peer.fd, bytes)) {
      if (!stopping_) report(peer.id, std::string("send: ") + std::strerror(errno));
      std::lock_guard lock(peer.mu);
      peer.closing = true;
      peer.cv.notify_all();
      return;
    }
    {
      std::lock_guard lock(counters_mu_);
      auto& c = counters_[peer.id];
      c.bytes_sent += bytes.size();
      ++c.messages_sent;
    }
    if (out.on_sent) out.on_sent();
    {
      std::lock_guard lock(peer.mu);
      peer.busy = false;
    }
    peer.cv.notify_all();
  }
}

bool Transport::flush(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<Peer*> peers;
  {
    std::lock_guard lock(peers_mu_);
    for (auto& [id, p] : peers_) peers.push_back(p.get());
  }
  for (Peer* p : peers) {
    std::unique_lock lock(p->mu);
    if (!p->cv.wait_until(lock, deadline, [&] { return p->closing || (p->queue.empty() && !p->busy); })) return false;
  }
  return true;
}

std::optional<Inbound> Transport::receive() {
  std::unique_lock lock(in_mu_);
  in_cv_.wait(lock, [&] { return stopping_ || !inbound_.empty(); });
  if (inbound_.empty()) return std::nullopt;
  Inbound in = std::move(inbound_.front());
  inbound_.pop_front();
  return in;
}

std::optional<Inbound> Transport::receive_for(std::chrono::milliseconds timeout) {
  std::unique_lock lock(in_mu_);
  in_cv_.wait_for(lock, timeout, [&] { return stopping_ || !inbound_.empty(); });
  if (inbound_.empty()) return std::nullopt;
  Inbound in = std::move(inbound_.front());
  inbound_.pop_front();
  return in;
}

std::optional<Inbound> Transport::try_receive() {
  std::lock_guard lock(in_mu_);
  if (inbound_.empty()) return std::nullopt;
  Inbound in = std::move(inbound_.front());
  inbound_.pop_front();
  return in;
}

void Transport::post_local(TaskMessage msg) {
  {
    std::lock_guard lock(in_mu_);
    inbound_.push_back({"local", std::move(msg), std::chrono::steady_clock::now()});
  }
  in_cv_.notify_one();
}

void Transport::report(const std::string& peer, const std::string& error) {
  std::lock_guard lock(status_mu_);
  status_.push_back({peer, error});
}

std::optional<PeerStatus> Transport::poll_status() {
  std::lock_guard lock(status_mu_);
  if (status_.empty()) return std::nullopt;
  PeerStatus s = std::move(status_.front());
  status_.pop_front();
  return s;
}

TrafficCounters Transport::counters() const {
  std::lock_guard lock(counters_mu_);
  TrafficCounters total;
  for (const auto& [peer, c] : counters_) {
    total.bytes_sent += c.bytes_sent;
    total.bytes_received += c.bytes_received;
    total.messages_sent += c.messages_sent;
    total.messages_received += c.messages_received;
  }
  return total;
}

std::map<std::string, TrafficCounters> Transport::peer_counters() const {
  std::lock_guard lock(counters_mu_);
  return counters_;
}

void Transport::shutdown() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  std::vector<std::thread> receivers;
  {
    std::lock_guard lock(peers_mu_);
    for (auto& [id, p] : peers_) {
      {
        std::lock_guard plock(p->mu);
        p->closing = true;
      }
      p->cv.notify_all();
      ::shutdown(p->fd, SHUT_RDWR);
    }
    for (const int fd : inbound_fds_) ::shutdown(fd, SHUT_RDWR);
    receivers.swap(receivers_);
  }
  for (auto& [id, p] : peers_) {
    if (p->thread.joinable()) p->thread.join();
    ::close(p->fd);
  }
  for (auto& t : receivers) t.join();
  for (const int fd : inbound_fds_) ::close(fd);
  in_cv_.notify_all();
}

}  // namespace mpsl
