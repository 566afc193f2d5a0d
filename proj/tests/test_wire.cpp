#include <doctest.h>

#include <chrono>
#include <map>
#include <memory>
#include <random>
#include <thread>

#include <json.hpp>

#include "mpsl/transport.hpp"
#include "mpsl/wire.hpp"

using namespace mpsl;
using namespace std::chrono_literals;

namespace {

TaskMessage random_message(std::mt19937_64& rng) {
  static const MessageKind kinds[] = {MessageKind::Forward,    MessageKind::Backward, MessageKind::ModelUpdate,
                                      MessageKind::Config,     MessageKind::JobSubmit, MessageKind::Ack};
  std::uniform_int_distribution<std::size_t> len(0, 2048), small(0, 1u << 20);
  std::uniform_int_distribution<int> byte(0, 255), k(0, 5);
  std::string owner(std::uniform_int_distribution<std::size_t>(0, 12)(rng), 'x');
  for (auto& c : owner) c = static_cast<char>('a' + byte(rng) % 26);
  std::string payload(len(rng), '\0');
  for (auto& c : payload) c = static_cast<char>(byte(rng));
  return make_message(kinds[k(rng)], owner, small(rng), small(rng), small(rng), payload);
}

// Splits `bytes` at random boundaries and feeds the pieces.
std::vector<TaskMessage> rechunk(const std::string& bytes, std::mt19937_64& rng) {
  FrameDecoder d;
  std::vector<TaskMessage> out;
  std::size_t at = 0;
  while (at < bytes.size()) {
    const std::size_t n = std::min(bytes.size() - at, std::uniform_int_distribution<std::size_t>(1, 700)(rng));
    d.feed(bytes.data() + at, n);
    at += n;
    while (auto m = d.next()) out.push_back(std::move(*m));
  }
  CHECK(d.buffered() == 0);
  return out;
}

std::optional<Inbound> wait_for(Transport& t, std::chrono::milliseconds timeout = 5000ms) {
  return t.receive_for(timeout);
}

}  // namespace

TEST_CASE("message kinds round-trip by name") {
  for (const auto k : {MessageKind::Forward, MessageKind::Backward, MessageKind::ModelUpdate, MessageKind::Config,
                       MessageKind::JobSubmit, MessageKind::Ack})
    CHECK(parse_message_kind(to_string(k)) == k);
  CHECK(to_string(MessageKind::ModelUpdate) == "model_update");
  CHECK_THROWS_AS(parse_message_kind("gossip"), WireError);
}

TEST_CASE("body encoding round-trips random messages") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto m = random_message(rng);
    CHECK(decode_body(encode_body(m)) == m);
  }
}

TEST_CASE("frames are length-prefixed big-endian") {
  const auto m = make_message(MessageKind::Forward, "o", 2, 3, 0, "abc");
  const std::string f = frame(m);
  const std::string body = encode_body(m);
  REQUIRE(f.size() == body.size() + 4);
  const auto n = (std::uint32_t(std::uint8_t(f[0])) << 24) | (std::uint32_t(std::uint8_t(f[1])) << 16) |
                 (std::uint32_t(std::uint8_t(f[2])) << 8) | std::uint32_t(std::uint8_t(f[3]));
  CHECK(n == body.size());
  CHECK(f.substr(4) == body);
  const auto j = nlohmann::json::parse(body);
  for (const char* key : {"kind", "owner", "part", "seq", "local_epoch", "checksum", "payload"}) CHECK(j.contains(key));
}

TEST_CASE("arbitrary segmentation yields the same messages") {
  std::mt19937_64 rng(2);
  std::vector<TaskMessage> sent;
  std::string stream;
  for (int i = 0; i < 400; ++i) {
    sent.push_back(random_message(rng));
    stream += frame(sent.back());
  }
  CHECK(rechunk(stream, rng) == sent);
  // Byte-at-a-time.
  FrameDecoder d;
  std::vector<TaskMessage> got;
  for (char c : stream.substr(0, 20000)) {
    d.feed(&c, 1);
    while (auto m = d.next()) got.push_back(*m);
  }
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == sent[i]);
}

TEST_CASE("corrupted payload fails the checksum") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto m = random_message(rng);
    if (m.payload.empty()) m = make_message(m.kind, m.owner, m.part, m.seq, m.local_epoch, "z");
    auto bad = m;
    const std::size_t at = std::uniform_int_distribution<std::size_t>(0, bad.payload.size() - 1)(rng);
    bad.payload[at] = static_cast<char>(bad.payload[at] ^ (1 + i % 255));
    // Checksum kept from the original: the receiver must notice.
    CHECK_THROWS_AS(decode_body(encode_body(bad)), ChecksumError);
    FrameDecoder d;
    d.feed(frame(bad));
    CHECK_THROWS_AS(d.next(), ChecksumError);
  }
}

TEST_CASE("malformed bodies are rejected") {
  CHECK_THROWS_AS(decode_body("not json"), WireError);
  CHECK_THROWS_AS(decode_body(R"({"kind":"forward"})"), WireError);
  auto j = nlohmann::json::parse(encode_body(make_message(MessageKind::Ack, "a", 0, 0, 0, "x")));
  j["payload"] = "!!!";
  CHECK_THROWS_AS(decode_body(j.dump()), WireError);
  FrameDecoder d;
  d.feed(std::string("\xff\xff\xff\xff", 4));
  CHECK_THROWS_AS(d.next(), WireError);
}

TEST_CASE("synthetic payloads are deterministic") {
  CHECK(synthetic_payload(1000, 7) == synthetic_payload(1000, 7));
  CHECK(synthetic_payload(1000, 7) != synthetic_payload(1000, 8));
  CHECK(synthetic_payload(13, 1).size() == 13);
}

TEST_CASE("transport: back-to-back sends arrive in order") {
  Transport a("a", {"127.0.0.1", 0}), b("b", {"127.0.0.1", 0});
  a.connect("b", b.local_endpoint());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < 100; ++i) a.send("b", make_message(MessageKind::Forward, "o", 2, i, 0, "p"));
  // Enqueueing never waits for the network.
  CHECK(std::chrono::steady_clock::now() - t0 < 500ms);
  for (std::size_t i = 0; i < 100; ++i) {
    auto in = wait_for(b);
    REQUIRE(in);
    CHECK(in->from == "a");
    CHECK(in->msg.seq == i);
  }
}

TEST_CASE("transport: one mebibyte arrives intact") {
  Transport a("a", {"127.0.0.1", 0}), b("b", {"127.0.0.1", 0});
  a.connect("b", b.local_endpoint());
  const auto m = make_message(MessageKind::ModelUpdate, "o", 1, 0, 0, synthetic_payload(1u << 20, 42));
  a.send("b", m);
  auto in = wait_for(b);
  REQUIRE(in);
  CHECK(in->msg == m);
  CHECK(payload_checksum(in->msg.payload) == m.checksum);
  CHECK(a.flush());
  CHECK(a.counters().bytes_sent >= frame(m).size());
  CHECK(b.counters().messages_received >= 1);
}

TEST_CASE("transport: per-peer order survives interleaving") {
  Transport a("a", {"127.0.0.1", 0}), b("b", {"127.0.0.1", 0}), c("c", {"127.0.0.1", 0});
  a.connect("c", c.local_endpoint());
  b.connect("c", c.local_endpoint());
  std::thread ta([&] {
    for (std::size_t i = 0; i < 200; ++i) a.send("c", make_message(MessageKind::Forward, "a", 2, i, 0, "x"));
  });
  std::thread tb([&] {
    for (std::size_t i = 0; i < 200; ++i) b.send("c", make_message(MessageKind::Forward, "b", 2, i, 0, "y"));
  });
  ta.join();
  tb.join();
  std::map<std::string, std::size_t> next;
  for (int i = 0; i < 400; ++i) {
    auto in = wait_for(c);
    REQUIRE(in);
    CHECK(in->msg.seq == next[in->from]++);
  }
  CHECK(next["a"] == 200);
  CHECK(next["b"] == 200);
}

TEST_CASE("transport: unknown peer surfaces on the status channel") {
  Transport a("a", {"127.0.0.1", 0});
  CHECK_NOTHROW(a.send("ghost", make_message(MessageKind::Forward, "o", 2, 0, 0, "")));
  const auto st = a.poll_status();
  REQUIRE(st);
  CHECK(st->peer == "ghost");
}

TEST_CASE("transport: broken connection marks the peer failed") {
  Transport a("a", {"127.0.0.1", 0});
  auto b = std::make_unique<Transport>("b", Endpoint{"127.0.0.1", 0});
  a.connect("b", b->local_endpoint());
  b->shutdown();
  b.reset();
  std::optional<PeerStatus> st;
  for (int i = 0; i < 200 && !st; ++i) {
    a.send("b", make_message(MessageKind::Forward, "o", 2, 0, 0, std::string(65536, 'q')));
    std::this_thread::sleep_for(10ms);
    st = a.poll_status();
  }
  REQUIRE(st);
  CHECK(st->peer == "b");
}

TEST_CASE("transport: unreachable peer names the peer") {
  Transport probe("p", {"127.0.0.1", 0});
  const Endpoint dead{"127.0.0.1", probe.local_endpoint().port};
  probe.shutdown();
  Transport a("a", {"127.0.0.1", 0});
  CHECK_THROWS_WITH_AS(a.connect("z", dead, 0.0, 200ms), doctest::Contains("'z'"), WireError);
}

TEST_CASE("transport: receive blocks until a message arrives and unblocks on shutdown") {
  Transport a("a", {"127.0.0.1", 0}), b("b", {"127.0.0.1", 0});
  a.connect("b", b.local_endpoint());
  CHECK_FALSE(b.receive_for(50ms));
  CHECK_FALSE(b.try_receive());
  std::thread late([&] {
    std::this_thread::sleep_for(100ms);
    a.send("b", make_message(MessageKind::Ack, "o", 0, 9, 0, ""));
  });
  const auto t0 = std::chrono::steady_clock::now();
  auto in = b.receive();
  late.join();
  REQUIRE(in);
  CHECK(in->msg.seq == 9);
  CHECK(std::chrono::steady_clock::now() - t0 >= 90ms);

  std::thread stopper([&] {
    std::this_thread::sleep_for(50ms);
    b.shutdown();
  });
  CHECK_FALSE(b.receive());
  stopper.join();
}

TEST_CASE("transport: bandwidth throttles the sender") {
  Transport a("a", {"127.0.0.1", 0}), b("b", {"127.0.0.1", 0});
  a.connect("b", b.local_endpoint(), 1e6);
  bool sent = false;
  const auto t0 = std::chrono::steady_clock::now();
  a.send("b", make_message(MessageKind::Forward, "o", 2, 0, 0, std::string(200'000, 'a')), [&] { sent = true; });
  auto in = wait_for(b);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(in);
  CHECK(a.flush());
  CHECK(sent);
  CHECK(s >= 0.19);
  CHECK(s < 1.0);
}

TEST_CASE("transport: local posts share the inbound queue") {
  Transport a("a", {"127.0.0.1", 0});
  a.post_local(make_message(MessageKind::Ack, "a", 0, 1, 0, ""));
  auto in = a.try_receive();
  REQUIRE(in);
  CHECK(in->from == "local");
}

TEST_CASE("endpoint parsing") {
  const auto e = Endpoint::parse("10.0.0.1:4000");
  CHECK(e.host == "10.0.0.1");
  CHECK(e.port == 4000);
  CHECK(e.str() == "10.0.0.1:4000");
  CHECK_THROWS_AS(Endpoint::parse("nohost"), Error);
  CHECK_THROWS_AS(Endpoint::parse("h:99999"), Error);
}
