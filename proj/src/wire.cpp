#include "mpsl/wire.hpp"

#include <yaml-cpp/binary.h>
#include <zlib.h>

#include <json.hpp>
#include <random>

namespace mpsl {

namespace {

constexpr std::string_view kKindNames[] = {"forward", "backward", "model_update", "config", "job_submit", "ack"};

}  // namespace

std::string_view to_string(MessageKind k) { return kKindNames[static_cast<int>(k)]; }

MessageKind parse_message_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kKindNames[i] == s) return static_cast<MessageKind>(i);
  throw WireError("unknown message kind '" + std::string(s) + "'");
}

std::uint32_t payload_checksum(std::string_view payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in pieces.
  std::size_t off = 0;
  while (off < payload.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(payload.size() - off, 1U << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data() + off), n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

TaskMessage make_message(MessageKind kind, std::string owner, std::size_t part, std::size_t seq,
                         std::size_t local_epoch, std::string payload) {
  TaskMessage m{kind, std::move(owner), part, seq, local_epoch, std::move(payload), 0};
  m.checksum = payload_checksum(m.payload);
  return m;
}

std::string encode_body(const TaskMessage& msg) {
  nlohmann::json j;
  j["kind"] = to_string(msg.kind);
  j["owner"] = msg.owner;
  j["part"] = msg.part;
  j["seq"] = msg.seq;
  j["local_epoch"] = msg.local_epoch;
  j["checksum"] = msg.checksum;
  j["payload"] = YAML::EncodeBase64(reinterpret_cast<const unsigned char*>(msg.payload.data()), msg.payload.size());
  return j.dump();
}

TaskMessage decode_body(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("malformed message: ") + e.what());
  }
  TaskMessage m;
  try {
    m.kind = parse_message_kind(j.at("kind").get<std::string>());
    m.owner = j.at("owner").get<std::string>();
    m.part = j.at("part").get<std::size_t>();
    m.seq = j.at("seq").get<std::size_t>();
    m.local_epoch = j.at("local_epoch").get<std::size_t>();
    m.checksum = j.at("checksum").get<std::uint32_t>();
    const auto encoded = j.at("payload").get<std::string>();
    const auto bytes = YAML::DecodeBase64(encoded);
    if (bytes.empty() && !encoded.empty()) throw WireError("payload is not valid base64");
    m.payload.assign(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("malformed message: ") + e.what());
  }
  if (payload_checksum(m.payload) != m.checksum)
    throw ChecksumError("checksum mismatch for " + std::string(to_string(m.kind)) + " seq " + std::to_string(m.seq));
  return m;
}

std::string frame(const TaskMessage& msg) {
  const std::string body = encode_body(msg);
  if (body.size() > kMaxFrameBytes) throw WireError("message exceeds the frame size limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>(n >> 24));
  out.push_back(static_cast<char>(n >> 16));
  out.push_back(static_cast<char>(n >> 8));
  out.push_back(static_cast<char>(n));
  out += body;
  return out;
}

void FrameDecoder::feed(const char* data, std::size_t size) {
  if (offset_ > 0 && offset_ * 2 >= buffer_.size()) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  buffer_.append(data, size);
}

std::optional<TaskMessage> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::size_t n = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | p[3];
  if (n > kMaxFrameBytes) throw WireError("frame length " + std::to_string(n) + " exceeds the limit");
  if (buffered() < 4 + n) return std::nullopt;
  const std::string_view body(buffer_.data() + offset_ + 4, n);
  offset_ += 4 + n;
  last_frame_ = 4 + n;
  return decode_body(body);
}

std::string synthetic_payload(std::size_t bytes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string out(bytes, '\0');
  for (std::size_t i = 0; i < bytes; i += 8) {
    const auto v = rng();
    for (std::size_t b = 0; b < 8 && i + b < bytes; ++b) out[i + b] = static_cast<char>(v >> (8 * b));
  }
  return out;
}

}  // namespace mpsl
