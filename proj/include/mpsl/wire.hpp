#pragma once

// Task messages and their framing: a 4-byte big-endian length, then a UTF-8
// JSON object {kind, owner, part, seq, local_epoch, checksum, payload} with a
// base64 payload.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mpsl/error.hpp"

namespace mpsl {

enum class MessageKind { Forward, Backward, ModelUpdate, Config, JobSubmit, Ack };

std::string_view to_string(MessageKind k);
MessageKind parse_message_kind(std::string_view s);

struct TaskMessage {
  MessageKind kind = MessageKind::Forward;
  std::string owner;
  std::size_t part = 0;  // destination pipeline position
  std::size_t seq = 0;
  std::size_t local_epoch = 0;
  std::string payload;  // raw bytes
  std::uint32_t checksum = 0;

  bool operator==(const TaskMessage&) const = default;
};

struct WireError : Error {
  using Error::Error;
};

struct ChecksumError : WireError {
  using WireError::WireError;
};

constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 30;

std::uint32_t payload_checksum(std::string_view payload);

/// Builds a message with a matching checksum.
TaskMessage make_message(MessageKind kind, std::string owner, std::size_t part, std::size_t seq,
                         std::size_t local_epoch, std::string payload);

std::string encode_body(const TaskMessage& msg);
/// Throws WireError on malformed JSON, ChecksumError on a payload mismatch.
TaskMessage decode_body(std::string_view body);

std::string frame(const TaskMessage& msg);

/// Reassembles frames from an arbitrarily chunked byte stream.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t size);
  void feed(std::string_view bytes) { feed(bytes.data(), bytes.size()); }
  /// Next complete message, if any. Throws on a corrupt frame.
  std::optional<TaskMessage> next();
  std::size_t buffered() const { return buffer_.size() - offset_; }
  /// Size of the frame most recently returned by next(), header included.
  std::size_t last_frame_bytes() const { return last_frame_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
  std::size_t last_frame_ = 0;
};

/// Deterministic filler bytes of the given length.
std::string synthetic_payload(std::size_t bytes, std::uint64_t seed);

}  // namespace mpsl
