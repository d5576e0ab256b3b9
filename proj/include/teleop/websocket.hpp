#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

// Minimal RFC 6455 server side: handshake, framing, reassembly of fragmented messages.
namespace teleop::ws {

enum class Opcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

/// Sec-WebSocket-Accept for a client key.
std::string accept_key(std::string_view client_key);

struct HttpRequest {
  std::string method;
  std::string target;
  std::map<std::string, std::string> headers;  ///< lower-cased names
};

/// Parses a request head once the blank line has arrived. Returns the bytes consumed.
std::optional<std::size_t> parse_request(std::string_view buf, HttpRequest& out);

/// 101 response for a valid upgrade request; throws MalformedMessage otherwise.
std::string handshake_response(const HttpRequest& req);

/// Encodes one final frame. Servers send unmasked frames; a mask is for client use.
std::string encode(std::string_view payload, Opcode op = Opcode::Text, std::optional<std::uint32_t> mask = std::nullopt);

struct Message {
  Opcode opcode{Opcode::Text};
  std::string payload;
};

class Decoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  /// Next complete message or control frame. Throws MalformedMessage on protocol errors.
  std::optional<Message> next();

 private:
  std::string buf_;
  std::optional<Message> partial_;
};

}  // namespace teleop::ws
