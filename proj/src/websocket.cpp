#include "teleop/websocket.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cctype>

#include "teleop/error.hpp"
#include "teleop/protocol.hpp"

namespace teleop::ws {

namespace {

constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedMessage, what); }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

bool has_token(const std::string& value, std::string_view token) {
  std::string v = lower(value);
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string::npos) comma = v.size();
    if (trim(std::string_view(v).substr(pos, comma - pos)) == token) return true;
    pos = comma + 1;
  }
  return false;
}

}  // namespace

std::string accept_key(std::string_view client_key) {
  std::string in(client_key);
  in += kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(in.data()), in.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

std::optional<std::size_t> parse_request(std::string_view buf, HttpRequest& out) {
  std::size_t end = buf.find("\r\n\r\n");
  if (end == std::string_view::npos) {
    if (buf.size() > 16384) malformed("request head too large");
    return std::nullopt;
  }
  std::string_view head = buf.substr(0, end);
  std::size_t eol = head.find("\r\n");
  std::string_view line = head.substr(0, eol);
  std::size_t sp1 = line.find(' ');
  std::size_t sp2 = line.find(' ', sp1 == std::string_view::npos ? sp1 : sp1 + 1);
  if (sp1 == std::string_view::npos || sp2 == std::string_view::npos) malformed("bad request line");
  out = HttpRequest{};
  out.method = std::string(line.substr(0, sp1));
  out.target = std::string(line.substr(sp1 + 1, sp2 - sp1 - 1));
  std::size_t pos = eol == std::string_view::npos ? head.size() : eol + 2;
  while (pos < head.size()) {
    std::size_t next = head.find("\r\n", pos);
    if (next == std::string_view::npos) next = head.size();
    std::string_view h = head.substr(pos, next - pos);
    std::size_t colon = h.find(':');
    if (colon == std::string_view::npos) malformed("bad header line");
    out.headers[lower(std::string(h.substr(0, colon)))] = trim(h.substr(colon + 1));
    pos = next + 2;
  }
  return end + 4;
}

std::string handshake_response(const HttpRequest& req) {
  auto get = [&req](const char* name) -> std::string {
    auto it = req.headers.find(name);
    return it == req.headers.end() ? std::string() : it->second;
  };
  if (req.method != "GET") malformed("upgrade must be a GET");
  if (!has_token(get("upgrade"), "websocket") || !has_token(get("connection"), "upgrade"))
    malformed("not a websocket upgrade");
  if (get("sec-websocket-version") != "13") malformed("unsupported websocket version");
  std::string key = get("sec-websocket-key");
  if (key.empty()) malformed("missing Sec-WebSocket-Key");
  return "HTTP/1.1 101 Switching Protocols\r\n"
         "Upgrade: websocket\r\n"
         "Connection: Upgrade\r\n"
         "Sec-WebSocket-Accept: " +
         accept_key(key) + "\r\n\r\n";
}

std::string encode(std::string_view payload, Opcode op, std::optional<std::uint32_t> mask) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(op)));
  const std::uint8_t mask_bit = mask ? 0x80 : 0x00;
  const std::uint64_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xFFFF) {
    f.push_back(static_cast<char>(mask_bit | 126));
    f.push_back(static_cast<char>((n >> 8) & 0xFF));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(static_cast<char>(mask_bit | 127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  }
  if (!mask) {
    f.append(payload);
    return f;
  }
  unsigned char key[4] = {static_cast<unsigned char>(*mask >> 24), static_cast<unsigned char>(*mask >> 16),
                          static_cast<unsigned char>(*mask >> 8), static_cast<unsigned char>(*mask)};
  f.append(reinterpret_cast<const char*>(key), 4);
  for (std::size_t i = 0; i < payload.size(); ++i) f.push_back(static_cast<char>(payload[i] ^ key[i % 4]));
  return f;
}

std::optional<Message> Decoder::next() {
  while (true) {
    if (buf_.size() < 2) return std::nullopt;
    const auto b0 = static_cast<std::uint8_t>(buf_[0]);
    const auto b1 = static_cast<std::uint8_t>(buf_[1]);
    if (b0 & 0x70) malformed("reserved websocket bits set");
    const bool fin = b0 & 0x80;
    const auto op = static_cast<Opcode>(b0 & 0x0F);
    const bool masked = b1 & 0x80;
    std::uint64_t n = b1 & 0x7F;
    std::size_t pos = 2;
    if (n == 126) {
      if (buf_.size() < 4) return std::nullopt;
      n = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[2])) << 8) | static_cast<std::uint8_t>(buf_[3]);
      pos = 4;
    } else if (n == 127) {
      if (buf_.size() < 10) return std::nullopt;
      n = 0;
      for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<std::uint8_t>(buf_[2 + static_cast<std::size_t>(i)]);
      pos = 10;
    }
    if (n > protocol::kMaxFrame) malformed("websocket frame too large");
    const bool control = static_cast<std::uint8_t>(op) & 0x08;
    if (control && (n > 125 || !fin)) malformed("bad control frame");
    unsigned char key[4] = {0, 0, 0, 0};
    if (masked) {
      if (buf_.size() < pos + 4) return std::nullopt;
      for (int i = 0; i < 4; ++i) key[i] = static_cast<unsigned char>(buf_[pos + static_cast<std::size_t>(i)]);
      pos += 4;
    }
    if (buf_.size() < pos + n) return std::nullopt;
    std::string payload = buf_.substr(pos, static_cast<std::size_t>(n));
    if (masked)
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ key[i % 4]);
    buf_.erase(0, pos + static_cast<std::size_t>(n));

    if (control) return Message{op, std::move(payload)};
    if (op == Opcode::Continuation) {
      if (!partial_) malformed("continuation without a started message");
      partial_->payload += payload;
    } else {
      if (partial_) malformed("new message before the previous one finished");
      if (op != Opcode::Text && op != Opcode::Binary) malformed("unknown websocket opcode");
      partial_ = Message{op, std::move(payload)};
    }
    if (partial_->payload.size() > protocol::kMaxFrame) malformed("websocket message too large");
    if (fin) {
      Message m = std::move(*partial_);
      partial_.reset();
      return m;
    }
  }
}

}  // namespace teleop::ws
