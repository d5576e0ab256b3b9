#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "teleop/server.hpp"
#include "teleop/websocket.hpp"

using namespace teleop;
using namespace teleop::server;
using nlohmann::json;
using teleop::testing::default_workspace;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

json command(std::uint64_t seq, const char* mode, json body) {
  return {{"v", 1}, {"seq", seq}, {"mode", mode}, {"body", std::move(body)}};
}

/// Reads until a reply for `seq` arrives; other traffic is discarded.
std::optional<json> reply_for(Client& c, std::uint64_t seq, double timeout_s = 5.0) {
  auto t0 = Clock::now();
  while (since(t0) < timeout_s) {
    auto m = c.receive(0.1);
    if (m && (*m)["type"] == "reply" && (*m)["seq"] == seq) return m;
  }
  return std::nullopt;
}

bool eventually(auto&& pred, double timeout_s = 10.0) {
  auto t0 = Clock::now();
  while (since(t0) < timeout_s) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return pred();
}

world::Workspace away_from_home() {
  world::Workspace ws = default_workspace();
  ws.initial.ee_pose.position += Vec3{0.1, 0.05, -0.1};
  ws.initial.ee_command = ws.initial.ee_pose.position;
  return ws;
}

int raw_connect(std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  REQUIRE(::getaddrinfo("127.0.0.1", std::to_string(port).c_str(), &hints, &res) == 0);
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  REQUIRE(::connect(fd, res->ai_addr, res->ai_addrlen) == 0);
  ::freeaddrinfo(res);
  return fd;
}

std::string raw_read(int fd, double timeout_s) {
  pollfd p{fd, POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(timeout_s * 1000)) <= 0) return {};
  char buf[65536];
  ssize_t n = ::recv(fd, buf, sizeof buf, 0);
  return n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : std::string();
}

}  // namespace

TEST_SUITE("websocket") {
  TEST_CASE("accept key matches the published example") {
    CHECK(ws::accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
  }

  TEST_CASE("handshake") {
    const std::string req =
        "GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: keep-alive, Upgrade\r\n"
        "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\nEXTRA";
    ws::HttpRequest r;
    CHECK_FALSE(ws::parse_request(req.substr(0, 40), r));
    auto used = ws::parse_request(req, r);
    REQUIRE(used);
    CHECK(req.substr(*used) == "EXTRA");
    CHECK(r.target == "/session");
    CHECK(r.headers.at("sec-websocket-version") == "13");
    auto resp = ws::handshake_response(r);
    CHECK(resp.rfind("HTTP/1.1 101", 0) == 0);
    CHECK(resp.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n") != std::string::npos);

    r.headers.erase("upgrade");
    CHECK_THROWS_AS(ws::handshake_response(r), Error);
  }

  TEST_CASE("frames roundtrip at every length class") {
    for (std::size_t n : {0u, 1u, 125u, 126u, 65535u, 65536u, 200000u}) {
      CAPTURE(n);
      std::string payload(n, 'a');
      for (std::size_t i = 0; i < n; ++i) payload[i] = static_cast<char>('a' + i % 26);
      for (auto mask : {std::optional<std::uint32_t>{}, std::optional<std::uint32_t>{0xA1B2C3D4u}}) {
        std::string wire = ws::encode(payload, ws::Opcode::Text, mask);
        ws::Decoder d;
        // Byte-at-a-time for small frames, whole for large ones.
        if (n < 300) {
          for (char c : wire) {
            CHECK_FALSE(d.next());
            d.feed(std::string_view(&c, 1));
          }
        } else {
          d.feed(wire);
        }
        auto m = d.next();
        REQUIRE(m);
        CHECK(m->opcode == ws::Opcode::Text);
        CHECK(m->payload == payload);
      }
    }
  }

  TEST_CASE("fragmented messages reassemble around control frames") {
    std::string a = ws::encode("hello ", ws::Opcode::Text, 7u);
    a[0] = static_cast<char>(a[0] & 0x7F);  // clear FIN
    std::string ping = ws::encode("p", ws::Opcode::Ping, 9u);
    std::string b = ws::encode("world", ws::Opcode::Continuation, 11u);
    ws::Decoder d;
    d.feed(a + ping + b);
    auto m1 = d.next();
    REQUIRE(m1);
    CHECK(m1->opcode == ws::Opcode::Ping);
    auto m2 = d.next();
    REQUIRE(m2);
    CHECK(m2->payload == "hello world");
    CHECK_FALSE(d.next());

    ws::Decoder bad;
    bad.feed(std::string("\xF1\x00", 2));
    CHECK_THROWS_AS(bad.next(), Error);
    ws::Decoder orphan;
    orphan.feed(ws::encode("x", ws::Opcode::Continuation));
    CHECK_THROWS_AS(orphan.next(), Error);
  }
}

TEST_SUITE("server") {
  TEST_CASE("reset brings the robot home") {
    Server srv(away_from_home(), ServerConfig{.realtime = false});
    srv.start();
    Client c = Client::connect("127.0.0.1", srv.port());
    c.send(command(1, "cc", {{"type", "reset"}}));
    auto r = reply_for(c, 1);
    REQUIRE(r);
    CHECK((*r)["ok"] == true);
    const Vec3 home = default_workspace().home.position;
    CHECK(eventually([&] { return (srv.snapshot().ee_pose.position - home).norm() < 1e-9; }));
  }

  TEST_CASE("second connection is rejected with Busy") {
    Server srv(default_workspace(), ServerConfig{.realtime = false});
    srv.start();
    Client first = Client::connect("127.0.0.1", srv.port());
    first.send(command(1, "tla", {{"type", "grasp"}}));
    REQUIRE(reply_for(first, 1));
    Client second = Client::connect("127.0.0.1", srv.port());
    auto m = second.receive(2.0);
    REQUIRE(m);
    CHECK((*m)["code"] == "Busy");
    CHECK_THROWS_AS(second.receive(2.0), Error);
    // The first session is unaffected.
    first.send(command(2, "tla", {{"type", "release"}}));
    CHECK(reply_for(first, 2));
  }

  TEST_CASE("a plan survives the operator disconnecting") {
    Server srv(default_workspace(), ServerConfig{});  // real time, so the disconnect lands mid-plan
    srv.start();
    {
      Client c = Client::connect("127.0.0.1", srv.port());
      c.send(command(1, "pc", {{"type", "reset"}}));
      REQUIRE(reply_for(c, 1));
      // Find screw_1 on screen and loosen it with a click.
      std::optional<json> state;
      while (!state) {
        auto m = c.receive(1.0);
        if (m && (*m)["type"] == "state") state = m;
      }
      json px;
      for (const auto& mk : (*state)["frame"]["markers"])
        if (mk["object_id"] == "screw_1") px = mk["anchor_pixel"];
      REQUIRE(px.is_array());
      json area{{"rect", {{"min", px}, {"max", px}}}, {"class", "screw"}, {"checklist", {{{"kind", "loosen"}, {"order", 1}}}},
                {"params", {{"turns", 1}}}};
      c.send(command(2, "pc", {{"type", "single_action"}, {"area", area}}));
      auto r = reply_for(c, 2);
      REQUIRE(r);
      REQUIRE((*r)["ok"] == true);
      CHECK((*r)["primitives"] == 4);
      REQUIRE(eventually([&] { return srv.status().current_plan == (*r)["plan"].get<std::uint64_t>(); }));
    }
    CHECK(eventually([&] { return !srv.connected(); }));
    CHECK(srv.status().current_plan);
    CHECK(eventually([&] { return srv.snapshot().at("screw_1").articulation->value == 3.0; }, 20.0));
    CHECK(eventually([&] { return !srv.status().current_plan; }, 20.0));

    // A new session can connect afterwards and starts from seq 1 again.
    Client again = Client::connect("127.0.0.1", srv.port());
    again.send(command(1, "cc", {{"type", "reset"}}));
    auto r = reply_for(again, 1);
    REQUIRE(r);
    CHECK((*r)["ok"] == true);
  }

  TEST_CASE("bind failure on a taken port") {
    Server a(default_workspace(), ServerConfig{.realtime = false});
    a.start();
    Server b(default_workspace(), ServerConfig{.port = a.port(), .realtime = false});
    try {
      b.start();
      FAIL("second bind succeeded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BindFailure);
    }
  }

  TEST_CASE("unreachable server") {
    std::uint16_t port;
    {
      Server s(default_workspace(), ServerConfig{.realtime = false});
      s.start();
      port = s.port();
    }
    try {
      Client::connect("127.0.0.1", port, 0.1);
      FAIL("connected to a stopped server");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ServerUnreachable);
    }
  }

  TEST_CASE("state streams at the configured rate in real time") {
    ServerConfig cfg;
    cfg.link.state_rate = 20.0;
    Server srv(default_workspace(), cfg);
    srv.start();
    Client c = Client::connect("127.0.0.1", srv.port());
    int states = 0;
    double first_sim = -1, last_sim = 0;
    auto t0 = Clock::now();
    while (since(t0) < 1.0) {
      auto m = c.receive(0.05);
      if (m && (*m)["type"] == "state") {
        ++states;
        last_sim = (*m)["sim_time"].get<double>();
        if (first_sim < 0) first_sim = last_sim;
      }
    }
    CHECK(states >= 10);
    CHECK(states <= 25);
    // Real-time pacing: sim clock tracks the wall clock.
    CHECK(last_sim - first_sim == doctest::Approx(0.9).epsilon(0.3));
  }

  TEST_CASE("injected delay applies in both directions") {
    ServerConfig cfg;
    cfg.realtime = false;
    cfg.link.one_way_delay_ms = 150;
    Server srv(default_workspace(), cfg);
    srv.start();
    Client c = Client::connect("127.0.0.1", srv.port());
    auto t0 = Clock::now();
    c.send(command(1, "tla", {{"type", "grasp"}}));
    REQUIRE(reply_for(c, 1));
    CHECK(since(t0) >= 0.3);
  }

  TEST_CASE("websocket clients speak the same schema") {
    Server srv(default_workspace(), ServerConfig{.realtime = false});
    srv.start();
    int fd = raw_connect(srv.port());
    std::string req =
        "GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
        "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n";
    REQUIRE(::send(fd, req.data(), req.size(), 0) == static_cast<ssize_t>(req.size()));
    std::string head;
    while (head.find("\r\n\r\n") == std::string::npos) {
      auto got = raw_read(fd, 2.0);
      REQUIRE_FALSE(got.empty());
      head += got;
    }
    CHECK(head.find("101 Switching Protocols") != std::string::npos);
    std::string rest = head.substr(head.find("\r\n\r\n") + 4);

    std::string frame = ws::encode(command(1, "tla", {{"type", "grasp"}}).dump(), ws::Opcode::Text, 0x12345678u);
    REQUIRE(::send(fd, frame.data(), frame.size(), 0) == static_cast<ssize_t>(frame.size()));
    ws::Decoder d;
    d.feed(rest);
    bool got_reply = false;
    auto t0 = Clock::now();
    while (!got_reply && since(t0) < 5.0) {
      while (auto m = d.next()) {
        auto j = json::parse(m->payload);
        if (j["type"] == "reply") {
          CHECK(j["seq"] == 1);
          CHECK(j["ok"] == true);
          got_reply = true;
        }
      }
      if (!got_reply) d.feed(raw_read(fd, 0.1));
    }
    CHECK(got_reply);
    std::string close = ws::encode("\x03\xe8", ws::Opcode::Close, 1u);
    ::send(fd, close.data(), close.size(), 0);
    CHECK(eventually([&] { return !srv.connected(); }));
    ::close(fd);
  }

  TEST_CASE("malformed input gets an error reply, the session stays up") {
    Server srv(default_workspace(), ServerConfig{.realtime = false});
    srv.start();
    Client c = Client::connect("127.0.0.1", srv.port());
    c.send_raw(protocol::encode_frame("{not json"));
    std::optional<json> err;
    auto t0 = Clock::now();
    while (!err && since(t0) < 5.0) {
      auto m = c.receive(0.1);
      if (m && (*m)["type"] == "reply") err = m;
    }
    REQUIRE(err);
    CHECK((*err)["code"] == "MalformedMessage");
    CHECK((*err)["seq"].is_null());
    c.send(command(1, "tla", {{"type", "submit_plan"}, {"areas", json::array()}}));
    auto r = reply_for(c, 1);
    REQUIRE(r);
    CHECK((*r)["code"] == "EmptyChecklist");
  }

  TEST_CASE("session log is JSON Lines with commands and events") {
    std::string path = "/tmp/teleop_server_log_test.jsonl";
    {
      Server srv(default_workspace(), ServerConfig{.realtime = false, .log_path = path});
      srv.start();
      Client c = Client::connect("127.0.0.1", srv.port());
      c.send(command(1, "cc", {{"type", "camera_nudge"}, {"axis", "z"}, {"sign", 1}}));
      REQUIRE(reply_for(c, 1));
      REQUIRE(eventually([&] { return srv.status().state == executor::ExecState::Idle && !srv.status().current_plan; }));
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    std::ifstream in(path);
    std::string line;
    int commands = 0, moving = 0, idle = 0;
    while (std::getline(in, line)) {
      auto j = json::parse(line);
      CHECK(j.contains("wall_time"));
      CHECK(j.contains("sim_time"));
      if (j.contains("command")) ++commands;
      if (j.contains("event")) {
        moving += j["event"]["kind"] == "robot_moving";
        idle += j["event"]["kind"] == "robot_idle";
      }
    }
    CHECK(commands == 1);
    CHECK(moving >= 1);
    CHECK(idle == moving);
    std::remove(path.c_str());
  }
}
