#include <chrono>
#include <future>
#include <string>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include "support/scripted_client.hpp"
#include "tapstroop/server.hpp"
#include "tapstroop/storage.hpp"

namespace tapstroop {
namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

struct HttpReply {
  unsigned status;
  std::string body;
  std::string content_type;
};

HttpReply get(unsigned short port, const std::string& target) {
  boost::asio::io_context io;
  tcp::socket socket(io);
  socket.connect({boost::asio::ip::make_address("127.0.0.1"), port});
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(socket, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(socket, buffer, res);
  return {res.result_int(), res.body(), std::string(res[http::field::content_type])};
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server.on_session_end([this](const std::string& id, bool finished) { ended.set_value({id, finished}); });
    server.start();
  }

  SessionRegistry registry{ServiceConfig{}};
  Server server{registry, "127.0.0.1", 0};
  std::promise<std::pair<std::string, bool>> ended;
};

TEST_F(ServerTest, Healthz) {
  const auto r = get(server.port(), "/healthz");
  EXPECT_EQ(r.status, 200u);
  EXPECT_EQ(r.body, "ok\n");
}

TEST_F(ServerTest, UnknownRoutesAre404) {
  EXPECT_EQ(get(server.port(), "/nope").status, 404u);
  EXPECT_EQ(get(server.port(), "/session/abc/log").status, 404u);
  EXPECT_EQ(get(server.port(), "/session/abc/transient/x").status, 404u);
}

TEST_F(ServerTest, BadTokenIsRefused) {
  boost::asio::io_context io;
  tcp::socket socket(io);
  socket.connect({boost::asio::ip::make_address("127.0.0.1"), server.port()});
  http::request<http::empty_body> req{http::verb::get, "/session/deadbeef/ws", 11};
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::upgrade, "websocket");
  req.set(http::field::connection, "Upgrade");
  req.set(http::field::sec_websocket_key, "dGhlIHNhbXBsZSBub25jZQ==");
  req.set(http::field::sec_websocket_version, "13");
  http::write(socket, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(socket, buffer, res);
  EXPECT_EQ(res.result_int(), 403u);

  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect({boost::asio::ip::make_address("127.0.0.1"), server.port()});
  EXPECT_THROW(ws.handshake("127.0.0.1", "/session/deadbeef/ws"), boost::system::system_error);
}

TEST_F(ServerTest, FullSessionOverWebSocket) {
  const auto token = registry.issue_token();
  boost::asio::io_context io;
  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect({boost::asio::ip::make_address("127.0.0.1"), server.port()});
  ws.handshake("127.0.0.1", "/session/" + token + "/ws");
  ws.text(true);

  // Frames go out immediately; the client's own clock runs ahead to whatever
  // it last stamped so its timeline stays monotonic.
  testing::ScriptedClient client(token, {});
  std::int64_t client_now = 1000000;
  auto send = [&](const testing::Outgoing& o) {
    client_now = std::max(client_now, o.at_client_us);
    ws.write(boost::asio::buffer(o.text));
  };
  send(client.hello(client_now));
  while (!client.done()) {
    beast::flat_buffer frame;
    ws.read(frame);
    for (const auto& o : client.receive(parse_wire(beast::buffers_to_string(frame.data())), client_now)) send(o);
  }
  ASSERT_TRUE(client.summary()) << client.protocol_error().value_or(nlohmann::json{}).dump();
  ws.close(websocket::close_code::normal);

  auto done = ended.get_future();
  ASSERT_EQ(done.wait_for(std::chrono::seconds(10)), std::future_status::ready);
  EXPECT_EQ(done.get(), std::make_pair(token, true));

  const auto log = get(server.port(), "/session/" + token + "/log");
  ASSERT_EQ(log.status, 200u);
  const auto summary = analyze(read_log_string(log.body));
  EXPECT_FALSE(summary.partial);
  EXPECT_EQ(to_json(summary), *client.summary());

  for (const auto& m : client.received()) {
    if (m.type != "stimulus" || m.body["tactile"].is_null()) continue;
    const auto wav = get(server.port(), m.body["tactile"]["href"].get<std::string>());
    EXPECT_EQ(wav.status, 200u);
    EXPECT_EQ(wav.content_type, "audio/wav");
    EXPECT_EQ(wav.body.size(), 44u + 2u * m.body["tactile"]["samples"].get<std::size_t>());
    break;
  }

  // The token was spent.
  websocket::stream<tcp::socket> again(io);
  again.next_layer().connect({boost::asio::ip::make_address("127.0.0.1"), server.port()});
  EXPECT_THROW(again.handshake("127.0.0.1", "/session/" + token + "/ws"), boost::system::system_error);
}

TEST_F(ServerTest, DroppedConnectionFinalizesPartialLog) {
  const auto token = registry.issue_token();
  {
    boost::asio::io_context io;
    websocket::stream<tcp::socket> ws(io);
    ws.next_layer().connect({boost::asio::ip::make_address("127.0.0.1"), server.port()});
    ws.handshake("127.0.0.1", "/session/" + token + "/ws");
    ws.write(boost::asio::buffer(to_text(WireMessage{"hello", token, 1})));
    beast::flat_buffer frame;
    ws.read(frame);
  }
  auto done = ended.get_future();
  ASSERT_EQ(done.wait_for(std::chrono::seconds(10)), std::future_status::ready);
  EXPECT_EQ(done.get(), std::make_pair(token, false));
  EXPECT_EQ(get(server.port(), "/session/" + token + "/log").status, 404u);
  EXPECT_EQ(registry.active(), 0u);
}

}  // namespace
}  // namespace tapstroop
