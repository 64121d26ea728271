#include <chrono>
#include <cmath>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "doctest.h"
#include "json.hpp"
#include "nanotouch/session.hpp"
#include "nanotouch/ws_server.hpp"

using namespace nanotouch;

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct Received {
    bool binary = false;
    std::string data;
};

std::uint64_t le64(const std::string& d) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(d[static_cast<std::size_t>(i)]);
    return v;
}

template <class Pred>
bool wait_for(Pred p, std::chrono::milliseconds limit = std::chrono::milliseconds(3000)) {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (!p()) {
        if (std::chrono::steady_clock::now() > end) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
}

}  // namespace

TEST_CASE("listen address parsing") {
    CHECK(ws::parse_listen_address("127.0.0.1:8765") == std::make_pair(std::string("127.0.0.1"), static_cast<unsigned short>(8765)));
    CHECK(ws::parse_listen_address("::1:0").first == "::1");
    CHECK_THROWS_AS(ws::parse_listen_address("localhost"), std::invalid_argument);
    CHECK_THROWS_AS(ws::parse_listen_address(":80"), std::invalid_argument);
    CHECK_THROWS_AS(ws::parse_listen_address("h:70000"), std::invalid_argument);
    CHECK_THROWS_AS(ws::parse_listen_address("h:8x"), std::invalid_argument);
}

TEST_CASE("audio chunk layout") {
    const std::vector<float> s{1.0f, -1.0f, 0.5f};
    const auto b = ws::encode_audio_chunk(0x0102030405060708ull, s);
    const std::vector<std::uint8_t> expect{0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01,
                                           0xFF, 0x7F, 0x01, 0x80, 0x00, 0x40};
    CHECK(b == expect);
    CHECK(ws::encode_audio_chunk(7, {}).size() == 8);
}

TEST_CASE("key message parsing") {
    CHECK(ws::parse_key_message(R"({"key_pos": 0.01})") == 0.01);
    CHECK(ws::parse_key_message(R"({"key_pos": 0, "other": true})") == 0.0);
    CHECK_FALSE(ws::parse_key_message(R"({"key_pos": "0.01"})").has_value());
    CHECK_FALSE(ws::parse_key_message(R"({"pos": 0.01})").has_value());
    CHECK_FALSE(ws::parse_key_message(R"([0.01])").has_value());
    CHECK_FALSE(ws::parse_key_message("not json").has_value());
}

TEST_CASE("server: key input in, decimated frames and tick-stamped audio out") {
    const auto cfg = session::default_config();
    session::Session s(cfg);
    session::KeyMailbox keys;
    ws::ServerOptions opt;
    opt.frame_queue = 64;
    ws::Server server(opt, s.publisher(), s.audio().ring(), keys);
    server.start();
    REQUIRE(server.port() != 0);

    asio::io_context ioc;
    websocket::stream<tcp::socket> client(ioc);
    tcp::resolver resolver(ioc);
    asio::connect(client.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
    client.handshake("127.0.0.1", "/");
    REQUIRE(wait_for([&] { return server.clients() == 1; }));

    std::mutex mu;
    std::vector<Received> got;
    std::thread reader([&] {
        beast::flat_buffer buf;
        beast::error_code ec;
        while (true) {
            client.read(buf, ec);
            if (ec) break;
            std::lock_guard lock(mu);
            got.push_back({client.got_binary(), beast::buffers_to_string(buf.data())});
            buf.consume(buf.size());
        }
    });

    // Inbound key message reaches the mailbox.
    {
        client.text(true);
        client.write(asio::buffer(std::string(R"({"key_pos": 0.004})")));
    }
    REQUIRE(wait_for([&] { return keys.latest() == 0.004; }));
    // Junk is ignored.
    client.write(asio::buffer(std::string("hello")));

    for (int i = 0; i < 3000; ++i) {
        s.tick(keys.latest());
        if (i % 50 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    const std::uint64_t last_tick = s.last_frame().tick;
    REQUIRE(wait_for([&] {
        std::lock_guard lock(mu);
        std::size_t samples = 0;
        for (const auto& m : got) {
            if (m.binary) samples += (m.data.size() - 8) / 2;
        }
        return samples == 3000u * 16u;
    }));
    server.stop();
    reader.join();
    CHECK(server.clients() == 0);

    std::uint64_t prev_frame = 0;
    std::size_t frames = 0;
    std::uint64_t sample_index = 0;
    for (const auto& m : got) {
        if (!m.binary) {
            const auto f = session::frame_from_json(nlohmann::json::parse(m.data));
            CHECK(f.tick % 50 == 0);
            CHECK(f.tick > prev_frame);
            CHECK(f.tick <= last_tick);
            prev_frame = f.tick;
            ++frames;
            continue;
        }
        REQUIRE(m.data.size() >= 8);
        REQUIRE((m.data.size() - 8) % 2 == 0);
        // Tick that produced the chunk's first sample: 16 samples per tick.
        CHECK(le64(m.data) == sample_index / 16 + 1);
        sample_index += (m.data.size() - 8) / 2;
    }
    CHECK(frames >= 30);
    CHECK(prev_frame == 3000);
    // The key drove the piezo: 4 mm of key is 4 nm of piezo travel.
    CHECK(s.last_frame().key_pos == doctest::Approx(0.004));
}

TEST_CASE("server: clients come and go; stop with a client connected") {
    session::Publisher pub;
    feeds::AudioRing ring(64);
    session::KeyMailbox keys;
    ws::Server server(ws::ServerOptions{}, pub, ring, keys);
    server.start();
    CHECK(pub.subscribers() == 1);
    {
        asio::io_context ioc;
        websocket::stream<tcp::socket> c(ioc);
        tcp::resolver resolver(ioc);
        asio::connect(c.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
        c.handshake("127.0.0.1", "/");
        REQUIRE(wait_for([&] { return server.clients() == 1; }));
        c.close(websocket::close_code::normal);
    }
    CHECK(wait_for([&] { return server.clients() == 0; }));

    asio::io_context ioc;
    websocket::stream<tcp::socket> c(ioc);
    tcp::resolver resolver(ioc);
    asio::connect(c.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
    c.handshake("127.0.0.1", "/");
    REQUIRE(wait_for([&] { return server.clients() == 1; }));
    server.stop();
    CHECK(server.clients() == 0);
    CHECK(pub.subscribers() == 0);
}

TEST_CASE("server: option checks") {
    session::Publisher pub;
    feeds::AudioRing ring(8);
    session::KeyMailbox keys;
    ws::ServerOptions o;
    o.client_backlog = 1;
    CHECK_THROWS_AS(ws::Server(o, pub, ring, keys), std::invalid_argument);
    o = ws::ServerOptions{};
    o.frame_every = 0;
    CHECK_THROWS_AS(ws::Server(o, pub, ring, keys), std::invalid_argument);
}
