#pragma once

// WebSocket endpoint for display clients.
//   out, text:   one frame object per message (decimated channel)
//   out, binary: audio chunk, 8-byte little-endian tick then PCM16 samples
//   in,  text:   {"key_pos": <metres>}
// The server runs on its own thread and never blocks the tick loop: frames
// arrive through a drop-oldest subscriber, audio through the renderer ring.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nanotouch/feeds.hpp"
#include "nanotouch/session.hpp"

namespace nanotouch::ws {

struct ServerOptions {
    std::string host = "127.0.0.1";
    unsigned short port = 0;  // 0: pick a free port
    std::uint64_t frame_every = 50;
    std::size_t frame_queue = 8;
    std::size_t client_backlog = 64;  // queued messages per client before dropping
    double tick_rate = 3000.0;
    double sample_rate = 48000.0;
    int poll_ms = 10;
};

// "host:port" -> (host, port). Throws std::invalid_argument.
std::pair<std::string, unsigned short> parse_listen_address(const std::string& addr);

// Audio chunk message: tick of the first sample (1-based tick that produced
// it), little-endian, followed by the samples as PCM16 little-endian.
std::vector<std::uint8_t> encode_audio_chunk(std::uint64_t tick, std::span<const float> samples);

// Parses an inbound client message. Returns the key position when the
// message is a JSON object with a numeric key_pos.
std::optional<double> parse_key_message(const std::string& text);

class Server {
public:
    Server(const ServerOptions& opt, session::Publisher& pub, feeds::AudioRing& audio, session::KeyMailbox& keys);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    void start();
    void stop();
    unsigned short port() const;
    std::size_t clients() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace nanotouch::ws
