#include "nanotouch/ws_server.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <deque>
#include <set>
#include <stdexcept>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"

namespace nanotouch::ws {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

std::pair<std::string, unsigned short> parse_listen_address(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0) throw std::invalid_argument("listen address must be host:port, got '" + addr + "'");
    const std::string host = addr.substr(0, colon);
    const std::string port = addr.substr(colon + 1);
    unsigned value = 0;
    const auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (ec != std::errc() || end != port.data() + port.size() || value > 65535) {
        throw std::invalid_argument("bad port in listen address '" + addr + "'");
    }
    return {host, static_cast<unsigned short>(value)};
}

std::vector<std::uint8_t> encode_audio_chunk(std::uint64_t tick, std::span<const float> samples) {
    const auto pcm = feeds::to_pcm16(samples);
    std::vector<std::uint8_t> out;
    out.reserve(8 + 2 * pcm.size());
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((tick >> (8 * i)) & 0xFF));
    for (std::int16_t s : pcm) {
        const auto u = static_cast<std::uint16_t>(s);
        out.push_back(static_cast<std::uint8_t>(u & 0xFF));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
    }
    return out;
}

std::optional<double> parse_key_message(const std::string& text) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    const auto it = j.find("key_pos");
    if (it == j.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
}

namespace {

struct Message {
    bool binary = false;
    std::string data;
};

}  // namespace

struct Server::Impl {
    class Conn : public std::enable_shared_from_this<Conn> {
    public:
        Conn(tcp::socket sock, Impl& owner) : ws_(std::move(sock)), owner_(owner) {}

        void run() {
            ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
                if (ec) return self->drop();
                self->open_ = true;
                self->owner_.n_clients.fetch_add(1);
                self->read();
            });
        }

        void send(const std::shared_ptr<const Message>& m) {
            if (!open_) return;
            // Slow client: drop its oldest queued message, never the one in flight.
            if (queue_.size() >= owner_.opt.client_backlog) {
                queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
            }
            queue_.push_back(m);
            if (!writing_) write();
        }

        void close() {
            beast::error_code ec;
            beast::get_lowest_layer(ws_).socket().close(ec);
        }

    private:
        void read() {
            ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec) return self->drop();
                if (self->ws_.got_text()) {
                    if (auto k = parse_key_message(beast::buffers_to_string(self->buf_.data()))) {
                        self->owner_.keys.post(*k);
                    }
                }
                self->buf_.consume(self->buf_.size());
                self->read();
            });
        }

        void write() {
            writing_ = true;
            const auto& m = queue_.front();
            ws_.binary(m->binary);
            ws_.async_write(asio::buffer(m->data), [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec) return self->drop();
                self->queue_.pop_front();
                self->writing_ = false;
                if (!self->queue_.empty()) self->write();
            });
        }

        void drop() {
            if (open_) owner_.n_clients.fetch_sub(1);
            open_ = false;
            owner_.conns.erase(shared_from_this());
        }

        websocket::stream<beast::tcp_stream> ws_;
        Impl& owner_;
        beast::flat_buffer buf_;
        std::deque<std::shared_ptr<const Message>> queue_;
        bool writing_ = false;
        bool open_ = false;
    };

    Impl(const ServerOptions& o, session::Publisher& p, feeds::AudioRing& a, session::KeyMailbox& k)
        : opt(o), pub(p), audio(a), keys(k), acceptor(ioc), timer(ioc), scratch(a.capacity()) {}

    void accept() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
            if (ec) return;  // acceptor closed
            // Tracked from the start so that stop() can cut a pending handshake.
            auto c = std::make_shared<Conn>(std::move(sock), *this);
            conns.insert(c);
            c->run();
            accept();
        });
    }

    void poll() {
        timer.expires_after(std::chrono::milliseconds(opt.poll_ms));
        timer.async_wait([this](beast::error_code ec) {
            if (ec) return;
            pump();
            poll();
        });
    }

    // Moves queued frames and audio to every client. Runs on the io thread.
    void pump() {
        for (const auto& f : frames->drain()) {
            auto m = std::make_shared<Message>();
            m->data = session::frame_line(*f);
            broadcast(m);
        }
        std::uint64_t first = 0;
        const std::size_t n = audio.pop(scratch, &first);
        if (n > 0) {
            const auto tick = static_cast<std::uint64_t>(
                std::floor(static_cast<double>(first) * opt.tick_rate / opt.sample_rate + 1e-9)) + 1;
            const auto bytes = encode_audio_chunk(tick, std::span<const float>(scratch.data(), n));
            auto m = std::make_shared<Message>();
            m->binary = true;
            m->data.assign(bytes.begin(), bytes.end());
            broadcast(m);
        }
    }

    void broadcast(const std::shared_ptr<const Message>& m) {
        // send() may drop a connection from the set on error; iterate a copy.
        const auto snapshot = conns;
        for (const auto& c : snapshot) c->send(m);
    }

    ServerOptions opt;
    session::Publisher& pub;
    feeds::AudioRing& audio;
    session::KeyMailbox& keys;
    asio::io_context ioc;
    tcp::acceptor acceptor;
    asio::steady_timer timer;
    std::shared_ptr<session::Subscriber> frames;
    std::set<std::shared_ptr<Conn>> conns;
    std::atomic<std::size_t> n_clients{0};
    std::vector<float> scratch;
    std::thread thread;
    unsigned short bound_port = 0;
};

Server::Server(const ServerOptions& opt, session::Publisher& pub, feeds::AudioRing& audio, session::KeyMailbox& keys)
    : impl_(std::make_unique<Impl>(opt, pub, audio, keys)) {
    if (opt.frame_every == 0) throw std::invalid_argument("frame_every must be >= 1");
    if (opt.client_backlog < 2) throw std::invalid_argument("client_backlog must be >= 2");
    if (!(opt.tick_rate > 0.0) || !(opt.sample_rate > 0.0)) throw std::invalid_argument("rates must be > 0");
}

Server::~Server() { stop(); }

void Server::start() {
    auto& m = *impl_;
    if (m.thread.joinable()) return;
    const tcp::endpoint ep(asio::ip::make_address(m.opt.host), m.opt.port);
    m.acceptor.open(ep.protocol());
    m.acceptor.set_option(asio::socket_base::reuse_address(true));
    m.acceptor.bind(ep);
    m.acceptor.listen();
    m.bound_port = m.acceptor.local_endpoint().port();
    m.frames = m.pub.subscribe(m.opt.frame_queue, m.opt.frame_every);
    m.accept();
    m.poll();
    m.thread = std::thread([&m] { m.ioc.run(); });
}

void Server::stop() {
    auto& m = *impl_;
    if (!m.thread.joinable()) return;
    asio::post(m.ioc, [&m] {
        beast::error_code ec;
        m.acceptor.close(ec);
        m.timer.cancel();
        for (const auto& c : m.conns) c->close();
        m.conns.clear();
    });
    m.thread.join();
    m.pub.unsubscribe(m.frames);
}

unsigned short Server::port() const { return impl_->bound_port; }

std::size_t Server::clients() const { return impl_->n_clients.load(); }

}  // namespace nanotouch::ws
