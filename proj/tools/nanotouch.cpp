// nanotouch: run, sweep and replay sessions from the command line.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "nanotouch/session.hpp"
#include "nanotouch/ws_server.hpp"

using namespace nanotouch;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    return out;
}

void report_frames(const std::vector<session::Frame>& frames) {
    int any = 0;
    for (const auto& f : frames) any |= f.flags;
    const auto& last = frames.back();
    std::printf("ticks %llu  t %.6g s  fault %s  active %s  dropouts %s\n",
                static_cast<unsigned long long>(last.tick), last.t, (last.flags & session::flag_fault) ? "yes" : "no",
                (any & session::flag_active) ? "yes" : "no", (any & session::flag_dropout) ? "yes" : "no");
}

int run_sweep_mode(const session::SessionConfig& cfg, const std::optional<std::string>& csv,
                   const std::optional<std::string>& events, const std::optional<std::string>& record) {
    std::optional<std::ofstream> rec;
    if (record) rec = open_out(*record);
    const auto out = session::run_sweep_session(cfg, rec ? &*rec : nullptr);
    if (csv) {
        auto f = open_out(*csv);
        curve::write_trace_csv(f, out.trace);
    }
    const std::string ev = curve::events_json(out.events);
    if (events) {
        auto f = open_out(*events);
        f << ev << '\n';
    } else {
        std::cout << ev << '\n';
    }
    const auto m = curve::morphology(out.trace, out.events);
    std::printf("samples %zu  snap_in %s  snap_off %s  morphology %s\n", out.trace.samples.size(),
                out.events.snap_in ? "yes" : "no", out.events.snap_off ? "yes" : "no", m.all() ? "A-E" : "incomplete");
    return 0;
}

int run_interactive(const session::SessionConfig& cfg, double duration) {
    session::Session s(cfg);
    session::KeyMailbox keys;
    ws::ServerOptions opt;
    if (cfg.listen_address) std::tie(opt.host, opt.port) = ws::parse_listen_address(*cfg.listen_address);
    opt.frame_every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg.tick_rate / cfg.ui_rate)));
    opt.frame_queue = cfg.queue_depth;
    opt.tick_rate = cfg.tick_rate;
    opt.sample_rate = cfg.audio.sample_rate;
    ws::Server server(opt, s.publisher(), s.audio().ring(), keys);
    server.start();
    std::printf("listening on ws://%s:%u\n", opt.host.c_str(), server.port());
    std::fflush(stdout);

    std::optional<std::ofstream> rec_file;
    std::optional<session::BackgroundRecorder> rec;
    if (cfg.record_path) {
        rec_file = open_out(*cfg.record_path);
        rec.emplace(s.publisher(), *rec_file);
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::thread timer;
    if (duration > 0.0) {
        timer = std::thread([duration] {
            const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(duration);
            while (!g_stop.load() && std::chrono::steady_clock::now() < end) {
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            g_stop.store(true);
        });
    }
    const auto st = session::run_paced(s, keys, g_stop);
    g_stop.store(true);
    if (timer.joinable()) timer.join();
    server.stop();
    std::uint64_t dropped = 0;
    if (rec) {
        rec->finish();
        dropped = rec->dropped();
    }
    std::printf("ticks %llu  overruns %llu  recorder drops %llu  fault %s\n", static_cast<unsigned long long>(st.ticks),
                static_cast<unsigned long long>(st.overruns), static_cast<unsigned long long>(dropped),
                s.faulted() ? "yes" : "no");
    return s.faulted() ? 3 : 0;
}

int run_scripted_mode(const session::SessionConfig& cfg, const std::optional<std::string>& wav) {
    const auto profile = session::load_profile(*cfg.profile_path);
    std::optional<std::ofstream> rec;
    if (cfg.record_path) rec = open_out(*cfg.record_path);
    std::vector<float> audio;
    const auto frames = session::run_scripted(cfg, profile, rec ? &*rec : nullptr, wav ? &audio : nullptr);
    if (wav) feeds::write_wav(*wav, feeds::to_pcm16(audio), static_cast<int>(cfg.audio.sample_rate));
    report_frames(frames);
    return (frames.back().flags & session::flag_fault) ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nanotouch: force-curve simulator with a haptic coupling"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Reserved; the simulation draws no random numbers");

    std::string config;
    double duration = 0.0;
    std::optional<std::string> wav;
    auto* run = app.add_subcommand("run", "Run the session described by a config file (its mode decides how)");
    run->add_option("--config", config, "Session config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--duration", duration, "Interactive: stop after this many seconds (default: until Ctrl-C)");
    run->add_option("--wav", wav, "Scripted: also write the rendered audio");

    std::string sweep_config;
    std::optional<std::string> csv, events, sweep_record;
    auto* sweep = app.add_subcommand("sweep", "Approach-retract sweep to a trace CSV and an events file");
    sweep->add_option("--config", sweep_config, "Session config with a sweep section")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", csv, "Trace CSV");
    sweep->add_option("--events", events, "Events JSON (default: stdout)");
    sweep->add_option("--record", sweep_record, "Also record one frame per trace sample");

    std::string in_path;
    std::optional<std::string> out_path, replay_config;
    auto* rep = app.add_subcommand("replay", "Re-run a recording and compare every frame");
    rep->add_option("--in", in_path, "Recording (newline-delimited frames)")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", out_path, "Write the replayed frames here");
    rep->add_option("--config", replay_config, "Config to replay under (default: desk defaults)")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    (void)seed;

    try {
        if (*run) {
            const auto cfg = session::load_config(config);
            switch (cfg.mode) {
                case session::Mode::interactive: return run_interactive(cfg, duration);
                case session::Mode::scripted: return run_scripted_mode(cfg, wav);
                case session::Mode::sweep: return run_sweep_mode(cfg, std::nullopt, std::nullopt, cfg.record_path);
            }
        }
        if (*sweep) {
            auto cfg = session::load_config(sweep_config);
            if (!cfg.sweep) throw std::runtime_error("config has no sweep section");
            return run_sweep_mode(cfg, csv, events, sweep_record);
        }
        if (*rep) {
            const auto cfg = replay_config ? session::load_config(*replay_config) : session::default_config();
            std::ifstream in(in_path);
            std::optional<std::ofstream> out;
            if (out_path) out = open_out(*out_path);
            const auto r = session::replay(cfg, in, out ? &*out : nullptr);
            std::printf("frames %zu  replayed %zu  mismatches %zu", r.recorded.size(), r.replayed.size(), r.mismatches);
            if (r.first_mismatch) std::printf("  first at frame %zu", *r.first_mismatch);
            std::printf("\n");
            return r.mismatches == 0 && r.replayed.size() == r.recorded.size() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "nanotouch: %s\n", e.what());
        return 2;
    }
    return 0;
}
