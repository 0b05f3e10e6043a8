#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <vector>

#include "tracetwin/flowmap.hpp"

namespace tracetwin::replay {

// Datagram header, big-endian, 24 bytes:
//   magic u16 | version u8 | flags u8 | flow_id u32 | seq u32 |
//   tx_time_us u64 | payload_size u16 | reserved u16
// followed by zero padding up to payload_size. This is not the NRL MGEN
// binary format.
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::uint16_t kMagic = 0x5454;  // "TT"
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kMaxDatagram = 65507;

struct PacketHeader {
    std::uint32_t flow_id = 0;
    std::uint32_t seq = 0;
    std::uint64_t tx_time_us = 0;
    std::uint16_t payload_size = 0;
    std::uint8_t flags = 0;

    bool operator==(const PacketHeader&) const = default;
};

void encode_header(const PacketHeader& h, std::span<std::uint8_t, kHeaderSize> out);

enum class DecodeError { too_short, bad_magic, bad_version, size_mismatch };

/// Validates a whole datagram (header plus padding).
std::optional<PacketHeader> decode_datagram(std::span<const std::uint8_t> datagram, DecodeError* why = nullptr);

struct SocketAddress {
    std::string host = "0.0.0.0";
    std::uint16_t port = 0;

    /// "host:port", "host" (port 0) or ":port".
    static SocketAddress parse(std::string_view s);
    std::string str() const { return host + ":" + std::to_string(port); }
};

struct PacketRecord {
    double rx_time = 0;  // UNIX seconds
    double tx_time = 0;
    std::uint32_t flow = 0;
    std::uint32_t seq = 0;
    std::uint32_t size = 0;
    std::string src;
    std::string dst;
};

struct PacketLog {
    std::vector<PacketRecord> rows;
    std::uint64_t malformed = 0;
};

void write_packet_log_header(std::ostream& out);
void write_packet_row(std::ostream& out, const PacketRecord& r);
void write_packet_log(std::ostream& out, const PacketLog& log);

/// Header-driven reader for `mgen.csv`-style logs. Column names are matched
/// case-insensitively; `flow_id`/`sequence`/`payload_size` aliases are accepted.
PacketLog read_packet_log(std::string_view content);
PacketLog read_packet_log_file(const std::string& path);

struct SendOptions {
    SocketAddress bind{"0.0.0.0", 0};
    /// Send every flow to this address instead of the script's destinations.
    std::optional<SocketAddress> dst_override;
    /// Script time runs this many times faster; message rates are unchanged.
    double speedup = 1.0;
    /// Script time at which every flow stops; defaults to the last event time.
    std::optional<double> stop_time;
    std::uint64_t seed = 0;
};

struct FlowSendStats {
    std::uint64_t sent = 0;
    std::uint64_t send_errors = 0;
    double active_seconds = 0;   // wall time spent ON
    double achieved_rate = 0;    // sent / active_seconds
    double interval_dev_p99_ms = 0;
    double interval_dev_max_ms = 0;
    std::vector<std::string> errors;
};

struct SendReport {
    std::map<int, FlowSendStats> flows;
    double start_unix = 0;  // wall clock of script time 0
    double speedup = 1.0;
    double duration_s = 0;
    std::vector<std::string> warnings;

    std::uint64_t total_sent() const;
};

/// Replays a script: one emitter thread per flow with an absolute-deadline
/// schedule. Blocks until the script ends or `stop` is requested. Socket
/// failures are recorded per flow and do not stop the other flows.
SendReport send(const flowmap::TrafficScript& script, const SendOptions& opts, std::stop_token stop = {});

/// UDP receiver bound on construction; RAII socket.
class Receiver {
public:
    explicit Receiver(const SocketAddress& bind);
    ~Receiver();
    Receiver(const Receiver&) = delete;
    Receiver& operator=(const Receiver&) = delete;

    /// Actual bound port (useful when binding port 0).
    std::uint16_t port() const noexcept { return port_; }
    std::string host() const { return host_; }

    /// Receives until `duration_s` elapses (if > 0) or `stop` is requested.
    /// When `out` is given, rows are also appended to it as they arrive.
    PacketLog run(double duration_s, std::stop_token stop = {}, std::ostream* out = nullptr);

private:
    int fd_ = -1;
    std::string host_;
    std::uint16_t port_ = 0;
};

PacketLog receive(const SocketAddress& bind, double duration_s, const std::optional<std::filesystem::path>& out = {},
                  std::stop_token stop = {});

double unix_now();

}  // namespace tracetwin::replay
