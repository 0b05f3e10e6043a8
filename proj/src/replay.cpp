#include "tracetwin/replay.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include "tracetwin/common.hpp"

namespace tracetwin::replay {

namespace {

void put_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 8);
    p[1] = static_cast<std::uint8_t>(v);
}
void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}
void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
}
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
    return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

sockaddr_in resolve(const SocketAddress& a) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(a.port);
    if (a.host.empty() || a.host == "0.0.0.0" || a.host == "*") {
        sa.sin_addr.s_addr = htonl(INADDR_ANY);
        return sa;
    }
    if (inet_pton(AF_INET, a.host.c_str(), &sa.sin_addr) == 1) return sa;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_DGRAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(a.host.c_str(), nullptr, &hints, &res) != 0 || !res)
        throw Error("cannot resolve host '" + a.host + "'");
    sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return sa;
}

std::string address_text(const sockaddr_in& sa) {
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof buf);
    return std::string(buf) + ":" + std::to_string(ntohs(sa.sin_port));
}

class UdpSocket {
public:
    UdpSocket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
        if (fd_ < 0) throw Error(errno_text("socket"));
    }
    ~UdpSocket() {
        if (fd_ >= 0) ::close(fd_);
    }
    UdpSocket(const UdpSocket&) = delete;
    UdpSocket& operator=(const UdpSocket&) = delete;
    int fd() const { return fd_; }

private:
    int fd_;
};

using Clock = std::chrono::steady_clock;

// Sleeps in short slices so a stop request is honored promptly, then spins
// for the last stretch before the deadline.
bool wait_until(Clock::time_point deadline, const std::stop_token& stop) {
    constexpr auto spin_margin = std::chrono::microseconds(200);
    constexpr auto slice = std::chrono::milliseconds(50);
    for (;;) {
        if (stop.stop_requested()) return false;
        const auto now = Clock::now();
        if (now >= deadline) return true;
        const auto left = deadline - now;
        if (left > spin_margin) {
            std::this_thread::sleep_for(std::min<Clock::duration>(left - spin_margin, slice));
        } else {
            std::this_thread::yield();
        }
    }
}

struct Segment {
    double on_s = 0;
    double off_s = 0;
    flowmap::Pattern pattern;
    sockaddr_in dst{};
};

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace

void encode_header(const PacketHeader& h, std::span<std::uint8_t, kHeaderSize> out) {
    std::uint8_t* p = out.data();
    put_u16(p, kMagic);
    p[2] = kVersion;
    p[3] = h.flags;
    put_u32(p + 4, h.flow_id);
    put_u32(p + 8, h.seq);
    put_u64(p + 12, h.tx_time_us);
    put_u16(p + 20, h.payload_size);
    put_u16(p + 22, 0);
}

std::optional<PacketHeader> decode_datagram(std::span<const std::uint8_t> d, DecodeError* why) {
    auto fail = [&](DecodeError e) -> std::optional<PacketHeader> {
        if (why) *why = e;
        return std::nullopt;
    };
    if (d.size() < kHeaderSize) return fail(DecodeError::too_short);
    const std::uint8_t* p = d.data();
    if (get_u16(p) != kMagic) return fail(DecodeError::bad_magic);
    if (p[2] != kVersion) return fail(DecodeError::bad_version);
    PacketHeader h;
    h.flags = p[3];
    h.flow_id = get_u32(p + 4);
    h.seq = get_u32(p + 8);
    h.tx_time_us = get_u64(p + 12);
    h.payload_size = get_u16(p + 20);
    if (h.payload_size != d.size()) return fail(DecodeError::size_mismatch);
    return h;
}

SocketAddress SocketAddress::parse(std::string_view s) {
    SocketAddress a;
    s = text::trim(s);
    const auto colon = s.rfind(':');
    if (colon == std::string_view::npos) {
        a.host = std::string(s);
        return a;
    }
    a.host = std::string(s.substr(0, colon));
    if (a.host.empty()) a.host = "0.0.0.0";
    const auto port = text::parse_int(s.substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) throw Error("invalid port in address '" + std::string(s) + "'");
    a.port = static_cast<std::uint16_t>(*port);
    return a;
}

double unix_now() {
    using namespace std::chrono;
    return static_cast<double>(duration_cast<microseconds>(system_clock::now().time_since_epoch()).count()) / 1e6;
}

std::uint64_t SendReport::total_sent() const {
    std::uint64_t n = 0;
    for (const auto& [id, f] : flows) n += f.sent;
    return n;
}

SendReport send(const flowmap::TrafficScript& script, const SendOptions& opts, std::stop_token stop) {
    using flowmap::EventKind;
    if (!(opts.speedup > 0)) throw Error("send: speedup must be > 0");
    flowmap::check_script(script);

    SendReport report;
    report.speedup = opts.speedup;
    const double stop_time = opts.stop_time.value_or(script.end_time());
    const std::optional<sockaddr_in> override_dst =
        opts.dst_override ? std::optional<sockaddr_in>(resolve(*opts.dst_override)) : std::nullopt;

    std::map<int, std::vector<Segment>> segments;
    std::map<int, Segment> open;
    for (const auto& e : script.events) {
        if (e.kind == EventKind::On) {
            Segment s;
            s.on_s = e.time_s;
            s.pattern = *e.pattern;
            if (override_dst) {
                s.dst = *override_dst;
            } else {
                s.dst.sin_family = AF_INET;
                s.dst.sin_addr.s_addr = htonl(e.dst_ip.addr);
                s.dst.sin_port = htons(e.dst_port);
            }
            open[e.flow_id] = s;
        } else {
            auto s = open.at(e.flow_id);
            s.off_s = std::min(e.time_s, stop_time);
            segments[e.flow_id].push_back(s);
            open.erase(e.flow_id);
        }
    }
    for (auto& [id, s] : open) {
        s.off_s = stop_time;
        segments[id].push_back(s);
    }

    UdpSocket sock;
    const sockaddr_in local = resolve(opts.bind);
    if (::bind(sock.fd(), reinterpret_cast<const sockaddr*>(&local), sizeof local) != 0)
        throw Error(errno_text(("bind " + opts.bind.str()).c_str()));

    for (const auto& [id, segs] : segments) {
        report.flows[id];
        for (const auto& s : segs)
            if (std::holds_alternative<flowmap::Burst>(s.pattern))
                report.warnings.push_back("flow " + std::to_string(id) + ": BURST pattern is not replayed");
    }

    // Script time zero, a short lead so every emitter is ready.
    const auto t_zero = Clock::now() + std::chrono::milliseconds(50);
    report.start_unix = unix_now() + 0.05;
    auto at = [&](double script_s) {
        return t_zero + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(script_s / opts.speedup));
    };

    std::mutex report_mutex;
    {
        std::vector<std::jthread> emitters;
        for (const auto& [flow_id, segs] : segments) {
            emitters.emplace_back([&, flow_id = flow_id, segs = segs] {
                FlowSendStats st;
                std::vector<double> deviations;
                std::mt19937_64 rng(opts.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(flow_id)));
                std::uint32_t seq = 0;
                std::vector<std::uint8_t> buf;
                for (const auto& seg : segs) {
                    double rate = 0;
                    int size = 0;
                    bool poisson = false;
                    if (const auto* p = std::get_if<flowmap::Periodic>(&seg.pattern)) {
                        rate = p->rate_msgs_s;
                        size = p->payload_bytes;
                    } else if (const auto* q = std::get_if<flowmap::Poisson>(&seg.pattern)) {
                        rate = q->rate_msgs_s;
                        size = q->payload_bytes;
                        poisson = true;
                    }
                    if (!(rate > 0) || !(seg.off_s > seg.on_s)) continue;
                    const auto begin = at(seg.on_s);
                    const auto end = at(seg.off_s);
                    st.active_seconds += std::chrono::duration<double>(end - begin).count();
                    const std::size_t wire = std::max<std::size_t>(kHeaderSize, static_cast<std::size_t>(size));
                    buf.assign(std::min(wire, kMaxDatagram), 0);
                    std::exponential_distribution<double> gap(rate);
                    const double interval = 1.0 / rate;
                    auto deadline = begin;
                    std::optional<Clock::time_point> prev_send;
                    while (deadline < end) {
                        if (!wait_until(deadline, stop)) break;
                        const auto sent_at = Clock::now();
                        PacketHeader h;
                        h.flow_id = static_cast<std::uint32_t>(flow_id);
                        h.seq = seq;
                        h.payload_size = static_cast<std::uint16_t>(buf.size());
                        h.tx_time_us = static_cast<std::uint64_t>(std::llround(unix_now() * 1e6));
                        encode_header(h, std::span<std::uint8_t, kHeaderSize>(buf.data(), kHeaderSize));
                        const auto n = ::sendto(sock.fd(), buf.data(), buf.size(), 0,
                                                reinterpret_cast<const sockaddr*>(&seg.dst), sizeof seg.dst);
                        if (n == static_cast<ssize_t>(buf.size())) {
                            ++st.sent;
                            ++seq;
                        } else {
                            ++st.send_errors;
                            if (st.errors.size() < 8) st.errors.push_back(errno_text("sendto"));
                        }
                        if (prev_send && !poisson) {
                            const double actual = std::chrono::duration<double>(sent_at - *prev_send).count();
                            deviations.push_back(std::fabs(actual - interval) * 1e3);
                        }
                        prev_send = sent_at;
                        const double step = poisson ? gap(rng) : interval;
                        deadline += std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(step));
                    }
                    if (stop.stop_requested()) break;
                }
                st.achieved_rate = st.active_seconds > 0 ? static_cast<double>(st.sent) / st.active_seconds : 0.0;
                st.interval_dev_p99_ms = percentile(deviations, 0.99);
                st.interval_dev_max_ms = deviations.empty() ? 0.0 : *std::max_element(deviations.begin(), deviations.end());
                std::lock_guard lock(report_mutex);
                report.flows[flow_id] = std::move(st);
            });
        }
        // Flows without segments still end at the same time as the script.
        wait_until(at(stop_time), stop);
    }
    report.duration_s = std::chrono::duration<double>(Clock::now() - t_zero).count();
    return report;
}

Receiver::Receiver(const SocketAddress& bind) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw Error(errno_text("socket"));
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    ::setsockopt(fd_, IPPROTO_IP, IP_PKTINFO, &one, sizeof one);
    const int rcvbuf = 8 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof rcvbuf);
    const sockaddr_in sa = resolve(bind);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        const auto msg = errno_text(("bind " + bind.str()).c_str());
        ::close(fd_);
        fd_ = -1;
        throw Error(msg);
    }
    sockaddr_in actual{};
    socklen_t len = sizeof actual;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&actual), &len);
    port_ = ntohs(actual.sin_port);
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &actual.sin_addr, buf, sizeof buf);
    host_ = buf;
}

Receiver::~Receiver() {
    if (fd_ >= 0) ::close(fd_);
}

PacketLog Receiver::run(double duration_s, std::stop_token stop, std::ostream* out) {
    PacketLog log;
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(duration_s));
    std::vector<std::uint8_t> buf(65536);
    alignas(cmsghdr) char control[256];
    for (;;) {
        if (stop.stop_requested()) break;
        if (duration_s > 0 && Clock::now() >= deadline) break;
        pollfd pfd{fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, 20);
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw Error(errno_text("poll"));
        }
        if (ready == 0) {
            if (out) out->flush();
            continue;
        }
        // Drain everything queued before polling again.
        for (;;) {
            sockaddr_in src{};
            iovec iov{buf.data(), buf.size()};
            msghdr msg{};
            msg.msg_name = &src;
            msg.msg_namelen = sizeof src;
            msg.msg_iov = &iov;
            msg.msg_iovlen = 1;
            msg.msg_control = control;
            msg.msg_controllen = sizeof control;
            const auto n = ::recvmsg(fd_, &msg, MSG_DONTWAIT);
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK) break;
                if (errno == EINTR) continue;
                throw Error(errno_text("recvmsg"));
            }
            const double rx = unix_now();
            auto h = decode_datagram(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
            if (!h) {
                ++log.malformed;
                continue;
            }
            std::string dst = host_ + ":" + std::to_string(port_);
            for (cmsghdr* c = CMSG_FIRSTHDR(&msg); c; c = CMSG_NXTHDR(&msg, c)) {
                if (c->cmsg_level == IPPROTO_IP && c->cmsg_type == IP_PKTINFO) {
                    in_pktinfo info{};
                    std::memcpy(&info, CMSG_DATA(c), sizeof info);
                    char a[INET_ADDRSTRLEN] = {};
                    inet_ntop(AF_INET, &info.ipi_addr, a, sizeof a);
                    dst = std::string(a) + ":" + std::to_string(port_);
                }
            }
            PacketRecord r{rx, static_cast<double>(h->tx_time_us) / 1e6, h->flow_id, h->seq,
                           static_cast<std::uint32_t>(n), address_text(src), std::move(dst)};
            if (out) write_packet_row(*out, r);
            log.rows.push_back(std::move(r));
        }
    }
    if (out) out->flush();
    return log;
}

PacketLog receive(const SocketAddress& bind, double duration_s, const std::optional<std::filesystem::path>& out,
                  std::stop_token stop) {
    Receiver rx(bind);
    if (!out) return rx.run(duration_s, stop);
    std::ofstream f(*out);
    if (!f) throw Error("cannot open '" + out->string() + "' for writing");
    write_packet_log_header(f);
    return rx.run(duration_s, stop, &f);
}

void write_packet_log_header(std::ostream& out) { out << "rx_time,tx_time,flow,seq,size,src,dst\n"; }

void write_packet_row(std::ostream& out, const PacketRecord& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,", r.rx_time, r.tx_time);
    out << buf << r.flow << ',' << r.seq << ',' << r.size << ',' << r.src << ',' << r.dst << '\n';
}

void write_packet_log(std::ostream& out, const PacketLog& log) {
    write_packet_log_header(out);
    for (const auto& r : log.rows) write_packet_row(out, r);
}

PacketLog read_packet_log(std::string_view content) {
    const Table t = read_table(content, ',', true);
    auto pick = [&](std::initializer_list<const char*> names, bool required) -> std::optional<std::size_t> {
        for (const char* n : names)
            if (auto c = t.column(n)) return c;
        if (required) throw Error(std::string("packet log is missing column '") + *names.begin() + "'");
        return std::nullopt;
    };
    const auto c_rx = pick({"rx_time", "recv_time", "rxtime"}, true);
    const auto c_tx = pick({"tx_time", "sent_time", "txtime"}, true);
    const auto c_flow = pick({"flow", "flow_id", "flowid"}, false);
    const auto c_seq = pick({"seq", "sequence", "seq_num"}, false);
    const auto c_size = pick({"size", "payload_size", "bytes"}, true);
    const auto c_src = pick({"src", "source"}, false);
    const auto c_dst = pick({"dst", "destination"}, false);
    PacketLog log;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        auto num = [&](std::optional<std::size_t> c) -> double {
            if (!c) return 0.0;
            if (*c >= row.size()) throw ParseError(t.line_numbers[r], "missing field");
            auto v = text::parse_double(row[*c]);
            if (!v) throw ParseError(t.line_numbers[r], "not a number: '" + row[*c] + "'");
            return *v;
        };
        auto str = [&](std::optional<std::size_t> c) -> std::string { return c && *c < row.size() ? row[*c] : ""; };
        PacketRecord rec;
        rec.rx_time = num(c_rx);
        rec.tx_time = num(c_tx);
        rec.flow = static_cast<std::uint32_t>(num(c_flow));
        rec.seq = static_cast<std::uint32_t>(num(c_seq));
        rec.size = static_cast<std::uint32_t>(num(c_size));
        rec.src = str(c_src);
        rec.dst = str(c_dst);
        log.rows.push_back(std::move(rec));
    }
    return log;
}

PacketLog read_packet_log_file(const std::string& path) { return read_packet_log(read_file(path)); }

}  // namespace tracetwin::replay
