#pragma once

// Text CAN capture logs, one frame per line:
//
//   (1600000000.123456) can0 123#DEADBEEF
//
// Timestamps are kept as integer microseconds end to end so that log
// round-trips and downstream artifacts are byte-exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xcanids/dbc.hpp"
#include "xcanids/error.hpp"
#include "xcanids/util.hpp"

namespace xcanids {

using TimeUs = std::int64_t;  // microseconds

constexpr TimeUs kUsPerSec = 1'000'000;

inline double to_seconds(TimeUs t) { return static_cast<double>(t) / kUsPerSec; }
inline TimeUs from_seconds(double s) { return static_cast<TimeUs>(std::llround(s * kUsPerSec)); }

struct CanMessage {
    TimeUs time_us = 0;
    std::uint32_t aid = 0;
    std::vector<std::uint8_t> payload;  // dlc bytes, 0..8
    std::string iface = "can0";        // preserved on read, never interpreted

    unsigned dlc() const { return static_cast<unsigned>(payload.size()); }

    friend bool operator==(const CanMessage&, const CanMessage&) = default;
};

namespace detail {

inline int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

// Grammar: '(' seconds '.' 6-digit-microseconds ') ' iface ' ' aid-hex '#' payload-hex
inline std::optional<CanMessage> parse_log_line(std::string_view line, std::size_t line_no) {
    auto fail = [&](const char* why) -> std::optional<CanMessage> {
        throw ParseError(std::string(why), line_no);
    };
    std::size_t i = 0;
    if (line.empty() || line[0] != '(') return fail("expected '('");
    ++i;
    std::size_t dot = line.find('.', i);
    if (dot == std::string_view::npos || dot == i) return fail("malformed timestamp");
    std::uint64_t sec = parse_u64(line.substr(i, dot - i), 10, line_no);
    if (dot + 7 > line.size()) return fail("malformed timestamp");
    std::string_view frac = line.substr(dot + 1, 6);
    for (char c : frac)
        if (c < '0' || c > '9') return fail("timestamp fraction must be 6 digits");
    std::uint64_t usec = parse_u64(frac, 10, line_no);
    i = dot + 7;
    if (i + 2 > line.size() || line[i] != ')' || line[i + 1] != ' ')
        return fail("expected ') ' after timestamp");
    i += 2;
    std::size_t sp = line.find(' ', i);
    if (sp == std::string_view::npos || sp == i) return fail("missing interface field");
    CanMessage msg;
    msg.iface = std::string(line.substr(i, sp - i));
    i = sp + 1;
    std::size_t hash = line.find('#', i);
    if (hash == std::string_view::npos || hash == i || hash - i > 3)
        return fail("malformed arbitration id");
    std::uint32_t aid = 0;
    for (std::size_t k = i; k < hash; ++k) {
        int nib = hex_nibble(line[k]);
        if (nib < 0) return fail("malformed arbitration id");
        aid = aid << 4 | static_cast<std::uint32_t>(nib);
    }
    msg.aid = aid;
    i = hash + 1;
    std::string_view hex = trim(line.substr(i));
    if (hex.size() % 2 != 0) return fail("odd payload hex length");
    if (hex.size() > 16) return fail("payload exceeds 8 bytes");
    msg.payload.reserve(hex.size() / 2);
    for (std::size_t k = 0; k < hex.size(); k += 2) {
        int hi = hex_nibble(hex[k]), lo = hex_nibble(hex[k + 1]);
        if (hi < 0 || lo < 0) return fail("malformed payload hex");
        msg.payload.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    msg.time_us = static_cast<TimeUs>(sec) * kUsPerSec + static_cast<TimeUs>(usec);
    return msg;
}

}  // namespace detail

// Lazy reader. With skip_malformed, grammar errors are counted and skipped
// instead of thrown; ordering violations always throw since every consumer
// relies on non-decreasing timestamps.
class LogReader {
public:
    explicit LogReader(std::istream& in, bool skip_malformed = false)
        : in_(in), skip_(skip_malformed) {}

    std::optional<CanMessage> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            std::string_view v = trim(line);
            if (v.empty() || v[0] == '#') continue;
            std::optional<CanMessage> msg;
            if (skip_) {
                try {
                    msg = detail::parse_log_line(v, line_no_);
                } catch (const ParseError&) {
                    ++skipped_;
                    continue;
                }
            } else {
                msg = detail::parse_log_line(v, line_no_);
            }
            if (msg->time_us < last_time_)
                throw DataError("line " + std::to_string(line_no_) +
                                ": timestamp decreases");
            last_time_ = msg->time_us;
            return msg;
        }
        return std::nullopt;
    }

    std::size_t skipped() const { return skipped_; }
    std::size_t lines_read() const { return line_no_; }

private:
    std::istream& in_;
    bool skip_;
    std::size_t line_no_ = 0;
    std::size_t skipped_ = 0;
    TimeUs last_time_ = std::numeric_limits<TimeUs>::min();
};

inline std::vector<CanMessage> read_log(std::istream& in, bool skip_malformed = false,
                                        std::size_t* skipped = nullptr) {
    LogReader reader(in, skip_malformed);
    std::vector<CanMessage> out;
    while (auto msg = reader.next()) out.push_back(std::move(*msg));
    if (skipped) *skipped = reader.skipped();
    return out;
}

inline std::vector<CanMessage> read_log_file(const std::string& path, bool skip_malformed = false,
                                             std::size_t* skipped = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return read_log(in, skip_malformed, skipped);
}

inline void write_log_line(std::ostream& os, const CanMessage& msg) {
    char head[48];
    std::snprintf(head, sizeof(head), "(%lld.%06lld) ",
                  static_cast<long long>(msg.time_us / kUsPerSec),
                  static_cast<long long>(msg.time_us % kUsPerSec));
    os << head << msg.iface << ' ' << format_aid_hex(msg.aid) << '#';
    static const char* digits = "0123456789ABCDEF";
    for (std::uint8_t b : msg.payload) os << digits[b >> 4] << digits[b & 0xf];
    os << '\n';
}

inline void write_log(std::ostream& os, const std::vector<CanMessage>& log) {
    TimeUs last = std::numeric_limits<TimeUs>::min();
    for (const auto& msg : log) {
        if (msg.time_us < last) throw DataError("log timestamps decrease");
        if (msg.time_us < 0) throw DataError("negative timestamp");
        last = msg.time_us;
        write_log_line(os, msg);
    }
}

inline void write_log_file(const std::string& path, const std::vector<CanMessage>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_log(out, log);
}

// Per-AID traffic summary. Interval statistics are left empty for streams
// with fewer than two frames.
struct StreamStats {
    std::uint32_t aid = 0;
    std::size_t message_count = 0;
    unsigned dlc = 0;  // of the first frame
    std::size_t unique_payloads = 0;
    std::optional<double> mean_dt_s;
    std::optional<double> std_dt_s;  // population
    std::string sender;              // filled when a database is supplied
    std::size_t signal_count = 0;    // likewise
    bool in_database = false;
};

inline std::vector<StreamStats> stream_stats(const std::vector<CanMessage>& log,
                                             const CanDatabase* db = nullptr) {
    struct Acc {
        StreamStats st;
        std::set<std::vector<std::uint8_t>> payloads;
        std::vector<double> dts;
        TimeUs last = 0;
    };
    std::map<std::uint32_t, Acc> by_aid;
    for (const auto& msg : log) {
        auto [it, inserted] = by_aid.try_emplace(msg.aid);
        Acc& a = it->second;
        if (inserted) {
            a.st.aid = msg.aid;
            a.st.dlc = msg.dlc();
        } else {
            a.dts.push_back(to_seconds(msg.time_us - a.last));
        }
        a.last = msg.time_us;
        ++a.st.message_count;
        a.payloads.insert(msg.payload);
    }
    std::vector<StreamStats> out;
    out.reserve(by_aid.size());
    for (auto& [aid, a] : by_aid) {
        a.st.unique_payloads = a.payloads.size();
        if (!a.dts.empty()) {
            double mean = 0;
            for (double d : a.dts) mean += d;
            mean /= static_cast<double>(a.dts.size());
            double var = 0;
            for (double d : a.dts) var += (d - mean) * (d - mean);
            var /= static_cast<double>(a.dts.size());
            a.st.mean_dt_s = mean;
            a.st.std_dt_s = std::sqrt(var);
        }
        if (db) {
            if (const MessageSpec* m = db->find(aid)) {
                a.st.sender = m->sender;
                a.st.signal_count = m->signals.size();
                a.st.in_database = true;
            }
        }
        out.push_back(std::move(a.st));
    }
    return out;
}

// Mean bit-transition profile of one stream: element k is the fraction of
// consecutive frame pairs whose payloads differ at bit k (byte k/8, bit k%8
// counted from the LSB). Needs at least two frames of equal length.
struct HammingProfile {
    std::uint32_t aid = 0;
    std::size_t message_count = 0;
    std::vector<double> d;  // dlc*8 elements
    std::size_t flipped_positions = 0;
    double sum = 0.0;
};

inline HammingProfile hamming_profile(const std::vector<CanMessage>& log, std::uint32_t aid) {
    const std::vector<std::uint8_t>* prev = nullptr;
    std::vector<std::size_t> flips;
    std::size_t count = 0;
    for (const auto& msg : log) {
        if (msg.aid != aid) continue;
        ++count;
        if (prev) {
            if (msg.payload.size() != prev->size())
                throw DataError("AID " + format_aid_hex(aid) + " mixes payload lengths");
            for (std::size_t k = 0; k < flips.size(); ++k) {
                unsigned a = ((*prev)[k / 8] >> (k % 8)) & 1;
                unsigned b = (msg.payload[k / 8] >> (k % 8)) & 1;
                flips[k] += a ^ b;
            }
        } else {
            flips.assign(msg.payload.size() * 8, 0);
        }
        prev = &msg.payload;
    }
    if (count < 2)
        throw DataError("AID " + format_aid_hex(aid) + " has fewer than two frames");
    HammingProfile p;
    p.aid = aid;
    p.message_count = count;
    p.d.resize(flips.size());
    for (std::size_t k = 0; k < flips.size(); ++k) {
        p.d[k] = static_cast<double>(flips[k]) / static_cast<double>(count - 1);
        if (flips[k] > 0) ++p.flipped_positions;
        p.sum += p.d[k];
    }
    return p;
}

// Profiles for every AID with at least two frames; single-frame streams are
// skipped (their transition profile is undefined).
struct HammingSummary {
    std::vector<HammingProfile> per_aid;
    double total = 0.0;               // sum of every per-AID profile sum
    std::size_t flipped_positions = 0;
    std::size_t skipped_streams = 0;
};

inline HammingSummary hamming_profiles(const std::vector<CanMessage>& log) {
    std::map<std::uint32_t, std::size_t> counts;
    for (const auto& msg : log) ++counts[msg.aid];
    HammingSummary sum;
    for (const auto& [aid, n] : counts) {
        if (n < 2) {
            ++sum.skipped_streams;
            continue;
        }
        sum.per_aid.push_back(hamming_profile(log, aid));
        sum.total += sum.per_aid.back().sum;
        sum.flipped_positions += sum.per_aid.back().flipped_positions;
    }
    return sum;
}

}  // namespace xcanids
