#pragma once

// Parser and printer for the subset of the DBC message-database grammar this
// toolkit understands: VERSION, BU_, BO_ and plain (non-multiplexed) SG_
// entries. Every other keyword is skipped. Start bits use the usual DBC
// convention: for little-endian signals the start bit is the LSB position,
// for big-endian signals it is the MSB position in sawtooth numbering.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xcanids/error.hpp"
#include "xcanids/util.hpp"

namespace xcanids {

constexpr std::uint32_t kMaxAid = 0x7ff;  // 11-bit arbitration id space

struct SignalSpec {
    std::string name;
    unsigned start_bit = 0;
    unsigned bit_length = 1;
    bool little_endian = true;
    bool is_signed = false;
    double scale = 1.0;  // physical units per raw count, never 0
    double offset = 0.0;
    double min_phys = 0.0;
    double max_phys = 0.0;
    std::string unit;
    std::vector<std::string> receivers;

    friend bool operator==(const SignalSpec&, const SignalSpec&) = default;
};

struct MessageSpec {
    std::uint32_t aid = 0;
    std::string name;
    unsigned dlc = 0;  // payload bytes, 0..8
    std::string sender;
    std::vector<SignalSpec> signals;  // declaration order

    const SignalSpec* find_signal(std::string_view signal_name) const {
        for (const auto& s : signals)
            if (s.name == signal_name) return &s;
        return nullptr;
    }

    friend bool operator==(const MessageSpec&, const MessageSpec&) = default;
};

struct CanDatabase {
    std::optional<std::string> version;
    std::vector<std::string> ecus;
    std::map<std::uint32_t, MessageSpec> messages;  // keyed and ordered by AID

    const MessageSpec* find(std::uint32_t aid) const {
        auto it = messages.find(aid);
        return it == messages.end() ? nullptr : &it->second;
    }

    const MessageSpec& at(std::uint32_t aid) const {
        const MessageSpec* m = find(aid);
        if (!m) throw DataError("unknown AID 0x" + format_aid_hex(aid));
        return *m;
    }

    std::size_t total_signals() const {
        std::size_t n = 0;
        for (const auto& [aid, msg] : messages) n += msg.signals.size();
        return n;
    }

    friend bool operator==(const CanDatabase&, const CanDatabase&) = default;
};

// Bits the signal window can cover given the message length. Little-endian
// windows grow upward from the start bit; big-endian windows walk down to
// bit 0 of the start byte, then through the remaining bytes.
inline bool signal_fits(const SignalSpec& s, unsigned dlc) {
    if (s.little_endian) return s.start_bit + s.bit_length <= dlc * 8;
    unsigned byte = s.start_bit / 8;
    if (byte >= dlc) return false;
    return s.bit_length <= (s.start_bit % 8 + 1) + 8 * (dlc - 1 - byte);
}

namespace detail {

inline const std::regex& bo_regex() {
    static const std::regex re(R"(^BO_ (\d+) (\w+) *: (\d+) (\w+)\s*$)");
    return re;
}

inline const std::regex& sg_regex() {
    static const std::regex re(
        R"re(^SG_ (\w+) : (\d+)\|(\d+)@([01])([\+\-]) \(([^,]+),([^)]+)\) \[([^|]+)\|([^\]]+)\] "([^"]*)"\s*(.*?)\s*$)re");
    return re;
}

inline const std::regex& sg_mux_regex() {
    static const std::regex re(R"(^SG_ (\w+) (m\d+M?|M) *: .*$)");
    return re;
}

}  // namespace detail

// Parses DBC text. Throws ParseError with a line number on malformed or
// inconsistent entries and UnsupportedError on multiplexed signals, extended
// AIDs and payloads past 8 bytes. Unhandled keywords are skipped; when
// `notes` is given, one entry per skipped keyword kind is recorded.
inline CanDatabase parse_dbc(std::string_view text, std::vector<std::string>* notes = nullptr) {
    CanDatabase db;
    MessageSpec* current = nullptr;
    std::map<std::string, std::size_t> skipped;
    std::size_t line_no = 0;
    std::size_t pos = 0;

    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view raw = eol == std::string_view::npos ? text.substr(pos)
                                                             : text.substr(pos, eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        std::string line(trim(raw));
        if (line.empty()) continue;

        if (line.starts_with("VERSION")) {
            std::size_t a = line.find('"');
            std::size_t b = line.rfind('"');
            if (a == std::string::npos || b <= a)
                throw ParseError("malformed VERSION line", line_no);
            db.version = line.substr(a + 1, b - a - 1);
            continue;
        }

        if (line.starts_with("BU_:")) {
            std::string_view rest = trim(std::string_view(line).substr(4));
            for (auto tok : split(rest, ' '))
                if (!tok.empty()) db.ecus.emplace_back(tok);
            continue;
        }

        if (line.starts_with("BO_ ")) {
            std::smatch m;
            if (!std::regex_match(line, m, detail::bo_regex()))
                throw ParseError("malformed BO_ line", line_no);
            MessageSpec msg;
            std::uint64_t aid = parse_u64(m[1].str(), 10, line_no);
            if (aid > kMaxAid)
                throw UnsupportedError("line " + std::to_string(line_no) +
                                       ": extended arbitration id " + m[1].str());
            msg.aid = static_cast<std::uint32_t>(aid);
            msg.name = m[2];
            std::uint64_t dlc = parse_u64(m[3].str(), 10, line_no);
            if (dlc > 8)
                throw UnsupportedError("line " + std::to_string(line_no) +
                                       ": payload length " + m[3].str() + " exceeds 8 bytes");
            msg.dlc = static_cast<unsigned>(dlc);
            msg.sender = m[4];
            auto [it, inserted] = db.messages.emplace(msg.aid, std::move(msg));
            if (!inserted)
                throw ParseError("duplicate AID " + m[1].str(), line_no);
            current = &it->second;
            continue;
        }

        if (line.starts_with("SG_ ")) {
            if (!current)
                throw ParseError("SG_ outside of a BO_ block", line_no);
            if (std::regex_match(line, detail::sg_mux_regex()))
                throw UnsupportedError("line " + std::to_string(line_no) +
                                       ": multiplexed signals are not supported");
            std::smatch m;
            if (!std::regex_match(line, m, detail::sg_regex()))
                throw ParseError("malformed SG_ line", line_no);
            SignalSpec sig;
            sig.name = m[1];
            sig.start_bit = static_cast<unsigned>(parse_u64(m[2].str(), 10, line_no));
            sig.bit_length = static_cast<unsigned>(parse_u64(m[3].str(), 10, line_no));
            sig.little_endian = m[4] == "1";
            sig.is_signed = m[5] == "-";
            sig.scale = parse_double(m[6].str(), line_no);
            sig.offset = parse_double(m[7].str(), line_no);
            sig.min_phys = parse_double(m[8].str(), line_no);
            sig.max_phys = parse_double(m[9].str(), line_no);
            sig.unit = m[10];
            for (auto tok : split(m[11].str(), ','))
                if (auto t = trim(tok); !t.empty() && t != "Vector__XXX")
                    sig.receivers.emplace_back(t);

            if (sig.bit_length == 0 || sig.bit_length > 64)
                throw ParseError("signal width " + std::to_string(sig.bit_length) +
                                 " out of range", line_no);
            if (sig.scale == 0.0)
                throw ParseError("scale factor must be nonzero", line_no);
            if (sig.min_phys > sig.max_phys)
                throw ParseError("min exceeds max", line_no);
            if (!signal_fits(sig, current->dlc))
                throw ParseError("signal window exceeds the " + std::to_string(current->dlc) +
                                 "-byte payload", line_no);
            if (current->find_signal(sig.name))
                throw ParseError("duplicate signal " + sig.name, line_no);
            current->signals.push_back(std::move(sig));
            continue;
        }

        // Anything else: record the leading keyword and drop the line.
        std::size_t sp = line.find_first_of(" \t:");
        ++skipped[line.substr(0, sp)];
    }

    if (notes)
        for (const auto& [kw, n] : skipped)
            notes->push_back("skipped " + std::to_string(n) + " line(s) of " + kw);
    return db;
}

inline CanDatabase parse_dbc_file(const std::string& path, std::vector<std::string>* notes = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dbc(ss.str(), notes);
}

// Prints the supported subset back out. parse_dbc(print_dbc(db)) reproduces
// `db` exactly; numbers use shortest round-trip formatting.
inline std::string print_dbc(const CanDatabase& db) {
    std::ostringstream out;
    if (db.version) out << "VERSION \"" << *db.version << "\"\n\n";
    out << "BU_:";
    for (const auto& e : db.ecus) out << ' ' << e;
    out << "\n";
    for (const auto& [aid, msg] : db.messages) {
        out << "\nBO_ " << aid << ' ' << msg.name << ": " << msg.dlc << ' ' << msg.sender << "\n";
        for (const auto& s : msg.signals) {
            out << " SG_ " << s.name << " : " << s.start_bit << '|' << s.bit_length << '@'
                << (s.little_endian ? '1' : '0') << (s.is_signed ? '-' : '+') << " ("
                << format_double(s.scale) << ',' << format_double(s.offset) << ") ["
                << format_double(s.min_phys) << '|' << format_double(s.max_phys) << "] \""
                << s.unit << "\" ";
            if (s.receivers.empty()) {
                out << "Vector__XXX";
            } else {
                for (std::size_t i = 0; i < s.receivers.size(); ++i)
                    out << (i ? "," : "") << s.receivers[i];
            }
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace xcanids
