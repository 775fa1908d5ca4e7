#pragma once

// Chooses which signals become feature dimensions. A signal is dropped when
// its clamped physical value never changes over the training capture, when
// its name contains a blocklisted keyword (checksums, alive counters and
// similar protocol bookkeeping), or when its stream never appears in the
// capture at all. The surviving signals, in database order, define the
// feature vector layout shared by every downstream stage.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xcanids/canlog.hpp"
#include "xcanids/dbc.hpp"
#include "xcanids/deserialize.hpp"
#include "xcanids/error.hpp"
#include "xcanids/util.hpp"

namespace xcanids {

inline const std::vector<std::string>& default_exclude_keywords() {
    static const std::vector<std::string> kw = {"sum",      "alive",     "msgcount",
                                                "msgcnt",   "paritybit", "mul_code"};
    return kw;
}

enum class ExcludeReason { static_value, keyword, absent };

inline const char* to_string(ExcludeReason r) {
    switch (r) {
        case ExcludeReason::static_value: return "static";
        case ExcludeReason::keyword: return "keyword";
        case ExcludeReason::absent: return "absent";
    }
    return "?";
}

struct SignalSelection {
    struct Entry {
        std::uint32_t aid = 0;
        std::string signal;
        friend bool operator==(const Entry&, const Entry&) = default;
    };
    struct Exclusion {
        std::uint32_t aid = 0;
        std::string signal;
        ExcludeReason reason = ExcludeReason::static_value;
        friend bool operator==(const Exclusion&, const Exclusion&) = default;
    };
    std::vector<Entry> included;    // feature order; index in this vector = feature index
    std::vector<Exclusion> excluded;
    std::vector<std::string> warnings;

    friend bool operator==(const SignalSelection& a, const SignalSelection& b) {
        return a.included == b.included && a.excluded == b.excluded;
    }
};

namespace detail {

inline bool name_matches_keyword(std::string_view name, const std::vector<std::string>& keywords) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& kw : keywords)
        if (lower.find(kw) != std::string::npos) return true;
    return false;
}

}  // namespace detail

inline SignalSelection select_signals(const CanDatabase& db, const std::vector<CanMessage>& log,
                                      const std::vector<std::string>& keywords =
                                          default_exclude_keywords()) {
    // Group payloads per AID once; constancy needs every frame of a stream.
    std::map<std::uint32_t, std::vector<const CanMessage*>> frames;
    for (const auto& msg : log) frames[msg.aid].push_back(&msg);

    SignalSelection sel;
    for (const auto& [aid, msg] : db.messages) {
        auto it = frames.find(aid);
        if (it == frames.end()) {
            sel.warnings.push_back("AID " + format_aid_hex(aid) + " (" + msg.name +
                                   ") never appears in the capture");
            for (const auto& sig : msg.signals)
                sel.excluded.push_back({aid, sig.name, ExcludeReason::absent});
            continue;
        }
        for (const auto& sig : msg.signals) {
            if (detail::name_matches_keyword(sig.name, keywords)) {
                sel.excluded.push_back({aid, sig.name, ExcludeReason::keyword});
                continue;
            }
            bool constant = true;
            bool first = true;
            double first_value = 0.0;
            for (const CanMessage* f : it->second) {
                if (!signal_fits(sig, f->dlc())) continue;  // short rogue frame
                double v = decode_clamped(extract_bits(f->payload, sig), sig).value;
                if (first) {
                    first_value = v;
                    first = false;
                } else if (v != first_value) {
                    constant = false;
                    break;
                }
            }
            if (first) {  // no frame ever fit the window
                sel.excluded.push_back({aid, sig.name, ExcludeReason::absent});
            } else if (constant) {
                sel.excluded.push_back({aid, sig.name, ExcludeReason::static_value});
            } else {
                sel.included.push_back({aid, sig.name});
            }
        }
    }
    return sel;
}

// Text manifest, tab separated:
//   included rows:  index  aid-hex  signal  min  max
//   excluded rows:  aid-hex  signal  reason
// The 64-bit fingerprint of this text ties features, model and calibration
// to one selection.
inline std::string selection_manifest(const SignalSelection& sel, const CanDatabase& db) {
    std::ostringstream out;
    out << "#xcanids-selection v1\n";
    out << "#index\taid\tsignal\tmin\tmax\n";
    for (std::size_t i = 0; i < sel.included.size(); ++i) {
        const auto& e = sel.included[i];
        const SignalSpec* spec = db.at(e.aid).find_signal(e.signal);
        if (!spec) throw DataError("signal " + e.signal + " missing from database");
        out << i << '\t' << format_aid_hex(e.aid) << '\t' << e.signal << '\t'
            << format_double(spec->min_phys) << '\t' << format_double(spec->max_phys) << '\n';
    }
    out << "#excluded\taid\tsignal\treason\n";
    for (const auto& e : sel.excluded)
        out << format_aid_hex(e.aid) << '\t' << e.signal << '\t' << to_string(e.reason) << '\n';
    return out.str();
}

inline std::uint64_t selection_hash(const std::string& manifest_text) {
    return fnv1a64(manifest_text);
}

inline SignalSelection parse_selection_manifest(std::string_view text) {
    SignalSelection sel;
    bool in_excluded = false;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.starts_with("#excluded")) in_excluded = true;
            continue;
        }
        auto cols = split(line, '\t');
        if (!in_excluded) {
            if (cols.size() != 5) throw ParseError("expected 5 columns", line_no);
            std::size_t index = parse_u64(cols[0], 10, line_no);
            if (index != sel.included.size())
                throw ParseError("indices must be dense and start at 0", line_no);
            sel.included.push_back({static_cast<std::uint32_t>(parse_u64(cols[1], 16, line_no)),
                                    std::string(cols[2])});
        } else {
            if (cols.size() != 3) throw ParseError("expected 3 columns", line_no);
            SignalSelection::Exclusion ex;
            ex.aid = static_cast<std::uint32_t>(parse_u64(cols[0], 16, line_no));
            ex.signal = std::string(cols[1]);
            if (cols[2] == "static") ex.reason = ExcludeReason::static_value;
            else if (cols[2] == "keyword") ex.reason = ExcludeReason::keyword;
            else if (cols[2] == "absent") ex.reason = ExcludeReason::absent;
            else throw ParseError("unknown exclusion reason '" + std::string(cols[2]) + "'", line_no);
            sel.excluded.push_back(std::move(ex));
        }
    }
    return sel;
}

inline SignalSelection read_selection_file(const std::string& path,
                                           std::uint64_t* hash = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (hash) *hash = selection_hash(ss.str());
    return parse_selection_manifest(ss.str());
}

// Resolved view of a selection: copies of the signal specs in feature order
// plus an AID index. Scaling denominators are validated here once.
struct SignalLayout {
    struct Entry {
        std::uint32_t aid = 0;
        SignalSpec spec;
        std::string label;  // "<aid-hex>_<name>", used in reports
    };
    std::vector<Entry> signals;
    std::map<std::uint32_t, std::vector<std::size_t>> by_aid;
    std::map<std::uint32_t, unsigned> dlc_by_aid;

    std::size_t x() const { return signals.size(); }
    bool monitors(std::uint32_t aid) const { return by_aid.count(aid) != 0; }
};

inline SignalLayout build_layout(const CanDatabase& db, const SignalSelection& sel) {
    SignalLayout layout;
    for (const auto& e : sel.included) {
        const MessageSpec& msg = db.at(e.aid);
        const SignalSpec* spec = msg.find_signal(e.signal);
        if (!spec)
            throw DataError("selection names unknown signal " + e.signal + " in AID " +
                            format_aid_hex(e.aid));
        if (spec->min_phys >= spec->max_phys)
            throw DataError("signal " + e.signal + " has a degenerate range, cannot scale");
        layout.by_aid[e.aid].push_back(layout.signals.size());
        layout.dlc_by_aid[e.aid] = msg.dlc;
        layout.signals.push_back({e.aid, *spec, format_aid_hex(e.aid) + "_" + e.signal});
    }
    if (layout.signals.empty()) throw DataError("selection is empty");
    return layout;
}

}  // namespace xcanids
