#pragma once

// Injects synthetic attacks into benign captures: random fuzzing, one-for-one
// fabrication alongside a target stream, stream suspension, in-place payload
// masquerade and capture replay. Every output message carries an injected
// flag; window labels are derived by replaying the exact cache and tick
// semantics of the feature pipeline over those flags, so labels agree with
// what a detector actually sees.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcanids/canlog.hpp"
#include "xcanids/dbc.hpp"
#include "xcanids/deserialize.hpp"
#include "xcanids/error.hpp"
#include "xcanids/pipeline.hpp"
#include "xcanids/selection.hpp"

namespace xcanids {

enum class AttackKind : std::uint8_t { fuzzing, fabrication, suspension, masquerade, replay };

inline const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::fuzzing: return "fuzzing";
        case AttackKind::fabrication: return "fabrication";
        case AttackKind::suspension: return "suspension";
        case AttackKind::masquerade: return "masquerade";
        case AttackKind::replay: return "replay";
    }
    return "?";
}

inline AttackKind attack_kind_from(std::string_view s) {
    if (s == "fuzzing") return AttackKind::fuzzing;
    if (s == "fabrication") return AttackKind::fabrication;
    if (s == "suspension") return AttackKind::suspension;
    if (s == "masquerade") return AttackKind::masquerade;
    if (s == "replay") return AttackKind::replay;
    throw DataError("unknown attack kind '" + std::string(s) + "'");
}

// How crafted payloads are produced for fabrication and masquerade.
struct PayloadGen {
    enum class Mode {
        identity,       // keep the source payload (null attack)
        constant_bytes, // fixed byte pattern
        signal_const,   // overwrite one signal with a fixed physical value
        signal_ramp,    // overwrite one signal, interpolating from..to over the period
    };
    Mode mode = Mode::constant_bytes;
    std::vector<std::uint8_t> bytes;
    std::string signal;
    double value_from = 0, value_to = 0;

    // source: the benign payload this frame is derived from. frac: position
    // inside the attack period in [0, 1].
    std::vector<std::uint8_t> generate(const std::vector<std::uint8_t>& source,
                                       const MessageSpec* msg, double frac) const {
        switch (mode) {
            case Mode::identity:
                return source;
            case Mode::constant_bytes: {
                std::vector<std::uint8_t> p = bytes;
                if (msg && p.size() < msg->dlc) p.resize(msg->dlc, 0);
                return p;
            }
            case Mode::signal_const:
            case Mode::signal_ramp: {
                if (!msg) throw DataError("signal payload generator needs a database");
                const SignalSpec* spec = msg->find_signal(signal);
                if (!spec)
                    throw DataError("payload generator names unknown signal " + signal);
                double v = mode == Mode::signal_const
                               ? value_from
                               : value_from + (value_to - value_from) * frac;
                std::vector<std::uint8_t> p = source;
                if (p.size() < msg->dlc) p.resize(msg->dlc, 0);
                insert_bits(p, *spec, encode_raw(v, *spec));
                return p;
            }
        }
        throw DataError("bad payload generator mode");
    }
};

struct AttackPlan {
    AttackKind kind = AttackKind::fuzzing;
    TimeUs start_us = 0;
    TimeUs end_us = 0;
    std::uint64_t seed = 42;
    // fuzzing
    double rate_per_s = 10.0;
    std::vector<std::uint32_t> aid_pool;  // empty: AIDs observed in the log
    bool random_aids = false;             // draw from the full 11-bit space instead
    // fabrication / suspension / masquerade
    std::uint32_t target_aid = 0;
    TimeUs fabrication_delay_us = 100;  // crafted frame lands this far after each benign one
    PayloadGen payload;
    // replay
    TimeUs capture_start_us = 0;
    TimeUs capture_end_us = 0;
};

struct LabeledLog {
    std::vector<CanMessage> messages;
    std::vector<std::uint8_t> injected;  // parallel to messages
    AttackPlan plan;
};

namespace detail {

struct Tagged {
    CanMessage msg;
    bool injected;
};

inline LabeledLog merge_sorted(std::vector<Tagged>&& frames, const AttackPlan& plan) {
    std::stable_sort(frames.begin(), frames.end(), [](const Tagged& a, const Tagged& b) {
        return a.msg.time_us < b.msg.time_us;
    });
    LabeledLog out;
    out.plan = plan;
    out.messages.reserve(frames.size());
    out.injected.reserve(frames.size());
    for (auto& f : frames) {
        out.messages.push_back(std::move(f.msg));
        out.injected.push_back(f.injected ? 1 : 0);
    }
    return out;
}

inline bool in_period(TimeUs t, const AttackPlan& plan) {
    return t >= plan.start_us && t < plan.end_us;
}

}  // namespace detail

// The attack transforms never touch frames outside [start, end); fuzzing and
// fabrication only add frames, suspension only removes frames of the target
// AID, masquerade only rewrites payloads of the target AID in place.
inline LabeledLog apply_attack(const std::vector<CanMessage>& benign, const AttackPlan& plan,
                               const CanDatabase* db = nullptr) {
    if (plan.end_us <= plan.start_us) throw DataError("attack period is empty");
    std::mt19937_64 rng(plan.seed);
    std::vector<detail::Tagged> frames;
    frames.reserve(benign.size() + 1024);

    switch (plan.kind) {
        case AttackKind::fuzzing: {
            for (const auto& m : benign) frames.push_back({m, false});
            std::vector<std::uint32_t> pool = plan.aid_pool;
            if (plan.random_aids) {
                pool.clear();
            } else if (pool.empty()) {
                std::map<std::uint32_t, bool> seen;
                for (const auto& m : benign) seen[m.aid] = true;
                for (const auto& [aid, _] : seen) pool.push_back(aid);
                if (pool.empty()) throw DataError("cannot fuzz an empty log");
            }
            double duration_s = to_seconds(plan.end_us - plan.start_us);
            auto count = static_cast<std::size_t>(std::llround(plan.rate_per_s * duration_s));
            std::uniform_int_distribution<TimeUs> when(plan.start_us, plan.end_us - 1);
            std::uniform_int_distribution<std::uint32_t> which_aid(0, kMaxAid);
            std::uniform_int_distribution<std::size_t> which_pool(0, pool.empty() ? 0 : pool.size() - 1);
            std::uniform_int_distribution<int> byte(0, 255);
            std::vector<TimeUs> times(count);
            for (auto& t : times) t = when(rng);
            std::sort(times.begin(), times.end());
            for (TimeUs t : times) {
                CanMessage m;
                m.time_us = t;
                m.aid = pool.empty() ? which_aid(rng) : pool[which_pool(rng)];
                m.payload.resize(8);
                for (auto& b : m.payload) b = static_cast<std::uint8_t>(byte(rng));
                frames.push_back({std::move(m), true});
            }
            break;
        }
        case AttackKind::fabrication: {
            const MessageSpec* spec = db ? db->find(plan.target_aid) : nullptr;
            double span = static_cast<double>(plan.end_us - plan.start_us);
            for (const auto& m : benign) {
                frames.push_back({m, false});
                if (m.aid != plan.target_aid || !detail::in_period(m.time_us, plan)) continue;
                CanMessage crafted;
                crafted.aid = plan.target_aid;
                crafted.time_us = m.time_us + plan.fabrication_delay_us;
                double frac = static_cast<double>(m.time_us - plan.start_us) / span;
                crafted.payload = plan.payload.generate(m.payload, spec, frac);
                frames.push_back({std::move(crafted), true});
            }
            break;
        }
        case AttackKind::suspension: {
            bool hit = false;
            for (const auto& m : benign) {
                if (m.aid == plan.target_aid && detail::in_period(m.time_us, plan)) {
                    hit = true;
                    continue;
                }
                frames.push_back({m, false});
            }
            if (!hit) throw DataError("suspension removed nothing; check AID and period");
            break;
        }
        case AttackKind::masquerade: {
            const MessageSpec* spec = db ? db->find(plan.target_aid) : nullptr;
            double span = static_cast<double>(plan.end_us - plan.start_us);
            for (const auto& m : benign) {
                if (m.aid == plan.target_aid && detail::in_period(m.time_us, plan)) {
                    CanMessage replaced = m;
                    double frac = static_cast<double>(m.time_us - plan.start_us) / span;
                    replaced.payload = plan.payload.generate(m.payload, spec, frac);
                    frames.push_back({std::move(replaced), true});
                } else {
                    frames.push_back({m, false});
                }
            }
            break;
        }
        case AttackKind::replay: {
            for (const auto& m : benign) frames.push_back({m, false});
            if (plan.capture_end_us <= plan.capture_start_us)
                throw DataError("replay capture window is empty");
            std::vector<CanMessage> captured;
            for (const auto& m : benign)
                if (m.time_us >= plan.capture_start_us && m.time_us < plan.capture_end_us)
                    captured.push_back(m);
            if (captured.empty()) throw DataError("replay capture window contains no frames");
            TimeUs span = plan.capture_end_us - plan.capture_start_us;
            for (TimeUs base = plan.start_us; base < plan.end_us; base += span) {
                for (const auto& m : captured) {
                    TimeUs t = base + (m.time_us - plan.capture_start_us);
                    if (t >= plan.end_us) break;
                    CanMessage copy = m;
                    copy.time_us = t;
                    frames.push_back({std::move(copy), true});
                }
            }
            break;
        }
    }
    return detail::merge_sorted(std::move(frames), plan);
}

// Window labels consistent with the feature pipeline: a window is an attack
// when its time span [end - w*t, end] touches the attack period and, for
// payload-bearing attacks, a crafted frame actually sat in the cache at one
// of its ticks. Suspension leaves the cache untouched, so overlap alone
// decides there.
inline std::vector<std::pair<TimeUs, Label>> label_windows(const LabeledLog& labeled,
                                                           const SignalLayout& layout,
                                                           PipelineConfig cfg) {
    const bool payload_attack = labeled.plan.kind != AttackKind::suspension;
    // Mirror of the payload cache, tracking only the injected flag per row.
    std::map<std::uint32_t, std::optional<bool>> row_injected;
    for (const auto& [aid, idx] : layout.by_aid) row_injected.emplace(aid, std::nullopt);
    std::size_t filled = 0;

    std::vector<std::pair<TimeUs, Label>> labels;
    std::deque<bool> ring;  // per in-window tick: crafted payload resident?
    const TimeUs span_us = static_cast<TimeUs>(cfg.window) * cfg.tick_us;

    std::optional<TimeUs> next_tick;
    auto do_tick = [&](TimeUs tick) {
        if (filled != row_injected.size()) return;
        bool resident = false;
        if (payload_attack)
            for (const auto& [aid, inj] : row_injected)
                if (inj.value_or(false)) {
                    resident = true;
                    break;
                }
        ring.push_back(resident);
        if (ring.size() > cfg.window) ring.pop_front();
        if (ring.size() == cfg.window) {
            bool any_resident =
                std::find(ring.begin(), ring.end(), true) != ring.end();
            // window span [tick - w*t, tick] against the period [start, end)
            bool overlaps = tick - span_us < labeled.plan.end_us && tick >= labeled.plan.start_us;
            bool is_attack = payload_attack ? (overlaps && any_resident) : overlaps;
            labels.emplace_back(tick, is_attack ? Label::attack : Label::benign);
        }
    };

    for (std::size_t i = 0; i < labeled.messages.size(); ++i) {
        const CanMessage& m = labeled.messages[i];
        if (!next_tick) next_tick = m.time_us;
        while (*next_tick < m.time_us) {
            do_tick(*next_tick);
            *next_tick += cfg.tick_us;
        }
        auto it = row_injected.find(m.aid);
        if (it != row_injected.end()) {
            if (!it->second.has_value()) ++filled;
            it->second = labeled.injected[i] != 0;
        }
    }
    if (next_tick)
        while (*next_tick <= labeled.messages.back().time_us) {
            do_tick(*next_tick);
            *next_tick += cfg.tick_us;
        }
    return labels;
}

// Writes the label sidecar: window end time and label, tab separated.
inline void write_labels(std::ostream& os, const std::vector<std::pair<TimeUs, Label>>& labels) {
    os << "#window_end_s\tlabel\n";
    char ts[32];
    for (const auto& [t, label] : labels) {
        std::snprintf(ts, sizeof(ts), "%lld.%06lld", static_cast<long long>(t / kUsPerSec),
                      static_cast<long long>(t % kUsPerSec));
        os << ts << '\t' << (label == Label::attack ? "attack" : "benign") << '\n';
    }
}

inline std::vector<std::pair<TimeUs, Label>> read_labels(std::istream& is) {
    std::vector<std::pair<TimeUs, Label>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string_view v = trim(line);
        if (v.empty() || v[0] == '#') continue;
        auto cols = split(v, '\t');
        if (cols.size() != 2) throw ParseError("expected 2 columns", line_no);
        std::size_t dot = cols[0].find('.');
        if (dot == std::string_view::npos) throw ParseError("bad timestamp", line_no);
        TimeUs t = static_cast<TimeUs>(parse_u64(cols[0].substr(0, dot), 10, line_no)) * kUsPerSec +
                   static_cast<TimeUs>(parse_u64(cols[0].substr(dot + 1), 10, line_no));
        Label label;
        if (cols[1] == "attack") label = Label::attack;
        else if (cols[1] == "benign") label = Label::benign;
        else throw ParseError("unknown label '" + std::string(cols[1]) + "'", line_no);
        out.emplace_back(t, label);
    }
    return out;
}

// JSON plan files. Times are seconds for human editing; they become integer
// microseconds immediately.
namespace detail {

inline std::uint32_t plan_aid(const std::string& s) {
    std::string_view v = s;
    if (v.starts_with("0x") || v.starts_with("0X")) v.remove_prefix(2);
    std::uint64_t aid = parse_u64(v, 16);
    if (aid > kMaxAid) throw DataError("arbitration id out of range: " + s);
    return static_cast<std::uint32_t>(aid);
}

}  // namespace detail

inline AttackPlan parse_attack_plan(const nlohmann::json& j) {
    AttackPlan plan;
    try {
        plan.kind = attack_kind_from(j.at("kind").get<std::string>());
        plan.start_us = from_seconds(j.at("start_s").get<double>());
        plan.end_us = from_seconds(j.at("end_s").get<double>());
        plan.seed = j.value("seed", 42ull);
        switch (plan.kind) {
            case AttackKind::fuzzing:
                plan.rate_per_s = j.at("rate_per_s").get<double>();
                if (j.contains("aid_pool"))
                    for (const auto& a : j.at("aid_pool"))
                        plan.aid_pool.push_back(detail::plan_aid(a.get<std::string>()));
                plan.random_aids = j.value("random_aids", false);
                break;
            case AttackKind::fabrication:
            case AttackKind::masquerade:
            case AttackKind::suspension:
                plan.target_aid = detail::plan_aid(j.at("aid").get<std::string>());
                if (plan.kind == AttackKind::fabrication)
                    plan.fabrication_delay_us =
                        from_seconds(j.value("delay_s", 0.0001));
                if (plan.kind != AttackKind::suspension && j.contains("payload")) {
                    const auto& p = j.at("payload");
                    std::string mode = p.at("mode").get<std::string>();
                    if (mode == "identity") {
                        plan.payload.mode = PayloadGen::Mode::identity;
                    } else if (mode == "bytes") {
                        plan.payload.mode = PayloadGen::Mode::constant_bytes;
                        for (const auto& b : p.at("bytes"))
                            plan.payload.bytes.push_back(
                                static_cast<std::uint8_t>(b.get<unsigned>()));
                    } else if (mode == "signal") {
                        plan.payload.mode = PayloadGen::Mode::signal_const;
                        plan.payload.signal = p.at("signal").get<std::string>();
                        plan.payload.value_from = p.at("value").get<double>();
                    } else if (mode == "ramp") {
                        plan.payload.mode = PayloadGen::Mode::signal_ramp;
                        plan.payload.signal = p.at("signal").get<std::string>();
                        plan.payload.value_from = p.at("from").get<double>();
                        plan.payload.value_to = p.at("to").get<double>();
                    } else {
                        throw DataError("unknown payload mode '" + mode + "'");
                    }
                }
                break;
            case AttackKind::replay:
                plan.capture_start_us = from_seconds(j.at("capture_start_s").get<double>());
                plan.capture_end_us = from_seconds(j.at("capture_end_s").get<double>());
                break;
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad attack plan: ") + e.what());
    }
    return plan;
}

inline AttackPlan read_attack_plan_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return parse_attack_plan(j);
}

}  // namespace xcanids
