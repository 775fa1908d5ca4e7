#pragma once

// Streaming feature generation. A payload cache keeps the latest frame per
// monitored AID; a sampler snapshots the cache every t microseconds once all
// rows are filled, decodes and min-max scales the selected signals into
// [0, 1], and a sliding window stacks the last w snapshots (stride one tick)
// into the w-by-x matrices consumed by the model.
//
// Tick instants are origin + k*t with origin = first message timestamp. A
// tick colliding with a message timestamp samples after that message lands.

#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xcanids/canlog.hpp"
#include "xcanids/deserialize.hpp"
#include "xcanids/error.hpp"
#include "xcanids/selection.hpp"
#include "xcanids/util.hpp"

namespace xcanids {

struct PipelineConfig {
    TimeUs tick_us = 5000;  // t
    unsigned window = 150;  // w
};

enum class Label : std::uint8_t { benign = 0, attack = 1, unlabeled = 2 };

// One cache snapshot after decode and scaling. values[i] lies in [0, 1];
// violations[i] is set when the physical value had to be clamped.
struct ScaledVector {
    TimeUs tick_us = 0;
    std::vector<float> values;
    std::vector<std::uint8_t> violations;
};

struct FeatureWindow {
    TimeUs end_time_us = 0;  // timestamp of the newest tick in the window
    unsigned w = 0, x = 0;
    std::vector<float> data;                // w*x, oldest tick first
    std::vector<std::uint8_t> violations;   // per signal, OR over the window
    Label label = Label::unlabeled;
};

// Latest payload per monitored AID. Single-writer by design: the feature
// stage owns it, the inference stage only ever sees immutable windows.
class PayloadCache {
public:
    explicit PayloadCache(const SignalLayout& layout) {
        for (const auto& [aid, idx] : layout.by_aid) rows_.emplace(aid, std::nullopt);
    }

    // True when the frame belongs to a monitored AID.
    bool update(const CanMessage& msg) {
        auto it = rows_.find(msg.aid);
        if (it == rows_.end()) return false;
        if (!it->second) ++filled_;
        it->second = msg.payload;
        return true;
    }

    bool ready() const { return filled_ == rows_.size(); }

    const std::vector<std::uint8_t>& row(std::uint32_t aid) const {
        auto it = rows_.find(aid);
        if (it == rows_.end() || !it->second)
            throw DataError("cache row for AID " + format_aid_hex(aid) + " is empty");
        return *it->second;
    }

private:
    std::map<std::uint32_t, std::optional<std::vector<std::uint8_t>>> rows_;
    std::size_t filled_ = 0;
};

struct PipelineStats {
    std::size_t messages = 0;
    std::size_t ignored_messages = 0;  // AIDs outside the monitored set
    std::size_t ticks = 0;
    std::size_t skipped_ticks = 0;  // before every cache row was filled
    std::size_t windows = 0;
};

// Incremental driver. Feed messages in timestamp order; windows come out of
// the sink callback as soon as they are complete.
class FeatureGenerator {
public:
    using Sink = std::function<void(FeatureWindow&&)>;

    FeatureGenerator(const SignalLayout& layout, PipelineConfig cfg, Sink sink)
        : layout_(layout), cfg_(cfg), sink_(std::move(sink)), cache_(layout) {
        if (cfg_.tick_us <= 0) throw DataError("tick period must be positive");
        if (cfg_.window == 0) throw DataError("window length must be positive");
    }

    void on_message(const CanMessage& msg) {
        if (msg.time_us < last_time_) throw DataError("messages arrived out of order");
        if (!next_tick_) next_tick_ = msg.time_us;  // origin
        advance_to(msg.time_us - 1);
        last_time_ = msg.time_us;
        ++stats_.messages;
        if (!cache_.update(msg)) ++stats_.ignored_messages;
    }

    // Samples every pending tick up to and including time t. Callers must
    // have already delivered all messages with timestamps <= t.
    void advance_to(TimeUs t) {
        while (next_tick_ && *next_tick_ <= t) {
            sample(*next_tick_);
            *next_tick_ += cfg_.tick_us;
        }
    }

    // Flushes ticks through the last message timestamp.
    void finish() { advance_to(last_time_); }

    std::optional<TimeUs> next_tick() const { return next_tick_; }
    const PipelineStats& stats() const { return stats_; }

    // Decode and scale one cache snapshot. Exposed for the sampler tests.
    ScaledVector scale_snapshot(TimeUs tick) const {
        ScaledVector out;
        out.tick_us = tick;
        out.values.resize(layout_.x());
        out.violations.assign(layout_.x(), 0);
        for (const auto& [aid, indices] : layout_.by_aid) {
            const auto& payload = cache_.row(aid);
            for (std::size_t i : indices) {
                const SignalSpec& spec = layout_.signals[i].spec;
                Decoded d = decode_clamped(extract_bits(payload, spec), spec);
                double scaled = (d.value - spec.min_phys) / (spec.max_phys - spec.min_phys);
                out.values[i] = static_cast<float>(scaled);
                out.violations[i] = d.in_range ? 0 : 1;
            }
        }
        return out;
    }

private:
    void sample(TimeUs tick) {
        ++stats_.ticks;
        if (!cache_.ready()) {
            ++stats_.skipped_ticks;
            return;
        }
        ring_.push_back(scale_snapshot(tick));
        if (ring_.size() > cfg_.window) ring_.pop_front();
        if (ring_.size() == cfg_.window) emit(tick);
    }

    void emit(TimeUs tick) {
        FeatureWindow win;
        win.end_time_us = tick;
        win.w = cfg_.window;
        win.x = static_cast<unsigned>(layout_.x());
        win.data.reserve(static_cast<std::size_t>(win.w) * win.x);
        win.violations.assign(win.x, 0);
        for (const auto& row : ring_) {
            win.data.insert(win.data.end(), row.values.begin(), row.values.end());
            for (unsigned i = 0; i < win.x; ++i) win.violations[i] |= row.violations[i];
        }
        ++stats_.windows;
        sink_(std::move(win));
    }

    const SignalLayout& layout_;
    PipelineConfig cfg_;
    Sink sink_;
    PayloadCache cache_;
    std::deque<ScaledVector> ring_;
    std::optional<TimeUs> next_tick_;
    TimeUs last_time_ = std::numeric_limits<TimeUs>::min();
    PipelineStats stats_;
};

struct PipelineResult {
    std::vector<FeatureWindow> windows;
    PipelineStats stats;
};

inline PipelineResult run_pipeline(const std::vector<CanMessage>& log, const SignalLayout& layout,
                                   PipelineConfig cfg) {
    PipelineResult result;
    FeatureGenerator gen(layout, cfg,
                         [&](FeatureWindow&& w) { result.windows.push_back(std::move(w)); });
    for (const auto& msg : log) gen.on_message(msg);
    gen.finish();
    result.stats = gen.stats();
    return result;
}

// Binary window container: everything the training and detection stages
// need to agree on shapes and provenance, then the raw f32 window data.
struct FeatureDumpHeader {
    std::uint64_t tick_us = 0;
    std::uint32_t w = 0, x = 0;
    std::uint64_t selection_hash = 0;
    std::uint64_t count = 0;
};

constexpr char kFeatureMagic[4] = {'X', 'C', 'F', 'D'};
constexpr std::uint32_t kFeatureVersion = 1;

inline void write_feature_dump(std::ostream& os, const FeatureDumpHeader& h,
                               const std::vector<FeatureWindow>& windows) {
    os.write(kFeatureMagic, 4);
    put_u32(os, kFeatureVersion);
    put_u64(os, h.tick_us);
    put_u32(os, h.w);
    put_u32(os, h.x);
    put_u64(os, h.selection_hash);
    put_u64(os, windows.size());
    for (const auto& w : windows) {
        if (w.w != h.w || w.x != h.x) throw DataError("window shape does not match header");
        put_u64(os, static_cast<std::uint64_t>(w.end_time_us));
        put_u8(os, static_cast<std::uint8_t>(w.label));
        for (float v : w.data) put_f32(os, v);
    }
}

class FeatureDumpReader {
public:
    explicit FeatureDumpReader(std::istream& in) : in_(in) {
        char magic[4];
        in_.read(magic, 4);
        if (in_.gcount() != 4 || std::memcmp(magic, kFeatureMagic, 4) != 0)
            throw DataError("not a feature dump (bad magic)");
        if (get_u32(in_) != kFeatureVersion) throw DataError("unsupported feature dump version");
        header_.tick_us = get_u64(in_);
        header_.w = get_u32(in_);
        header_.x = get_u32(in_);
        header_.selection_hash = get_u64(in_);
        header_.count = get_u64(in_);
    }

    const FeatureDumpHeader& header() const { return header_; }

    std::optional<FeatureWindow> next() {
        if (read_ == header_.count) return std::nullopt;
        FeatureWindow w;
        w.end_time_us = static_cast<TimeUs>(get_u64(in_));
        std::uint8_t label = get_u8(in_);
        if (label > 2) throw DataError("bad label byte");
        w.label = static_cast<Label>(label);
        w.w = header_.w;
        w.x = header_.x;
        std::size_t n = static_cast<std::size_t>(header_.w) * header_.x;
        w.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) w.data[i] = get_f32(in_);
        ++read_;
        return w;
    }

private:
    std::istream& in_;
    FeatureDumpHeader header_;
    std::uint64_t read_ = 0;
};

struct FeatureDump {
    FeatureDumpHeader header;
    std::vector<FeatureWindow> windows;
};

inline FeatureDump read_feature_dump(std::istream& in) {
    FeatureDumpReader reader(in);
    FeatureDump dump;
    dump.header = reader.header();
    dump.windows.reserve(dump.header.count);
    while (auto w = reader.next()) dump.windows.push_back(std::move(*w));
    return dump;
}

inline FeatureDump read_feature_dump_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return read_feature_dump(in);
}

inline void write_feature_dump_file(const std::string& path, const FeatureDumpHeader& h,
                                    const std::vector<FeatureWindow>& windows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_feature_dump(out, h, windows);
}

// Human-readable tick dump: one row per snapshot, scaled values in feature
// order. Intended for eyeballing the pipeline, not for bulk storage.
inline void write_scaled_csv(std::ostream& os, const SignalLayout& layout,
                             const std::vector<ScaledVector>& ticks) {
    os << "time_s";
    for (const auto& s : layout.signals) os << ',' << s.label;
    os << '\n';
    char ts[32];
    for (const auto& row : ticks) {
        std::snprintf(ts, sizeof(ts), "%lld.%06lld",
                      static_cast<long long>(row.tick_us / kUsPerSec),
                      static_cast<long long>(row.tick_us % kUsPerSec));
        os << ts;
        for (float v : row.values) os << ',' << format_double(v);
        os << '\n';
    }
}

}  // namespace xcanids
