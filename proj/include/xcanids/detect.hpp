#pragma once

// Calibration and detection on top of a trained autoencoder. Per-signal
// thresholds come from the training loss distribution (mean plus three
// population standard deviations); the alarm threshold is a nearest-rank
// percentile of the windowwise maximum error rate over benign validation
// windows. A window alarms when max_i l_i / theta_i exceeds that threshold,
// and the argmax column names the suspected signal.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "xcanids/container.hpp"
#include "xcanids/error.hpp"
#include "xcanids/model.hpp"
#include "xcanids/pipeline.hpp"
#include "xcanids/queue.hpp"
#include "xcanids/selection.hpp"

namespace xcanids {

// Signals that never accumulate reconstruction error would divide by zero;
// their threshold is floored instead so their rate stays finite.
constexpr double kThetaFloor = 1e-9;

struct SignalThresholds {
    std::vector<double> theta;
    std::vector<double> mean, stddev;  // kept for reporting
};

// losses: one vector of x signalwise losses per training window.
inline SignalThresholds fit_signal_thresholds(const std::vector<std::vector<double>>& losses) {
    if (losses.empty()) throw DataError("no training losses to calibrate on");
    const std::size_t x = losses[0].size();
    SignalThresholds th;
    th.mean.assign(x, 0.0);
    th.stddev.assign(x, 0.0);
    th.theta.assign(x, 0.0);
    for (const auto& l : losses) {
        if (l.size() != x) throw DataError("loss vectors disagree on signal count");
        for (std::size_t i = 0; i < x; ++i) th.mean[i] += l[i];
    }
    const double n = static_cast<double>(losses.size());
    for (std::size_t i = 0; i < x; ++i) th.mean[i] /= n;
    for (const auto& l : losses)
        for (std::size_t i = 0; i < x; ++i) {
            double d = l[i] - th.mean[i];
            th.stddev[i] += d * d;
        }
    for (std::size_t i = 0; i < x; ++i) {
        th.stddev[i] = std::sqrt(th.stddev[i] / n);  // population
        th.theta[i] = th.mean[i] + 3.0 * th.stddev[i];
        if (th.theta[i] < kThetaFloor) th.theta[i] = kThetaFloor;
    }
    return th;
}

inline std::vector<double> error_rates(const std::vector<double>& losses,
                                       const std::vector<double>& theta) {
    if (losses.size() != theta.size()) throw DataError("loss/threshold length mismatch");
    std::vector<double> r(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) r[i] = losses[i] / theta[i];
    return r;
}

// Nearest-rank percentile: the ceil(q*n)-th smallest value. With q close to
// one this guarantees the benign false-alarm fraction stays below 1-q plus
// one count.
inline double fit_detection_threshold(std::vector<double> max_rates, double q) {
    if (max_rates.empty()) throw DataError("no validation rates to calibrate on");
    if (q < 0.95 || q > 1.0) throw DataError("percentile must lie in [0.95, 1]");
    std::sort(max_rates.begin(), max_rates.end());
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(max_rates.size())));
    if (rank == 0) rank = 1;
    if (rank > max_rates.size()) rank = max_rates.size();
    return max_rates[rank - 1];
}

struct DetectionResult {
    TimeUs end_time_us = 0;
    bool alarm = false;
    double max_rate = 0;
    std::size_t argmax = 0;  // feature index of the highest error rate
    std::vector<double> rates;
    std::vector<std::pair<std::size_t, double>> top;  // top-k (index, rate), rate descending
    std::vector<std::uint8_t> violations;             // per signal, from the window
};

struct DetectorConfig {
    double threshold = 1.0;  // the calibrated alarm threshold on max rate
    std::size_t top_k = 5;
};

namespace detail {

// Batched scoring pass shared by the offline and streaming detectors.
// Windows go in together, results come out in the same order.
inline void score_batch(Autoencoder& model, const SignalThresholds& th, const DetectorConfig& cfg,
                        const std::vector<FeatureWindow>& batch,
                        std::vector<DetectionResult>& out) {
    if (batch.empty()) return;
    const std::size_t F = batch[0].data.size();
    std::vector<double> X(batch.size() * F);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].data.size() != F) throw DataError("window shape mismatch in batch");
        std::copy(batch[i].data.begin(), batch[i].data.end(), X.begin() + i * F);
    }
    const auto& R = model.forward(X.data(), static_cast<int>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const FeatureWindow& win = batch[i];
        std::vector<double> losses = signalwise_loss(
            std::span<const float>(win.data.data(), F),
            std::span<const double>(R.data() + i * F, F), static_cast<int>(win.w),
            static_cast<int>(win.x));
        DetectionResult r;
        r.end_time_us = win.end_time_us;
        r.rates = error_rates(losses, th.theta);
        r.violations = win.violations;
        r.argmax = 0;
        for (std::size_t j = 1; j < r.rates.size(); ++j)
            if (r.rates[j] > r.rates[r.argmax]) r.argmax = j;
        r.max_rate = r.rates[r.argmax];
        r.alarm = r.max_rate > cfg.threshold;
        std::vector<std::size_t> idx(r.rates.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::size_t k = std::min(cfg.top_k, idx.size());
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return r.rates[a] != r.rates[b] ? r.rates[a] > r.rates[b] : a < b;
                          });
        for (std::size_t j = 0; j < k; ++j) r.top.emplace_back(idx[j], r.rates[idx[j]]);
        out.push_back(std::move(r));
    }
}

}  // namespace detail

// Scores one window. Ties on the max rate resolve to the lowest index.
inline DetectionResult evaluate_window(Autoencoder& model, const SignalThresholds& th,
                                       const DetectorConfig& cfg, const FeatureWindow& win) {
    std::vector<DetectionResult> out;
    detail::score_batch(model, th, cfg, {win}, out);
    return std::move(out.front());
}

// Offline detector: scores pre-built windows in batches of `batch`,
// preserving window order.
inline std::vector<DetectionResult> run_detector(Autoencoder& model, const SignalThresholds& th,
                                                 const DetectorConfig& cfg,
                                                 const std::vector<FeatureWindow>& windows,
                                                 std::size_t batch = 64) {
    if (batch == 0) batch = 1;
    std::vector<DetectionResult> results;
    results.reserve(windows.size());
    std::vector<FeatureWindow> chunk;
    for (std::size_t i = 0; i < windows.size(); i += batch) {
        chunk.assign(windows.begin() + static_cast<std::ptrdiff_t>(i),
                     windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), i + batch)));
        detail::score_batch(model, th, cfg, chunk, results);
    }
    return results;
}

// End-to-end latency of a detection pipeline that fills inference batches of
// size B: a window created z ticks before its batch is full waits z*t, then
// pays the feature-generation cost and the whole batch's inference cost.
inline double latency_model_s(double tick_s, double t_alpha_s, double t_beta_s, int batch,
                              double z) {
    return z * tick_s + t_alpha_s + batch * t_beta_s;
}

struct LatencySample {
    TimeUs window_end_us = 0;
    double latency_s = 0;
};

struct StreamingOptions {
    std::size_t batch = 8;
    std::size_t queue_capacity = 256;
    bool pace = true;  // sleep according to log timestamps; off replays as fast as possible
};

struct StreamingResult {
    std::vector<DetectionResult> results;
    std::vector<LatencySample> latencies;  // only meaningful when paced
    double mean_t_alpha_s = 0;  // measured feature-generation cost per tick
    double mean_t_beta_s = 0;   // measured inference cost per window
};

// Two-stage live run over a captured log. Stage one replays messages on the
// capture's own clock, samples ticks and pushes finished windows into a
// bounded queue; stage two pops batches and runs inference. Latency is
// measured from each window's ideal tick instant to the moment its result
// exists.
inline StreamingResult run_streaming_detector(const std::vector<CanMessage>& log,
                                              const SignalLayout& layout, PipelineConfig pcfg,
                                              Autoencoder& model, const SignalThresholds& th,
                                              const DetectorConfig& cfg,
                                              const StreamingOptions& opts) {
    using Clock = std::chrono::steady_clock;
    StreamingResult out;
    if (log.empty()) return out;

    struct QueuedWindow {
        FeatureWindow win;
        Clock::time_point tick_wall;  // when the tick was due
    };
    BoundedQueue<QueuedWindow> queue(opts.queue_capacity);

    double alpha_total = 0;
    std::size_t alpha_count = 0;

    std::thread producer([&] {
        Clock::time_point wall_origin = Clock::now();
        TimeUs log_origin = log.front().time_us;
        auto wall_at = [&](TimeUs t) {
            return wall_origin + std::chrono::microseconds(t - log_origin);
        };
        Clock::time_point last_tick_wall{};
        FeatureGenerator gen(layout, pcfg, [&](FeatureWindow&& w) {
            queue.push({std::move(w), last_tick_wall});
        });
        std::size_t i = 0;
        while (i < log.size()) {
            std::optional<TimeUs> tick = gen.next_tick();
            TimeUs next_event = log[i].time_us;
            bool is_tick = tick && *tick < next_event;  // ties: message first
            TimeUs when = is_tick ? *tick : next_event;
            if (opts.pace) std::this_thread::sleep_until(wall_at(when));
            if (is_tick) {
                last_tick_wall = opts.pace ? wall_at(when) : Clock::now();
                auto t0 = Clock::now();
                gen.advance_to(*tick);
                alpha_total += std::chrono::duration<double>(Clock::now() - t0).count();
                ++alpha_count;
            } else {
                gen.on_message(log[i]);
                ++i;
            }
        }
        while (auto tick = gen.next_tick()) {
            if (*tick > log.back().time_us) break;
            if (opts.pace) std::this_thread::sleep_until(wall_at(*tick));
            last_tick_wall = opts.pace ? wall_at(*tick) : Clock::now();
            auto t0 = Clock::now();
            gen.advance_to(*tick);
            alpha_total += std::chrono::duration<double>(Clock::now() - t0).count();
            ++alpha_count;
        }
        queue.close();
    });

    double beta_total = 0;
    std::size_t beta_count = 0;
    std::vector<FeatureWindow> batch;
    std::vector<Clock::time_point> tick_walls;
    auto flush = [&] {
        if (batch.empty()) return;
        auto t0 = Clock::now();
        detail::score_batch(model, th, cfg, batch, out.results);
        auto t1 = Clock::now();
        beta_total += std::chrono::duration<double>(t1 - t0).count();
        beta_count += batch.size();
        for (std::size_t k = 0; k < batch.size(); ++k)
            out.latencies.push_back(
                {batch[k].end_time_us,
                 std::chrono::duration<double>(t1 - tick_walls[k]).count()});
        batch.clear();
        tick_walls.clear();
    };
    while (auto item = queue.pop()) {
        batch.push_back(std::move(item->win));
        tick_walls.push_back(item->tick_wall);
        if (batch.size() == opts.batch) flush();
    }
    flush();  // partial batch at end of capture
    producer.join();

    if (alpha_count) out.mean_t_alpha_s = alpha_total / static_cast<double>(alpha_count);
    if (beta_count) out.mean_t_beta_s = beta_total / static_cast<double>(beta_count);
    return out;
}

// Calibration container: per-signal thresholds plus the alarm threshold.
inline void save_calibration(const std::string& path, const SignalThresholds& th, double Theta,
                             double q, std::uint64_t selection_hash) {
    Container c;
    c.kind = ContainerKind::calibration;
    c.meta["q"] = format_double(q);
    c.meta["threshold"] = format_double(Theta);
    c.meta["signals"] = std::to_string(th.theta.size());
    c.meta["selection_hash"] = format_hash(selection_hash);
    auto push = [&](const char* name, const std::vector<double>& v) {
        NamedTensor t;
        t.name = name;
        t.dtype = TensorDType::f64;
        t.dims = {v.size()};
        t.data = v;
        c.tensors.push_back(std::move(t));
    };
    push("theta", th.theta);
    push("loss_mean", th.mean);
    push("loss_std", th.stddev);
    write_container_file(path, c);
}

struct Calibration {
    SignalThresholds thresholds;
    double Theta = 0;
    double q = 0;
    std::uint64_t selection_hash = 0;
};

inline Calibration load_calibration(const std::string& path) {
    Container c = read_container_file(path);
    if (c.kind != ContainerKind::calibration) throw DataError(path + " is not a calibration file");
    Calibration cal;
    cal.q = parse_double(c.meta_at("q"));
    cal.Theta = parse_double(c.meta_at("threshold"));
    cal.selection_hash = parse_u64(c.meta_at("selection_hash"), 16);
    cal.thresholds.theta = c.tensor_at("theta").data;
    cal.thresholds.mean = c.tensor_at("loss_mean").data;
    cal.thresholds.stddev = c.tensor_at("loss_std").data;
    std::size_t n = parse_u64(c.meta_at("signals"));
    if (cal.thresholds.theta.size() != n) throw DataError("calibration tensor length mismatch");
    return cal;
}

// One line per window: timestamp, verdict, peak rate, suspected signal,
// the top-k rates and any range violations.
inline void write_detection_report(std::ostream& os, const std::vector<DetectionResult>& results,
                                   const SignalLayout& layout) {
    os << "window_end_s\talarm\tmax_rate\targmax_index\targmax_signal\ttop\tviolations\n";
    char ts[32];
    for (const auto& r : results) {
        std::snprintf(ts, sizeof(ts), "%lld.%06lld",
                      static_cast<long long>(r.end_time_us / kUsPerSec),
                      static_cast<long long>(r.end_time_us % kUsPerSec));
        os << ts << '\t' << (r.alarm ? 1 : 0) << '\t' << format_double(r.max_rate) << '\t'
           << r.argmax << '\t' << layout.signals[r.argmax].label << '\t';
        for (std::size_t i = 0; i < r.top.size(); ++i)
            os << (i ? ";" : "") << layout.signals[r.top[i].first].label << '='
               << format_double(r.top[i].second);
        os << '\t';
        bool first = true;
        for (std::size_t i = 0; i < r.violations.size(); ++i)
            if (r.violations[i]) {
                os << (first ? "" : ";") << layout.signals[i].label;
                first = false;
            }
        if (first) os << '-';
        os << '\n';
    }
}

// Reads the report back for scoring. Only the columns the evaluator needs
// are restored: end time, alarm, max rate and argmax index.
inline std::vector<DetectionResult> read_detection_report(std::istream& is) {
    std::vector<DetectionResult> out;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        std::string_view v = trim(line);
        if (v.empty() || v[0] == '#') continue;
        if (!saw_header) {
            if (!v.starts_with("window_end_s"))
                throw ParseError("missing detection report header", line_no);
            saw_header = true;
            continue;
        }
        auto cols = split(v, '\t');
        if (cols.size() < 5) throw ParseError("expected at least 5 columns", line_no);
        std::size_t dot = cols[0].find('.');
        if (dot == std::string_view::npos || cols[0].size() - dot - 1 != 6)
            throw ParseError("bad timestamp '" + std::string(cols[0]) + "'", line_no);
        DetectionResult r;
        r.end_time_us =
            static_cast<TimeUs>(parse_u64(cols[0].substr(0, dot), 10, line_no)) * kUsPerSec +
            static_cast<TimeUs>(parse_u64(cols[0].substr(dot + 1), 10, line_no));
        if (cols[1] != "0" && cols[1] != "1") throw ParseError("alarm must be 0 or 1", line_no);
        r.alarm = cols[1] == "1";
        r.max_rate = parse_double(cols[2], line_no);
        r.argmax = parse_u64(cols[3], 10, line_no);
        out.push_back(std::move(r));
    }
    if (!saw_header) throw ParseError("missing detection report header");
    return out;
}

inline std::vector<DetectionResult> read_detection_report_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return read_detection_report(in);
}

// Time-by-signal error-rate matrix for plotting.
inline void write_heatmap_csv(std::ostream& os, const std::vector<DetectionResult>& results,
                              const SignalLayout& layout) {
    os << "window_end_s";
    for (const auto& s : layout.signals) os << ',' << s.label;
    os << '\n';
    char ts[32];
    for (const auto& r : results) {
        std::snprintf(ts, sizeof(ts), "%lld.%06lld",
                      static_cast<long long>(r.end_time_us / kUsPerSec),
                      static_cast<long long>(r.end_time_us % kUsPerSec));
        os << ts;
        for (double v : r.rates) os << ',' << format_double(v);
        os << '\n';
    }
}

}  // namespace xcanids
