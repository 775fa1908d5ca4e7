#pragma once

// Scoring of detector output against window labels: confusion counts, the
// usual derived metrics, a tie-aware ROC sweep over the max-rate scores and
// a forward-pass throughput benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xcanids/detect.hpp"
#include "xcanids/error.hpp"
#include "xcanids/model.hpp"

namespace xcanids {

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    double precision() const { return tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0; }
    double recall() const { return tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0; }
    double f1() const {
        double p = precision(), r = recall();
        return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    double accuracy() const {
        return total() ? static_cast<double>(tp + tn) / total() : 0.0;
    }
};

// Predictions and labels must describe the same windows in the same order;
// both come from the same tick grid, so timestamps must agree exactly.
inline Confusion score_detections(const std::vector<DetectionResult>& results,
                                  const std::vector<std::pair<TimeUs, Label>>& labels) {
    if (results.size() != labels.size())
        throw DataError("detection count " + std::to_string(results.size()) +
                        " does not match label count " + std::to_string(labels.size()));
    Confusion c;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].end_time_us != labels[i].first)
            throw DataError("window timestamps diverge at index " + std::to_string(i));
        if (labels[i].second == Label::unlabeled)
            throw DataError("unlabeled window at index " + std::to_string(i));
        bool attack = labels[i].second == Label::attack;
        bool alarm = results[i].alarm;
        if (attack && alarm) ++c.tp;
        else if (attack) ++c.fn;
        else if (alarm) ++c.fp;
        else ++c.tn;
    }
    return c;
}

struct RocPoint {
    double threshold = 0;
    double fpr = 0, tpr = 0;
};

struct RocResult {
    double auc = 0;
    std::vector<RocPoint> points;  // one per distinct score, descending score
};

// Threshold sweep over the scores. Equal scores move as one group, which
// makes the trapezoid area equal to the normalized Mann-Whitney statistic
// with the usual half credit for ties.
inline RocResult roc_auc(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& is_attack) {
    if (scores.size() != is_attack.size() || scores.empty())
        throw DataError("scores and labels must align");
    std::size_t pos = 0;
    for (auto a : is_attack) pos += a ? 1 : 0;
    std::size_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) throw DataError("ROC needs both classes present");

    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocResult out;
    double auc = 0;
    std::size_t tp = 0, fp = 0;
    double prev_fpr = 0, prev_tpr = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        double s = scores[idx[i]];
        std::size_t gtp = 0, gfp = 0;
        while (i < idx.size() && scores[idx[i]] == s) {
            if (is_attack[idx[i]]) ++gtp;
            else ++gfp;
            ++i;
        }
        tp += gtp;
        fp += gfp;
        double fpr = static_cast<double>(fp) / static_cast<double>(neg);
        double tpr = static_cast<double>(tp) / static_cast<double>(pos);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        out.points.push_back({s, fpr, tpr});
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    out.auc = auc;
    return out;
}

inline void write_roc_csv(std::ostream& os, const RocResult& roc) {
    os << "threshold,fpr,tpr\n";
    for (const auto& p : roc.points)
        os << format_double(p.threshold) << ',' << format_double(p.fpr) << ','
           << format_double(p.tpr) << '\n';
}

// Nearest-rank percentile of a sample (q in [0, 1]).
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw DataError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    if (rank == 0) rank = 1;
    if (rank > v.size()) rank = v.size();
    return v[rank - 1];
}

struct BenchPoint {
    std::size_t batch = 0;
    double sec_per_window = 0;  // median over repeats
    double windows_per_s = 0;
};

// Forward-pass throughput for growing batch sizes on synthetic windows.
// Medians over `repeats` timed runs; each run loops the forward pass until
// it has consumed at least `min_run_s` of wall time.
inline std::vector<BenchPoint> bench_throughput(Autoencoder& model,
                                                const std::vector<std::size_t>& batches,
                                                int repeats = 5, double min_run_s = 0.05,
                                                std::uint64_t seed = 42) {
    using Clock = std::chrono::steady_clock;
    const ModelConfig& cfg = model.config();
    const std::size_t F = static_cast<std::size_t>(cfg.window) * cfg.signals;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<BenchPoint> out;
    for (std::size_t B : batches) {
        if (B == 0) throw DataError("batch size must be positive");
        std::vector<double> X(B * F);
        for (auto& v : X) v = u(rng);
        model.forward(X.data(), static_cast<int>(B));  // warm up buffers
        std::vector<double> samples;
        for (int r = 0; r < repeats; ++r) {
            std::size_t iters = 0;
            auto t0 = Clock::now();
            double elapsed = 0;
            do {
                model.forward(X.data(), static_cast<int>(B));
                ++iters;
                elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
            } while (elapsed < min_run_s);
            samples.push_back(elapsed / (static_cast<double>(iters) * B));
        }
        std::sort(samples.begin(), samples.end());
        BenchPoint p;
        p.batch = B;
        p.sec_per_window = samples[samples.size() / 2];
        p.windows_per_s = 1.0 / p.sec_per_window;
        out.push_back(p);
    }
    return out;
}

}  // namespace xcanids
