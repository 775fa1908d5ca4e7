#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

#include "xcanids/detect.hpp"
#include "xcanids/error.hpp"
#include "xcanids/eval.hpp"
#include "xcanids/model.hpp"

using namespace xcanids;

namespace {

DetectionResult det(TimeUs t, bool alarm) {
    DetectionResult r;
    r.end_time_us = t;
    r.alarm = alarm;
    return r;
}

// Exhaustive pair-count reference: P(score_pos > score_neg) + half ties.
double auc_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& is_attack) {
    double wins = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!is_attack[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (is_attack[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("confusion counts and derived metrics", "[eval]") {
    std::vector<DetectionResult> results{
        det(1000, true), det(2000, true), det(3000, true),
        det(4000, false), det(5000, false), det(6000, false),
    };
    std::vector<std::pair<TimeUs, Label>> labels{
        {1000, Label::attack}, {2000, Label::attack}, {3000, Label::benign},
        {4000, Label::attack}, {5000, Label::benign}, {6000, Label::benign},
    };
    Confusion c = score_detections(results, labels);
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 2);
    CHECK(c.total() == 6);
    CHECK_THAT(c.precision(), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    CHECK_THAT(c.recall(), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    CHECK_THAT(c.f1(), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    CHECK_THAT(c.accuracy(), Catch::Matchers::WithinAbs(4.0 / 6.0, 1e-15));

    Confusion zero;
    CHECK(zero.precision() == 0.0);
    CHECK(zero.recall() == 0.0);
    CHECK(zero.f1() == 0.0);
    CHECK(zero.accuracy() == 0.0);
}

TEST_CASE("scoring rejects misaligned or unlabeled windows", "[eval]") {
    std::vector<DetectionResult> results{det(1000, true)};
    CHECK_THROWS_AS(score_detections(results, {}), DataError);
    CHECK_THROWS_AS(score_detections(results, {{2000, Label::attack}}), DataError);
    CHECK_THROWS_AS(score_detections(results, {{1000, Label::unlabeled}}), DataError);
}

TEST_CASE("perfect and inverted separations bound the AUC", "[eval]") {
    std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
    std::vector<std::uint8_t> labels{1, 1, 0, 0};
    CHECK_THAT(roc_auc(scores, labels).auc, Catch::Matchers::WithinAbs(1.0, 1e-12));

    std::vector<std::uint8_t> inverted{0, 0, 1, 1};
    CHECK_THAT(roc_auc(scores, inverted).auc, Catch::Matchers::WithinAbs(0.0, 1e-12));

    // one swapped pair out of four: 3/4
    std::vector<double> swapped{0.9, 0.2, 0.8, 0.1};
    std::vector<std::uint8_t> sl{1, 1, 0, 0};
    CHECK_THAT(roc_auc(swapped, sl).auc, Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("ties earn half credit", "[eval]") {
    std::vector<double> scores{0.5, 0.5, 0.5, 0.5};
    std::vector<std::uint8_t> labels{1, 0, 1, 0};
    CHECK_THAT(roc_auc(scores, labels).auc, Catch::Matchers::WithinAbs(0.5, 1e-12));

    std::vector<double> s2{0.9, 0.5, 0.5, 0.1};
    std::vector<std::uint8_t> l2{1, 1, 0, 0};
    // pairs: (0.9,0.5)=1 (0.9,0.1)=1 (0.5,0.5)=.5 (0.5,0.1)=1 over 4
    CHECK_THAT(roc_auc(s2, l2).auc, Catch::Matchers::WithinAbs(0.875, 1e-12));
}

TEST_CASE("the sweep matches the exhaustive pair count", "[eval][property]") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int round = 0; round < 50; ++round) {
        std::size_t n = 20 + rng() % 60;
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        bool both = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse quantization forces plenty of ties
            scores[i] = std::floor(u(rng) * 8.0) / 8.0;
            labels[i] = rng() % 3 == 0 ? 1 : 0;
        }
        std::size_t pos = 0;
        for (auto l : labels) pos += l;
        if (pos == 0 || pos == n) continue;
        both = true;
        REQUIRE(both);
        CHECK_THAT(roc_auc(scores, labels).auc,
                   Catch::Matchers::WithinAbs(auc_oracle(scores, labels), 1e-12));
    }
}

TEST_CASE("random scores hover near half", "[eval]") {
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> scores(4000);
    std::vector<std::uint8_t> labels(4000);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = u(rng);
        labels[i] = rng() % 2;
    }
    double auc = roc_auc(scores, labels).auc;
    CHECK(auc > 0.45);
    CHECK(auc < 0.55);
}

TEST_CASE("degenerate ROC inputs are rejected", "[eval]") {
    CHECK_THROWS_AS(roc_auc({}, {}), DataError);
    CHECK_THROWS_AS(roc_auc({0.5}, {1, 0}), DataError);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {1, 1}), DataError);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {0, 0}), DataError);
}

TEST_CASE("roc points serialize as csv", "[eval]") {
    RocResult roc;
    roc.points.push_back({0.75, 0.0, 0.5});
    roc.points.push_back({0.25, 0.5, 1.0});
    std::ostringstream os;
    write_roc_csv(os, roc);
    CHECK(os.str() == "threshold,fpr,tpr\n0.75,0,0.5\n0.25,0.5,1\n");
}

TEST_CASE("nearest-rank percentile", "[eval]") {
    std::vector<double> v{4.0, 1.0, 3.0, 2.0};
    CHECK(percentile(v, 0.5) == 2.0);    // ceil(2) -> 2nd smallest
    CHECK(percentile(v, 0.75) == 3.0);
    CHECK(percentile(v, 1.0) == 4.0);
    CHECK(percentile(v, 0.0) == 1.0);    // rank floor of one
    CHECK(percentile({7.0}, 0.99) == 7.0);
    CHECK_THROWS_AS(percentile({}, 0.5), DataError);
}

TEST_CASE("throughput inverts the per-window time", "[eval]") {
    ModelConfig cfg;
    cfg.family = ModelFamily::dense;
    cfg.encoder_widths = {16};
    cfg.latent = 4;
    cfg.decoder_widths = {16};
    cfg.window = 8;
    cfg.signals = 4;
    Autoencoder model(cfg);
    auto points = bench_throughput(model, {1, 8}, 3, 0.01);
    REQUIRE(points.size() == 2);
    for (const auto& p : points) {
        CHECK(p.sec_per_window > 0.0);
        CHECK_THAT(p.windows_per_s * p.sec_per_window, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    // batching should not make a window slower by much
    CHECK(points[1].sec_per_window < points[0].sec_per_window * 1.25);
    CHECK_THROWS_AS(bench_throughput(model, {0}), DataError);
}
