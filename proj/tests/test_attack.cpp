#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcanids/attack.hpp"
#include "xcanids/canlog.hpp"
#include "xcanids/dbc.hpp"
#include "xcanids/error.hpp"
#include "xcanids/selection.hpp"

using namespace xcanids;

namespace {

const char* kDbText =
    "BO_ 16 A: 1 E\n SG_ VA : 0|8@1+ (1,0) [0|255] \"\" E\n"
    "BO_ 32 B: 1 E\n SG_ VB : 0|8@1+ (1,0) [0|255] \"\" E\n";

CanMessage frame(std::int64_t t, std::uint32_t aid, std::uint8_t v) {
    CanMessage m;
    m.time_us = t;
    m.aid = aid;
    m.payload = {v};
    return m;
}

// 0x10 every 10 ms, 0x20 every 25 ms, one second total.
std::vector<CanMessage> benign_log() {
    std::vector<CanMessage> log;
    for (int i = 0; i < 100; ++i) log.push_back(frame(i * 10000, 0x10, static_cast<std::uint8_t>(i)));
    for (int i = 0; i < 40; ++i) log.push_back(frame(i * 25000, 0x20, 0xEE));
    std::sort(log.begin(), log.end(),
              [](const CanMessage& a, const CanMessage& b) { return a.time_us < b.time_us; });
    return log;
}

std::vector<CanMessage> keep_benign(const LabeledLog& l) {
    std::vector<CanMessage> out;
    for (std::size_t i = 0; i < l.messages.size(); ++i)
        if (!l.injected[i]) out.push_back(l.messages[i]);
    return out;
}

std::vector<CanMessage> keep_injected(const LabeledLog& l) {
    std::vector<CanMessage> out;
    for (std::size_t i = 0; i < l.messages.size(); ++i)
        if (l.injected[i]) out.push_back(l.messages[i]);
    return out;
}

bool sorted_by_time(const std::vector<CanMessage>& msgs) {
    for (std::size_t i = 1; i < msgs.size(); ++i)
        if (msgs[i].time_us < msgs[i - 1].time_us) return false;
    return true;
}

}  // namespace

TEST_CASE("fuzzing adds the planned frame count inside the period", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::fuzzing;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.rate_per_s = 50.0;
    plan.seed = 9;

    LabeledLog out = apply_attack(benign, plan);
    CHECK(sorted_by_time(out.messages));
    auto injected = keep_injected(out);
    CHECK(injected.size() == 10);  // 50/s * 0.2s
    for (const auto& m : injected) {
        CHECK(m.time_us >= plan.start_us);
        CHECK(m.time_us < plan.end_us);
        CHECK(m.payload.size() == 8);
        CHECK((m.aid == 0x10 || m.aid == 0x20));  // pool defaults to observed AIDs
    }
    CHECK(keep_benign(out) == benign);

    // same plan, same frames
    LabeledLog again = apply_attack(benign, plan);
    CHECK(again.messages == out.messages);
    CHECK(again.injected == out.injected);

    plan.seed = 10;
    LabeledLog other = apply_attack(benign, plan);
    CHECK(other.messages != out.messages);
}

TEST_CASE("fuzzing draws from an explicit pool or the whole id space", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::fuzzing;
    plan.start_us = 0;
    plan.end_us = 1000000;
    plan.rate_per_s = 200.0;
    plan.aid_pool = {0x77};
    for (const auto& m : keep_injected(apply_attack(benign, plan))) CHECK(m.aid == 0x77);

    plan.aid_pool.clear();
    plan.random_aids = true;
    bool outside_observed = false;
    for (const auto& m : keep_injected(apply_attack(benign, plan))) {
        CHECK(m.aid <= kMaxAid);
        if (m.aid != 0x10 && m.aid != 0x20) outside_observed = true;
    }
    CHECK(outside_observed);
}

TEST_CASE("fabrication shadows each target frame after a fixed delay", "[attack]") {
    CanDatabase db = parse_dbc(kDbText);
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::fabrication;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.target_aid = 0x10;
    plan.fabrication_delay_us = 100;
    plan.payload.mode = PayloadGen::Mode::constant_bytes;
    plan.payload.bytes = {0xFF};

    LabeledLog out = apply_attack(benign, plan, &db);
    CHECK(sorted_by_time(out.messages));
    CHECK(keep_benign(out) == benign);
    auto injected = keep_injected(out);
    REQUIRE(injected.size() == 20);  // benign 0x10 frames at 300..490 ms
    std::int64_t expect = 300100;
    for (const auto& m : injected) {
        CHECK(m.aid == 0x10);
        CHECK(m.time_us == expect);
        CHECK(m.payload == std::vector<std::uint8_t>{0xFF});
        expect += 10000;
    }
}

TEST_CASE("ramp payloads sweep a signal across the period", "[attack]") {
    CanDatabase db = parse_dbc(kDbText);
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::fabrication;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.target_aid = 0x10;
    plan.payload.mode = PayloadGen::Mode::signal_ramp;
    plan.payload.signal = "VA";
    plan.payload.value_from = 0.0;
    plan.payload.value_to = 200.0;

    auto injected = keep_injected(apply_attack(benign, plan, &db));
    REQUIRE(injected.size() == 20);
    CHECK(injected[0].payload[0] == 0);    // frac 0 at the period start
    CHECK(injected[10].payload[0] == 100); // frac 0.5 halfway through
    CHECK(injected[19].payload[0] == 190);

    plan.payload.mode = PayloadGen::Mode::signal_const;
    plan.payload.signal = "NOPE";
    CHECK_THROWS_AS(apply_attack(benign, plan, &db), DataError);
}

TEST_CASE("suspension silences exactly the target stream in the period", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::suspension;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.target_aid = 0x10;

    LabeledLog out = apply_attack(benign, plan);
    CHECK(out.messages.size() == benign.size() - 20);
    for (const auto& f : out.injected) CHECK(f == 0);
    for (const auto& m : out.messages) {
        bool dropped_zone = m.aid == 0x10 && m.time_us >= 300000 && m.time_us < 500000;
        CHECK_FALSE(dropped_zone);
    }
    // untouched frames survive byte for byte
    std::vector<CanMessage> expect;
    for (const auto& m : benign)
        if (!(m.aid == 0x10 && m.time_us >= 300000 && m.time_us < 500000)) expect.push_back(m);
    CHECK(out.messages == expect);

    plan.target_aid = 0x7FF;  // not present
    CHECK_THROWS_AS(apply_attack(benign, plan), DataError);
}

TEST_CASE("masquerade rewrites payloads in place", "[attack]") {
    CanDatabase db = parse_dbc(kDbText);
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::masquerade;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.target_aid = 0x10;
    plan.payload.mode = PayloadGen::Mode::signal_const;
    plan.payload.signal = "VA";
    plan.payload.value_from = 250.0;

    LabeledLog out = apply_attack(benign, plan, &db);
    REQUIRE(out.messages.size() == benign.size());
    std::size_t rewritten = 0;
    for (std::size_t i = 0; i < out.messages.size(); ++i) {
        CHECK(out.messages[i].time_us == benign[i].time_us);
        CHECK(out.messages[i].aid == benign[i].aid);
        if (out.injected[i]) {
            ++rewritten;
            CHECK(out.messages[i].aid == 0x10);
            CHECK(out.messages[i].payload == std::vector<std::uint8_t>{250});
        } else {
            CHECK(out.messages[i].payload == benign[i].payload);
        }
    }
    CHECK(rewritten == 20);
}

TEST_CASE("identity masquerade flags frames without changing bytes", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::masquerade;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.target_aid = 0x10;
    plan.payload.mode = PayloadGen::Mode::identity;

    LabeledLog out = apply_attack(benign, plan);
    CHECK(out.messages == benign);
    std::size_t flagged = 0;
    for (auto f : out.injected) flagged += f;
    CHECK(flagged == 20);
}

TEST_CASE("replay repeats captured traffic inside the attack period", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::replay;
    plan.start_us = 300000;
    plan.end_us = 500000;
    plan.capture_start_us = 0;
    plan.capture_end_us = 100000;

    LabeledLog out = apply_attack(benign, plan);
    CHECK(keep_benign(out) == benign);
    auto injected = keep_injected(out);
    // capture holds 10 frames of 0x10 and 4 of 0x20; two full repetitions fit
    REQUIRE(injected.size() == 28);
    std::set<std::pair<std::uint32_t, std::vector<std::uint8_t>>> captured;
    for (const auto& m : benign)
        if (m.time_us < 100000) captured.insert({m.aid, m.payload});
    for (const auto& m : injected) {
        CHECK(m.time_us >= plan.start_us);
        CHECK(m.time_us < plan.end_us);
        CHECK(captured.count({m.aid, m.payload}) == 1);
    }

    plan.capture_start_us = 905000;
    plan.capture_end_us = 905001;  // between frames, nothing to capture
    CHECK_THROWS_AS(apply_attack(benign, plan), DataError);
    plan.capture_end_us = plan.capture_start_us;
    CHECK_THROWS_AS(apply_attack(benign, plan), DataError);
}

TEST_CASE("an empty attack period is rejected", "[attack]") {
    auto benign = benign_log();
    AttackPlan plan;
    plan.kind = AttackKind::fuzzing;
    plan.start_us = 500000;
    plan.end_us = 500000;
    CHECK_THROWS_AS(apply_attack(benign, plan), DataError);
}

TEST_CASE("window labels mirror cache residency for payload attacks", "[attack]") {
    CanDatabase db = parse_dbc(kDbText);
    SignalSelection sel;
    sel.included = {{0x10, "VA"}};
    SignalLayout layout = build_layout(db, sel);

    // 0x10 every 10 ms for 100 ms; masquerade rewrites the 30 and 40 ms frames
    LabeledLog labeled;
    for (int i = 0; i <= 10; ++i) {
        labeled.messages.push_back(frame(i * 10000, 0x10, static_cast<std::uint8_t>(i)));
        labeled.injected.push_back(i == 3 || i == 4 ? 1 : 0);
    }
    labeled.plan.kind = AttackKind::masquerade;
    labeled.plan.start_us = 30000;
    labeled.plan.end_us = 50000;

    auto labels = label_windows(labeled, layout, {.tick_us = 10000, .window = 2});
    REQUIRE(labels.size() == 10);  // windows end at 10..100 ms
    auto at = [&](TimeUs t) {
        for (const auto& [tt, l] : labels)
            if (tt == t) return l;
        FAIL("no label at " + std::to_string(t));
        return Label::unlabeled;
    };
    CHECK(at(10000) == Label::benign);
    CHECK(at(20000) == Label::benign);
    CHECK(at(30000) == Label::attack);  // crafted frame resident at tick 30
    CHECK(at(40000) == Label::attack);
    CHECK(at(50000) == Label::attack);  // tick 40 still inside the window
    CHECK(at(60000) == Label::benign);  // overlaps the period but nothing resident
    CHECK(at(70000) == Label::benign);
    CHECK(at(100000) == Label::benign);
}

TEST_CASE("suspension labels go by period overlap alone", "[attack]") {
    CanDatabase db = parse_dbc(kDbText);
    SignalSelection sel;
    sel.included = {{0x10, "VA"}};
    SignalLayout layout = build_layout(db, sel);

    LabeledLog labeled;
    for (int i = 0; i <= 10; ++i) {
        if (i == 3 || i == 4) continue;  // suspended frames are simply gone
        labeled.messages.push_back(frame(i * 10000, 0x10, static_cast<std::uint8_t>(i)));
        labeled.injected.push_back(0);
    }
    labeled.plan.kind = AttackKind::suspension;
    labeled.plan.start_us = 30000;
    labeled.plan.end_us = 50000;

    auto labels = label_windows(labeled, layout, {.tick_us = 10000, .window = 2});
    REQUIRE(labels.size() == 10);
    std::size_t attacks = 0;
    for (const auto& [t, l] : labels)
        if (l == Label::attack) {
            ++attacks;
            CHECK(t >= 30000);
            CHECK(t <= 60000);  // last window whose span still touches [30, 50) ms
        }
    CHECK(attacks == 4);
}

TEST_CASE("label files round trip", "[attack]") {
    std::vector<std::pair<TimeUs, Label>> labels{
        {1618345147674253, Label::attack},
        {1618345147684253, Label::benign},
    };
    std::ostringstream os;
    write_labels(os, labels);
    std::istringstream is(os.str());
    CHECK(read_labels(is) == labels);

    std::istringstream bad("1.000000\tmaybe\n");
    CHECK_THROWS_AS(read_labels(bad), ParseError);
    std::istringstream short_row("1.000000\n");
    CHECK_THROWS_AS(read_labels(short_row), ParseError);
}

TEST_CASE("plan files parse with defaults and reject junk", "[attack]") {
    using nlohmann::json;
    AttackPlan fab = parse_attack_plan(json::parse(R"({
        "kind": "fabrication", "start_s": 10.0, "end_s": 20.0, "aid": "0x2B0",
        "payload": {"mode": "signal", "signal": "SPEED", "value": 200.0}
    })"));
    CHECK(fab.kind == AttackKind::fabrication);
    CHECK(fab.start_us == 10000000);
    CHECK(fab.end_us == 20000000);
    CHECK(fab.target_aid == 0x2B0);
    CHECK(fab.seed == 42);
    CHECK(fab.fabrication_delay_us == 100);
    CHECK(fab.payload.mode == PayloadGen::Mode::signal_const);
    CHECK(fab.payload.signal == "SPEED");
    CHECK(fab.payload.value_from == 200.0);

    AttackPlan fuzz = parse_attack_plan(json::parse(R"({
        "kind": "fuzzing", "start_s": 1.0, "end_s": 2.0, "rate_per_s": 100.0,
        "aid_pool": ["100", "0x200"], "seed": 7
    })"));
    CHECK(fuzz.rate_per_s == 100.0);
    CHECK(fuzz.aid_pool == std::vector<std::uint32_t>{0x100, 0x200});
    CHECK(fuzz.seed == 7);

    AttackPlan rep = parse_attack_plan(json::parse(R"({
        "kind": "replay", "start_s": 5.0, "end_s": 6.0,
        "capture_start_s": 0.5, "capture_end_s": 1.0
    })"));
    CHECK(rep.capture_start_us == 500000);
    CHECK(rep.capture_end_us == 1000000);

    CHECK_THROWS_AS(parse_attack_plan(json::parse(R"({"start_s": 1.0})")), DataError);
    CHECK_THROWS_AS(parse_attack_plan(json::parse(
                        R"({"kind": "suspension", "start_s": 1.0, "end_s": 2.0, "aid": "0x800"})")),
                    DataError);
    CHECK_THROWS_AS(parse_attack_plan(json::parse(
                        R"({"kind": "nonsense", "start_s": 1.0, "end_s": 2.0})")),
                    DataError);
    CHECK_THROWS_AS(
        parse_attack_plan(json::parse(
            R"({"kind": "masquerade", "start_s": 1.0, "end_s": 2.0, "aid": "10",
                "payload": {"mode": "wat"}})")),
        DataError);
}
