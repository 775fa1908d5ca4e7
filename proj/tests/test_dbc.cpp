#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "xcanids/dbc.hpp"
#include "xcanids/error.hpp"

using namespace xcanids;

namespace {

const char* kFixture = R"(VERSION "test 1"

BU_: EMS ABS CLU

BO_ 608 WHL_SPD: 8 ABS
 SG_ WHL_SPD_FL : 0|14@1+ (0.03125,0) [0|511.96875] "km/h" CLU
 SG_ WHL_SPD_FR : 16|14@1+ (0.03125,0) [0|511.96875] "km/h" CLU
 SG_ WHL_SPD_RL : 32|14@1+ (0.03125,0) [0|511.96875] "km/h" CLU
 SG_ WHL_SPD_RR : 48|14@1+ (0.03125,0) [0|511.96875] "km/h" CLU

BO_ 809 EMS_TEMP: 8 EMS
 SG_ TEMP_ENG : 7|16@0- (0.1,40) [-3236.7|3316.7] "degC" CLU
 SG_ BARO : 23|8@0+ (0.5,0) [0|127.5] "kPa"  Vector__XXX
)";

}  // namespace

TEST_CASE("dbc parser extracts messages and signal geometry", "[dbc]") {
    CanDatabase db = parse_dbc(kFixture);
    REQUIRE(db.version.has_value());
    CHECK(*db.version == "test 1");
    REQUIRE(db.ecus.size() == 3);
    CHECK(db.ecus[1] == "ABS");
    REQUIRE(db.messages.size() == 2);

    const MessageSpec& wheel = db.at(608);
    CHECK(wheel.name == "WHL_SPD");
    CHECK(wheel.dlc == 8);
    CHECK(wheel.sender == "ABS");
    REQUIRE(wheel.signals.size() == 4);
    const SignalSpec& fl = wheel.signals[0];
    CHECK(fl.name == "WHL_SPD_FL");
    CHECK(fl.start_bit == 0);
    CHECK(fl.bit_length == 14);
    CHECK(fl.little_endian);
    CHECK_FALSE(fl.is_signed);
    CHECK(fl.scale == 0.03125);
    CHECK(fl.offset == 0.0);
    CHECK(fl.max_phys == 511.96875);
    CHECK(fl.unit == "km/h");
    REQUIRE(fl.receivers.size() == 1);
    CHECK(fl.receivers[0] == "CLU");

    const SignalSpec& temp = db.at(809).signals[0];
    CHECK_FALSE(temp.little_endian);
    CHECK(temp.is_signed);
    CHECK(temp.start_bit == 7);
    CHECK(temp.offset == 40.0);

    // the placeholder receiver token means "no receivers"
    CHECK(db.at(809).signals[1].receivers.empty());
}

TEST_CASE("printing and reparsing a database is the identity", "[dbc]") {
    CanDatabase db = parse_dbc(kFixture);
    std::string text = print_dbc(db);
    CanDatabase again = parse_dbc(text);
    CHECK(db == again);
    CHECK(print_dbc(again) == text);
}

TEST_CASE("dbc parser rejects multiplexed signals", "[dbc]") {
    const char* mux =
        "BO_ 100 M1: 8 E\n"
        " SG_ SEL M : 0|4@1+ (1,0) [0|15] \"\" E\n";
    CHECK_THROWS_AS(parse_dbc(mux), UnsupportedError);
    const char* muxed =
        "BO_ 100 M1: 8 E\n"
        " SG_ VAL m2 : 8|8@1+ (1,0) [0|255] \"\" E\n";
    CHECK_THROWS_AS(parse_dbc(muxed), UnsupportedError);
}

TEST_CASE("dbc parser rejects extended ids and oversized frames", "[dbc]") {
    CHECK_THROWS_AS(parse_dbc("BO_ 2048 X: 8 E\n"), UnsupportedError);
    CHECK_THROWS_AS(parse_dbc("BO_ 2147483848 X: 8 E\n"), UnsupportedError);
    CHECK_THROWS_AS(parse_dbc("BO_ 100 X: 9 E\n"), UnsupportedError);
    CHECK_NOTHROW(parse_dbc("BO_ 2047 X: 8 E\n"));
}

TEST_CASE("dbc parser validates semantic constraints", "[dbc]") {
    auto wrap = [](const std::string& sg) {
        return "BO_ 100 X: 8 E\n SG_ " + sg + "\n";
    };
    // zero scale
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 0|8@1+ (0,0) [0|255] "" E)")), ParseError);
    // min above max
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 0|8@1+ (1,0) [10|5] "" E)")), ParseError);
    // zero width and overwide
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 0|0@1+ (1,0) [0|0] "" E)")), ParseError);
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 0|65@1+ (1,0) [0|1] "" E)")), ParseError);
    // little-endian window past the frame end
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 60|8@1+ (1,0) [0|255] "" E)")), ParseError);
    // big-endian window walking past the last byte
    CHECK_THROWS_AS(parse_dbc(wrap(R"(A : 7|65@0+ (1,0) [0|1] "" E)")), ParseError);
    // duplicate signal name
    CHECK_THROWS_AS(
        parse_dbc("BO_ 100 X: 8 E\n SG_ A : 0|8@1+ (1,0) [0|255] \"\" E\n"
                  " SG_ A : 8|8@1+ (1,0) [0|255] \"\" E\n"),
        ParseError);
    // duplicate arbitration id
    CHECK_THROWS_AS(parse_dbc("BO_ 100 X: 8 E\nBO_ 100 Y: 8 E\n"), ParseError);
    // signal before any message
    CHECK_THROWS_AS(parse_dbc(" SG_ A : 0|8@1+ (1,0) [0|255] \"\" E\n"), ParseError);
    // unquoted version
    CHECK_THROWS_AS(parse_dbc("VERSION nope\n"), ParseError);
}

TEST_CASE("dbc parse errors carry line numbers", "[dbc]") {
    try {
        parse_dbc("VERSION \"v\"\n\nBO_ 100 X 8 E\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
}

TEST_CASE("unknown keywords are skipped and counted", "[dbc]") {
    const char* text =
        "VERSION \"v\"\n"
        "NS_ :\n"
        "CM_ SG_ 100 A \"comment\";\n"
        "CM_ BU_ E \"another\";\n"
        "VAL_ 100 A 0 \"off\" 1 \"on\";\n"
        "BO_ 100 X: 8 E\n"
        " SG_ A : 0|8@1+ (1,0) [0|255] \"\" E\n";
    std::vector<std::string> notes;
    CanDatabase db = parse_dbc(text, &notes);
    CHECK(db.messages.size() == 1);
    bool saw_cm = false;
    for (const auto& n : notes)
        if (n.find("CM_") != std::string::npos && n.find("2") != std::string::npos) saw_cm = true;
    CHECK(saw_cm);
}

TEST_CASE("big-endian fit depends on the sawtooth walk", "[dbc]") {
    // start bit 0 is the LSB of byte 0: only a 1-bit field fits there
    CHECK_NOTHROW(parse_dbc("BO_ 1 X: 2 E\n SG_ A : 0|1@0+ (1,0) [0|1] \"\" E\n"));
    CHECK_THROWS_AS(parse_dbc("BO_ 1 X: 1 E\n SG_ A : 0|2@0+ (1,0) [0|3] \"\" E\n"),
                    ParseError);
    // start bit 7 of byte 0 can span the whole frame
    CHECK_NOTHROW(parse_dbc("BO_ 1 X: 2 E\n SG_ A : 7|16@0+ (1,0) [0|65535] \"\" E\n"));
    CHECK_THROWS_AS(parse_dbc("BO_ 1 X: 2 E\n SG_ A : 7|17@0+ (1,0) [0|1] \"\" E\n"),
                    ParseError);
}

TEST_CASE("signals may share bits without a parse error", "[dbc]") {
    // overlap is legal in the grammar; the serializer is what rejects it
    CHECK_NOTHROW(parse_dbc(
        "BO_ 1 X: 8 E\n SG_ A : 0|8@1+ (1,0) [0|255] \"\" E\n"
        " SG_ B : 4|8@1+ (1,0) [0|255] \"\" E\n"));
}
