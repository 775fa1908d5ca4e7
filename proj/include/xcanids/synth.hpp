#pragma once

// Synthetic in-vehicle traffic with known ground truth. A small kinematic
// model drives a handful of correlated channels (speed, wheel speeds, rpm,
// gear, steering, pedals, temperatures, odometer) through an accelerate /
// cruise / brake / turn cycle; twelve message streams serialize the state on
// fixed schedules with per-frame jitter. Checksum, counter and constant
// decoy signals are present on purpose so that signal selection has
// something to reject. Output is a function of the seed alone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xcanids/canlog.hpp"
#include "xcanids/dbc.hpp"
#include "xcanids/deserialize.hpp"
#include "xcanids/error.hpp"

namespace xcanids {

inline const char* synth_dbc_text() {
    return R"(VERSION "synthetic-vehicle 1"

BU_: EMS TCU ABS MDPS VSM CLU DATC BCM EPB HU

BO_ 256 EMS_SPEED: 8 EMS
 SG_ VEHICLE_SPEED : 0|13@1+ (0.03125,0) [0|255.96875] "km/h" CLU,ABS
 SG_ THROTTLE_POS : 16|8@1+ (0.5,0) [0|127.5] "%" TCU
 SG_ SPEED_MsgCount : 32|4@1+ (1,0) [0|15] "" CLU
 SG_ SPEED_CheckSum2 : 40|8@1+ (1,0) [0|255] "" CLU

BO_ 272 EMS_RPM: 8 EMS
 SG_ ENGINE_RPM : 7|16@0+ (0.125,0) [0|8191.875] "rpm" TCU,CLU
 SG_ COOLANT_TEMP : 23|12@0- (0.1,40) [-164.8|244.7] "degC" CLU
 SG_ RPM_MsgCnt : 39|4@0+ (1,0) [0|15] "" CLU

BO_ 288 TCU_GEAR: 4 TCU
 SG_ GEAR_SEL : 0|4@1+ (1,0) [0|8] "" CLU,EMS
 SG_ GEAR_AliveCounter : 8|4@1+ (1,0) [0|15] "" CLU

BO_ 336 VSM_ACCEL: 6 VSM
 SG_ LONG_ACCEL : 0|12@1- (0.01,0) [-20.48|20.47] "m/s2" ABS
 SG_ LAT_ACCEL : 16|12@1- (0.01,0) [-20.48|20.47] "m/s2" ABS

BO_ 640 ABS_WHL_SPD: 8 ABS
 SG_ WHL_SPD_FL : 0|14@1+ (0.03125,0) [0|511.96875] "km/h" EMS,CLU
 SG_ WHL_SPD_FR : 16|14@1+ (0.03125,0) [0|511.96875] "km/h" EMS,CLU
 SG_ WHL_SPD_RL : 32|14@1+ (0.03125,0) [0|511.96875] "km/h" EMS,CLU
 SG_ WHL_SPD_RR : 48|14@1+ (0.03125,0) [0|511.96875] "km/h" EMS,CLU

BO_ 688 MDPS_STEER: 6 MDPS
 SG_ STEER_ANGLE : 0|16@1- (0.1,0) [-3276.8|3276.7] "deg" BCM
 SG_ STEER_RATE : 16|12@1- (0.5,0) [-1024|1023.5] "deg/s" BCM
 SG_ STEER_ParityBit : 28|1@1+ (1,0) [0|1] "" BCM

BO_ 704 BRAKE_UNIT: 6 ABS
 SG_ BRAKE_ACT : 0|1@1+ (1,0) [0|1] "" CLU,EPB
 SG_ BRAKE_PRESSURE : 8|12@1+ (0.05,0) [0|204.75] "bar" EPB

BO_ 1296 CLU_ODO: 8 CLU
 SG_ ODOMETER : 0|24@1+ (0.1,0) [0|1677721.5] "km" BCM
 SG_ FUEL_LEVEL : 24|12@1+ (0.05,0) [0|204.75] "%" BCM

BO_ 1360 DATC_TEMP: 4 DATC
 SG_ AMBIENT_TEMP : 0|8@1+ (0.5,-40) [-40|87.5] "degC" CLU
 SG_ CABIN_SET_TEMP : 8|8@1+ (0.5,0) [0|127.5] "degC" CLU

BO_ 1424 BCM_STATUS: 2 BCM
 SG_ DOOR_OPEN : 0|1@1+ (1,0) [0|1] "" CLU
 SG_ HEADLAMP_ON : 1|1@1+ (1,0) [0|1] "" CLU

BO_ 1456 EPB_STATUS: 2 EPB
 SG_ EPB_ENGAGED : 0|1@1+ (1,0) [0|1] "" CLU

BO_ 1472 HU_NAV: 8 HU
 SG_ NAV_STATUS : 0|8@1+ (1,0) [0|255] "" CLU
 SG_ NAV_CheckSum : 8|8@1+ (1,0) [0|255] "" CLU
)";
}

enum class DriveCycle { driving, stationary };

struct SynthProfile {
    double duration_s = 600.0;
    std::uint64_t seed = 42;
    DriveCycle cycle = DriveCycle::driving;
};

struct VehicleState {
    double time_s = 0;
    double speed_kmh = 0;
    double wheel_kmh[4] = {0, 0, 0, 0};
    double rpm = 750;
    int gear = 0;
    double steer_deg = 0;
    double steer_rate_dps = 0;
    double throttle_pct = 0;
    bool brake_act = false;
    double brake_pressure_bar = 0;
    double long_accel_ms2 = 0;
    double lat_accel_ms2 = 0;
    double coolant_c = 22.0;
    double odometer_km = 0;
    double fuel_pct = 62.0;
};

struct SynthResult {
    CanDatabase db;
    std::vector<CanMessage> log;
    std::vector<VehicleState> trace;  // one entry per 10 ms base tick
};

namespace detail {

// Evolves the drive cycle at 10 ms resolution.
class VehicleSim {
public:
    VehicleSim(DriveCycle cycle, std::mt19937_64& rng) : cycle_(cycle), rng_(rng) {
        if (cycle_ == DriveCycle::stationary) phase_ = Phase::idle;
    }

    void step(double dt, VehicleState& s) {
        double prev_speed = s.speed_kmh;
        if (cycle_ == DriveCycle::driving) {
            drive_phase(dt, s);
            steer_events(dt, s);
        } else {
            s.speed_kmh = 0;
            s.gear = 0;
            s.throttle_pct = 0;
            s.brake_act = false;
            s.brake_pressure_bar = 0;
            s.steer_deg = 0;
            s.steer_rate_dps = 0;
        }
        // engine
        if (s.speed_kmh < 1.0) {
            s.gear = 0;
            s.rpm = 750 + noise(4);
        } else {
            update_gear(s);
            static constexpr double kRpmPerKmh[7] = {0, 120, 75, 52, 40, 33, 28};
            s.rpm = std::clamp(750.0 + s.speed_kmh * kRpmPerKmh[s.gear] + noise(8), 700.0, 6400.0);
        }
        // wheels track vehicle speed within a 2 % slip band
        for (int i = 0; i < 4; ++i) {
            double ripple = 0.004 * std::sin(2 * kPi * s.time_s / (3.1 + 0.7 * i) + i) + noise(0.002);
            s.wheel_kmh[i] = std::max(0.0, s.speed_kmh * (1.0 + std::clamp(ripple, -0.02, 0.02)));
        }
        s.long_accel_ms2 = std::clamp((s.speed_kmh - prev_speed) / 3.6 / dt + noise(0.04), -8.0, 8.0);
        double v_ms = s.speed_kmh / 3.6;
        s.lat_accel_ms2 = std::clamp(
            v_ms * v_ms * s.steer_deg * kPi / 180.0 / (16.0 * 2.7) + noise(0.03), -9.0, 9.0);
        s.coolant_c += (((s.speed_kmh > 1 ? 88.0 : 85.0) - s.coolant_c) / 150.0) * dt + noise(0.01);
        s.odometer_km += s.speed_kmh * dt / 3600.0;
        s.fuel_pct = std::max(
            0.0, s.fuel_pct - (0.0004 + 0.00002 * s.speed_kmh + 0.0009 * s.throttle_pct / 100.0) * dt);
        s.time_s += dt;
    }

private:
    enum class Phase { accel, cruise, brake, idle };
    static constexpr double kPi = 3.14159265358979323846;

    double noise(double sigma) { return normal_(rng_) * sigma; }
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01_(rng_);
    }

    void drive_phase(double dt, VehicleState& s) {
        phase_left_ -= dt;
        switch (phase_) {
            case Phase::accel:
                s.speed_kmh += accel_ * 3.6 * dt;
                s.throttle_pct = std::clamp(18.0 + 9.0 * accel_ + noise(0.8), 0.0, 99.0);
                s.brake_act = false;
                s.brake_pressure_bar = std::max(0.0, s.brake_pressure_bar - 120 * dt);
                if (s.speed_kmh >= target_) {
                    s.speed_kmh = target_;
                    enter_cruise(s);
                }
                break;
            case Phase::cruise:
                s.speed_kmh = std::max(0.0, s.speed_kmh + noise(0.05));
                s.throttle_pct = std::clamp(4.0 + 0.26 * s.speed_kmh + noise(0.6), 0.0, 99.0);
                s.brake_act = false;
                s.brake_pressure_bar = 0;
                if (phase_left_ <= 0) {
                    target_ = uniform(0, 115);
                    if (target_ > s.speed_kmh + 5) {
                        phase_ = Phase::accel;
                        accel_ = uniform(1.2, 2.6);
                    } else {
                        phase_ = Phase::brake;
                        decel_ = uniform(1.8, 3.4);
                        if (target_ < 12) target_ = 0;
                    }
                }
                break;
            case Phase::brake:
                s.speed_kmh -= decel_ * 3.6 * dt;
                s.throttle_pct = std::max(0.0, s.throttle_pct - 60 * dt);
                s.brake_act = true;
                s.brake_pressure_bar = std::clamp(22.0 * decel_ + noise(1.5), 0.0, 180.0);
                if (s.speed_kmh <= target_) {
                    s.speed_kmh = std::max(0.0, target_);
                    if (target_ <= 0) {
                        phase_ = Phase::idle;
                        phase_left_ = uniform(4, 12);
                        s.brake_pressure_bar = 12;
                    } else {
                        enter_cruise(s);
                    }
                }
                break;
            case Phase::idle:
                s.speed_kmh = 0;
                s.throttle_pct = 0;
                s.brake_act = true;
                if (phase_left_ <= 0) {
                    phase_ = Phase::accel;
                    target_ = uniform(35, 110);
                    accel_ = uniform(1.4, 2.6);
                }
                break;
        }
        s.speed_kmh = std::clamp(s.speed_kmh, 0.0, 180.0);
    }

    void enter_cruise(VehicleState&) {
        phase_ = Phase::cruise;
        phase_left_ = uniform(10, 35);
    }

    // Lane changes and corners happen on their own clock so that steering
    // stays uncorrelated with the speed profile.
    void steer_events(double dt, VehicleState& s) {
        if (turn_left_ > 0) {
            turn_left_ -= dt;
            double phase = 1.0 - turn_left_ / turn_dur_;
            double angle = turn_peak_ * 0.5 * (1 - std::cos(2 * kPi * std::min(phase, 1.0)));
            s.steer_rate_dps = (angle - s.steer_deg) / dt;
            s.steer_deg = angle;
            if (turn_left_ <= 0) next_turn_ = uniform(6, 24);
        } else {
            next_turn_ -= dt;
            double drift = noise(0.25);
            s.steer_rate_dps = (drift - s.steer_deg) / dt * 0.1;
            s.steer_deg = s.steer_deg * 0.9 + drift;
            if (next_turn_ <= 0 && s.speed_kmh > 15) {
                turn_dur_ = uniform(2.5, 6.0);
                turn_left_ = turn_dur_;
                turn_peak_ = uniform(15, 80) * (uniform01_(rng_) < 0.5 ? -1 : 1);
            }
        }
        s.steer_rate_dps = std::clamp(s.steer_rate_dps, -400.0, 400.0);
        s.steer_deg = std::clamp(s.steer_deg, -540.0, 540.0);
    }

    void update_gear(VehicleState& s) {
        static constexpr double kUp[6] = {0, 18, 35, 52, 72, 95};
        static constexpr double kDown[6] = {0, 14, 30, 46, 65, 88};
        if (s.gear < 1) s.gear = 1;
        while (s.gear < 6 && s.speed_kmh > kUp[s.gear]) ++s.gear;
        while (s.gear > 1 && s.speed_kmh < kDown[s.gear - 1]) --s.gear;
    }

    DriveCycle cycle_;
    std::mt19937_64& rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform01_{0.0, 1.0};
    Phase phase_ = Phase::accel;
    double target_ = 65, accel_ = 2.0, decel_ = 2.5, phase_left_ = 0;
    double next_turn_ = 8, turn_left_ = 0, turn_dur_ = 1, turn_peak_ = 0;
};

inline std::uint8_t xor_checksum(const std::vector<std::uint8_t>& payload) {
    std::uint8_t c = 0;
    for (std::uint8_t b : payload) c ^= b;
    return c;
}

}  // namespace detail

// Physical values in signal declaration order for one frame of `aid`.
inline std::vector<double> values_for(std::uint32_t aid, const VehicleState& s, unsigned counter) {
    auto c16 = static_cast<double>(counter % 16);
    switch (aid) {
        case 256:
            return {std::clamp(s.speed_kmh, 0.0, 255.96875),
                    std::clamp(s.throttle_pct, 0.0, 127.5), c16, 0.0};
        case 272:
            return {std::clamp(s.rpm, 0.0, 8191.875),
                    std::clamp(s.coolant_c, -164.8, 244.7), c16};
        case 288:
            return {static_cast<double>(std::clamp(s.gear, 0, 8)), c16};
        case 336:
            return {std::clamp(s.long_accel_ms2, -20.48, 20.47),
                    std::clamp(s.lat_accel_ms2, -20.48, 20.47)};
        case 640:
            return {std::clamp(s.wheel_kmh[0], 0.0, 511.96875),
                    std::clamp(s.wheel_kmh[1], 0.0, 511.96875),
                    std::clamp(s.wheel_kmh[2], 0.0, 511.96875),
                    std::clamp(s.wheel_kmh[3], 0.0, 511.96875)};
        case 688:
            return {std::clamp(s.steer_deg, -3276.8, 3276.7),
                    std::clamp(s.steer_rate_dps, -1024.0, 1023.5), 0.0};
        case 704:
            return {s.brake_act ? 1.0 : 0.0, std::clamp(s.brake_pressure_bar, 0.0, 204.75)};
        case 1296:
            return {std::clamp(s.odometer_km, 0.0, 1677721.5),
                    std::clamp(s.fuel_pct, 0.0, 204.75)};
        case 1360:
            return {22.5, 21.0};
        case 1424:
            return {0.0, 0.0};
        case 1456:
            return {0.0};
        case 1472:
            return {1.0, 0.0};
    }
    throw DataError("no emitter for AID " + format_aid_hex(aid));
}

// Recomputes checksum and parity style fields over the rest of the payload.
inline void fixup_check_fields(const MessageSpec& spec, std::vector<std::uint8_t>& payload) {
    for (const auto& sig : spec.signals) {
        if (sig.name == "SPEED_CheckSum2" || sig.name == "NAV_CheckSum") {
            insert_bits(payload, sig, 0);
            insert_bits(payload, sig, detail::xor_checksum(payload));
        } else if (sig.name == "STEER_ParityBit") {
            insert_bits(payload, sig, 0);
            unsigned bits = 0;
            for (std::uint8_t b : payload) bits += static_cast<unsigned>(__builtin_popcount(b));
            insert_bits(payload, sig, bits & 1);
        }
    }
}

inline SynthResult generate_traffic(const SynthProfile& profile) {
    if (profile.duration_s <= 0) throw DataError("duration must be positive");
    SynthResult result;
    result.db = parse_dbc(synth_dbc_text());
    std::mt19937_64 rng(profile.seed);
    detail::VehicleSim sim(profile.cycle, rng);

    struct Stream {
        std::uint32_t aid;
        int period_ticks;    // base ticks of 10 ms
        TimeUs offset_us;    // sub-tick bus offset
        unsigned counter = 0;
    };
    std::vector<Stream> streams = {
        {256, 1, 200},  {272, 1, 400},   {288, 10, 600},  {336, 1, 800},
        {640, 2, 1000}, {688, 1, 1200},  {704, 1, 1400},  {1296, 10, 1600},
        {1360, 100, 1800}, {1424, 100, 2000}, {1456, 100, 2200}, {1472, 100, 2400},
    };

    const double dt = 0.01;
    const int ticks = static_cast<int>(std::llround(profile.duration_s / dt));
    VehicleState s;
    if (profile.cycle == DriveCycle::stationary) s.brake_act = false;
    std::uniform_int_distribution<int> jitter(-150, 150);

    result.trace.reserve(ticks);
    for (int k = 0; k < ticks; ++k) {
        sim.step(dt, s);
        result.trace.push_back(s);
        for (auto& st : streams) {
            if (k % st.period_ticks != 0) continue;
            const MessageSpec& spec = result.db.at(st.aid);
            CanMessage msg;
            msg.aid = st.aid;
            msg.time_us = static_cast<TimeUs>(k) * 10'000 + st.offset_us + jitter(rng);
            msg.payload = serialize_message(values_for(st.aid, s, st.counter), spec);
            fixup_check_fields(spec, msg.payload);
            ++st.counter;
            result.log.push_back(std::move(msg));
        }
    }
    std::stable_sort(result.log.begin(), result.log.end(),
                     [](const CanMessage& a, const CanMessage& b) { return a.time_us < b.time_us; });
    return result;
}

}  // namespace xcanids
