#pragma once

// Raw bit extraction and physical-value conversion for DBC signals, plus the
// inverse used to craft payloads. Little-endian windows occupy ascending bit
// positions starting at the LSB start bit. Big-endian (Motorola) windows
// start at the MSB start bit and walk down within the byte, then continue at
// bit 7 of the next byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xcanids/dbc.hpp"
#include "xcanids/error.hpp"

namespace xcanids {

// Raised when a decoded physical value falls outside the signal's stated
// [min, max] window and the caller asked for strict checking.
class RangeError : public DataError {
public:
    RangeError(std::uint32_t aid, const std::string& signal, double value)
        : DataError("signal " + signal + " of AID " + format_aid_hex(aid) + " decodes to " +
                    format_double(value) + " outside its stated range"),
          aid_(aid), signal_(signal), value_(value) {}

    std::uint32_t aid() const { return aid_; }
    const std::string& signal() const { return signal_; }
    double value() const { return value_; }

private:
    std::uint32_t aid_;
    std::string signal_;
    double value_;
};

namespace detail {

inline std::uint64_t mask_bits(unsigned n) {
    return n >= 64 ? ~0ull : (1ull << n) - 1;
}

// Tolerance for scale/offset rounding at the range edges: a raw value that
// encodes a stated bound must decode as in range even when the product
// lands a few ulps past it.
inline double range_slack(const SignalSpec& spec) {
    return 1e-9 * std::max({1.0, std::abs(spec.min_phys), std::abs(spec.max_phys)});
}

}  // namespace detail

// Raw window contents as an unsigned integer. Throws DataError when the
// window does not fit the payload.
inline std::uint64_t extract_bits(std::span<const std::uint8_t> payload, const SignalSpec& spec) {
    const unsigned nbits = static_cast<unsigned>(payload.size()) * 8;
    std::uint64_t value = 0;
    if (spec.little_endian) {
        if (spec.start_bit + spec.bit_length > nbits)
            throw DataError("signal " + spec.name + " window out of range for a " +
                            std::to_string(payload.size()) + "-byte payload");
        unsigned bit = spec.start_bit;
        unsigned remaining = spec.bit_length;
        unsigned out_pos = 0;
        while (remaining > 0) {
            unsigned align = bit % 8;
            unsigned take = std::min(8 - align, remaining);
            std::uint64_t chunk = (payload[bit / 8] >> align) & detail::mask_bits(take);
            value |= chunk << out_pos;
            out_pos += take;
            bit += take;
            remaining -= take;
        }
    } else {
        if (!signal_fits(spec, static_cast<unsigned>(payload.size())))
            throw DataError("signal " + spec.name + " window out of range for a " +
                            std::to_string(payload.size()) + "-byte payload");
        unsigned bit = spec.start_bit;  // MSB position
        unsigned remaining = spec.bit_length;
        while (remaining > 0) {
            unsigned in_byte = bit % 8;  // bits available down to bit 0 of this byte
            unsigned take = std::min(in_byte + 1, remaining);
            std::uint64_t chunk = (payload[bit / 8] >> (in_byte + 1 - take)) & detail::mask_bits(take);
            remaining -= take;
            value |= chunk << remaining;
            bit = (bit / 8 + 1) * 8 + 7;  // MSB of the next byte
        }
    }
    return value;
}

// Writes a raw value into the signal's window, leaving all other payload
// bits untouched. The value must fit the window.
inline void insert_bits(std::span<std::uint8_t> payload, const SignalSpec& spec,
                        std::uint64_t raw) {
    if (raw > detail::mask_bits(spec.bit_length))
        throw DataError("raw value does not fit " + std::to_string(spec.bit_length) + " bits");
    if (!signal_fits(spec, static_cast<unsigned>(payload.size())))
        throw DataError("signal " + spec.name + " window out of range for a " +
                        std::to_string(payload.size()) + "-byte payload");
    if (spec.little_endian) {
        unsigned bit = spec.start_bit;
        unsigned remaining = spec.bit_length;
        unsigned in_pos = 0;
        while (remaining > 0) {
            unsigned align = bit % 8;
            unsigned take = std::min(8 - align, remaining);
            std::uint8_t m = static_cast<std::uint8_t>(detail::mask_bits(take) << align);
            payload[bit / 8] = static_cast<std::uint8_t>(
                (payload[bit / 8] & ~m) | (((raw >> in_pos) & detail::mask_bits(take)) << align));
            in_pos += take;
            bit += take;
            remaining -= take;
        }
    } else {
        unsigned bit = spec.start_bit;
        unsigned remaining = spec.bit_length;
        while (remaining > 0) {
            unsigned in_byte = bit % 8;
            unsigned take = std::min(in_byte + 1, remaining);
            unsigned shift = in_byte + 1 - take;
            std::uint8_t m = static_cast<std::uint8_t>(detail::mask_bits(take) << shift);
            remaining -= take;
            payload[bit / 8] = static_cast<std::uint8_t>(
                (payload[bit / 8] & ~m) | (((raw >> remaining) & detail::mask_bits(take)) << shift));
            bit = (bit / 8 + 1) * 8 + 7;
        }
    }
}

// Two's-complement interpretation of a raw window value.
inline std::int64_t to_signed(std::uint64_t raw, const SignalSpec& spec) {
    if (!spec.is_signed) return static_cast<std::int64_t>(raw);
    if (spec.bit_length < 64 && (raw >> (spec.bit_length - 1)) & 1)
        return static_cast<std::int64_t>(raw) - static_cast<std::int64_t>(1ull << spec.bit_length);
    return static_cast<std::int64_t>(raw);
}

inline double to_physical(std::uint64_t raw, const SignalSpec& spec) {
    return static_cast<double>(to_signed(raw, spec)) * spec.scale + spec.offset;
}

// Physical value with strict range checking.
inline double decode_and_scale(std::uint64_t raw, const SignalSpec& spec,
                               std::uint32_t aid = 0) {
    double v = to_physical(raw, spec);
    const double slack = detail::range_slack(spec);
    if (v < spec.min_phys - slack || v > spec.max_phys + slack)
        throw RangeError(aid, spec.name, v);
    return v;
}

struct Decoded {
    double value = 0.0;
    bool in_range = true;
};

// Physical value clamped into [min, max]; the flag records whether clamping
// fired. Used by the feature pipeline, which must not abort on rogue frames.
inline Decoded decode_clamped(std::uint64_t raw, const SignalSpec& spec) {
    Decoded d;
    d.value = to_physical(raw, spec);
    const double slack = detail::range_slack(spec);
    if (d.value < spec.min_phys) {
        d.in_range = d.value >= spec.min_phys - slack;
        d.value = spec.min_phys;
    } else if (d.value > spec.max_phys) {
        d.in_range = d.value <= spec.max_phys + slack;
        d.value = spec.max_phys;
    }
    return d;
}

// All signals of one frame as physical values, in declaration order.
// Strict: any out-of-range signal raises RangeError tagged with the AID.
inline std::vector<double> deserialize_message(std::uint32_t aid,
                                               std::span<const std::uint8_t> payload,
                                               const CanDatabase& db) {
    const MessageSpec& msg = db.at(aid);
    if (payload.size() < msg.dlc)
        throw DataError("AID " + format_aid_hex(aid) + " frame is " +
                        std::to_string(payload.size()) + " bytes, spec says " +
                        std::to_string(msg.dlc));
    std::vector<double> out;
    out.reserve(msg.signals.size());
    for (const auto& sig : msg.signals)
        out.push_back(decode_and_scale(extract_bits(payload, sig), sig, aid));
    return out;
}

// Nearest raw count for a physical value, clamped to the encodable span of
// the window intersected with [min, max]. Quantization error stays within
// half a scale step. Throws DataError when the value is outside [min, max]
// or the window cannot represent any in-range value.
inline std::uint64_t encode_raw(double value, const SignalSpec& spec) {
    const double slack = detail::range_slack(spec);
    if (value < spec.min_phys - slack || value > spec.max_phys + slack)
        throw DataError("value " + format_double(value) + " outside [" +
                        format_double(spec.min_phys) + ", " + format_double(spec.max_phys) +
                        "] for signal " + spec.name);
    std::int64_t lo_window, hi_window;
    if (spec.is_signed) {
        hi_window = static_cast<std::int64_t>(detail::mask_bits(spec.bit_length - 1));
        lo_window = -hi_window - 1;
    } else {
        lo_window = 0;
        hi_window = spec.bit_length >= 64 ? std::numeric_limits<std::int64_t>::max()
                                          : static_cast<std::int64_t>(detail::mask_bits(spec.bit_length));
    }
    double lo_phys = (spec.min_phys - spec.offset) / spec.scale;
    double hi_phys = (spec.max_phys - spec.offset) / spec.scale;
    if (lo_phys > hi_phys) std::swap(lo_phys, hi_phys);  // negative scale
    std::int64_t lo = std::max<std::int64_t>(lo_window, static_cast<std::int64_t>(std::ceil(lo_phys - 1e-9)));
    std::int64_t hi = std::min<std::int64_t>(hi_window, static_cast<std::int64_t>(std::floor(hi_phys + 1e-9)));
    if (lo > hi)
        throw DataError("no representable raw value for signal " + spec.name);
    std::int64_t raw = std::llround((value - spec.offset) / spec.scale);
    raw = std::clamp(raw, lo, hi);
    return static_cast<std::uint64_t>(raw) & detail::mask_bits(spec.bit_length);
}

// Builds a payload from physical values given in signal declaration order.
// Bits not covered by any signal are zero. Overlapping signal windows are a
// database defect and raise DataError.
inline std::vector<std::uint8_t> serialize_message(std::span<const double> values,
                                                   const MessageSpec& msg) {
    if (values.size() != msg.signals.size())
        throw DataError("expected " + std::to_string(msg.signals.size()) + " values for " +
                        msg.name + ", got " + std::to_string(values.size()));
    std::vector<std::uint8_t> payload(msg.dlc, 0);
    std::vector<std::uint8_t> occupancy(msg.dlc, 0);
    for (std::size_t i = 0; i < msg.signals.size(); ++i) {
        const SignalSpec& sig = msg.signals[i];
        std::vector<std::uint8_t> ones(msg.dlc, 0);
        insert_bits(ones, sig, detail::mask_bits(sig.bit_length));
        for (unsigned b = 0; b < msg.dlc; ++b) {
            if (occupancy[b] & ones[b])
                throw DataError("overlapping signal windows in " + msg.name);
            occupancy[b] |= ones[b];
        }
        insert_bits(payload, sig, encode_raw(values[i], sig));
    }
    return payload;
}

}  // namespace xcanids
