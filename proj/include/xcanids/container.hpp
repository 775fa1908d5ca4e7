#pragma once

// Binary container shared by model and calibration files: a string key-value
// metadata block followed by named tensors. Numbers in metadata are written
// with shortest round-trip formatting, tensor payloads are little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "xcanids/error.hpp"
#include "xcanids/util.hpp"

namespace xcanids {

constexpr char kContainerMagic[4] = {'X', 'C', 'A', 'E'};
constexpr std::uint32_t kContainerVersion = 1;

enum class ContainerKind : std::uint8_t { model = 0, calibration = 1 };
enum class TensorDType : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedTensor {
    std::string name;
    TensorDType dtype = TensorDType::f32;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;  // held as double in memory regardless of dtype

    std::size_t size() const {
        std::size_t n = 1;
        for (auto d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }
};

struct Container {
    ContainerKind kind = ContainerKind::model;
    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> tensors;

    const std::string& meta_at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw DataError("container is missing metadata key '" + key + "'");
        return it->second;
    }

    const NamedTensor& tensor_at(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw DataError("container is missing tensor '" + name + "'");
    }
};

inline void write_container(std::ostream& os, const Container& c) {
    os.write(kContainerMagic, 4);
    put_u32(os, kContainerVersion);
    put_u8(os, static_cast<std::uint8_t>(c.kind));
    put_u32(os, static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        put_u16(os, static_cast<std::uint16_t>(k.size()));
        os.write(k.data(), static_cast<std::streamsize>(k.size()));
        put_u16(os, static_cast<std::uint16_t>(v.size()));
        os.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
    put_u32(os, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        put_u16(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u8(os, static_cast<std::uint8_t>(t.dtype));
        put_u8(os, static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) put_u64(os, d);
        if (t.data.size() != t.size()) throw DataError("tensor " + t.name + " size mismatch");
        for (double v : t.data) {
            if (t.dtype == TensorDType::f32)
                put_f32(os, static_cast<float>(v));
            else
                put_f64(os, v);
        }
    }
    if (!os) throw DataError("container write failed");
}

inline Container read_container(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kContainerMagic, 4) != 0)
        throw DataError("not a container file (bad magic)");
    if (get_u32(is) != kContainerVersion) throw DataError("unsupported container version");
    Container c;
    std::uint8_t kind = get_u8(is);
    if (kind > 1) throw DataError("unknown container kind");
    c.kind = static_cast<ContainerKind>(kind);
    std::uint32_t nmeta = get_u32(is);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k(get_u16(is), '\0');
        is.read(k.data(), static_cast<std::streamsize>(k.size()));
        std::string v(get_u16(is), '\0');
        is.read(v.data(), static_cast<std::streamsize>(v.size()));
        if (!is) throw DataError("truncated container metadata");
        c.meta.emplace(std::move(k), std::move(v));
    }
    std::uint32_t ntensors = get_u32(is);
    for (std::uint32_t i = 0; i < ntensors; ++i) {
        NamedTensor t;
        t.name.resize(get_u16(is));
        is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        std::uint8_t dtype = get_u8(is);
        if (dtype > 1) throw DataError("unknown tensor dtype");
        t.dtype = static_cast<TensorDType>(dtype);
        std::uint8_t ndim = get_u8(is);
        for (std::uint8_t d = 0; d < ndim; ++d) t.dims.push_back(get_u64(is));
        std::size_t n = t.size();
        if (n > (1u << 28)) throw DataError("tensor " + t.name + " is implausibly large");
        t.data.resize(n);
        for (std::size_t k = 0; k < n; ++k)
            t.data[k] = t.dtype == TensorDType::f32 ? static_cast<double>(get_f32(is)) : get_f64(is);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

inline void write_container_file(const std::string& path, const Container& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_container(out, c);
}

inline Container read_container_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return read_container(in);
}

}  // namespace xcanids
