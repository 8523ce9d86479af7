#pragma once

// Versioned binary container of named, shape-tagged float32 arrays plus
// string metadata. Used for clip caches, model weights and galleries.
//
// Layout (all integers u32 little-endian, floats IEEE-754 binary32 LE):
//   magic "IBTC" | version | kind string
//   metadata count | { key string | value string }*
//   array count    | { name string | rank | dims[rank] | data[prod(dims)] }*
// where "string" is u32 byte length followed by the bytes. Entries are
// written in lexicographic name order, so identical contents produce
// identical files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace inbetween {

struct FloatArray {
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t count() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, std::uint32_t b) { return a * b; });
    }
};

class Container {
public:
    static constexpr std::uint32_t kVersion = 1;

    explicit Container(std::string kind = "generic") : kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }

    void set_meta(const std::string& key, std::string value) { meta_[key] = std::move(value); }
    bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
    const std::string& meta(const std::string& key) const {
        auto it = meta_.find(key);
        if (it == meta_.end()) throw Error(ErrorKind::Format, "container has no metadata key '" + key + "'");
        return it->second;
    }
    const std::map<std::string, std::string>& metadata() const { return meta_; }

    void set(const std::string& name, std::vector<std::uint32_t> shape, std::vector<float> data) {
        FloatArray a{std::move(shape), std::move(data)};
        if (a.count() != a.data.size())
            throw Error(ErrorKind::ShapeMismatch, "array '" + name + "' shape does not match its data");
        arrays_[name] = std::move(a);
    }

    template <class Range>
    void set_from(const std::string& name, std::vector<std::uint32_t> shape, const Range& values) {
        std::vector<float> data;
        for (auto v : values) data.push_back(static_cast<float>(v));
        set(name, std::move(shape), std::move(data));
    }

    bool has(const std::string& name) const { return arrays_.count(name) != 0; }

    const FloatArray& get(const std::string& name) const {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw Error(ErrorKind::Format, "container has no array '" + name + "'");
        return it->second;
    }

    const FloatArray& get(const std::string& name, std::span<const std::uint32_t> expect_shape) const {
        const FloatArray& a = get(name);
        if (!std::equal(a.shape.begin(), a.shape.end(), expect_shape.begin(), expect_shape.end()))
            throw Error(ErrorKind::ShapeMismatch, "array '" + name + "' has unexpected shape");
        return a;
    }

    const std::map<std::string, FloatArray>& arrays() const { return arrays_; }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        auto u32 = [&](std::uint32_t v) {
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        };
        auto str = [&](const std::string& s) {
            u32(static_cast<std::uint32_t>(s.size()));
            out.insert(out.end(), s.begin(), s.end());
        };
        out.insert(out.end(), {'I', 'B', 'T', 'C'});
        u32(kVersion);
        str(kind_);
        u32(static_cast<std::uint32_t>(meta_.size()));
        for (const auto& [k, v] : meta_) {
            str(k);
            str(v);
        }
        u32(static_cast<std::uint32_t>(arrays_.size()));
        for (const auto& [name, a] : arrays_) {
            str(name);
            u32(static_cast<std::uint32_t>(a.shape.size()));
            for (auto d : a.shape) u32(d);
            for (float f : a.data) u32(std::bit_cast<std::uint32_t>(f));
        }
        return out;
    }

    static Container deserialize(std::span<const std::uint8_t> bytes) {
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (bytes.size() - pos < n) throw Error(ErrorKind::Format, "container truncated");
        };
        auto u32 = [&]() {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
            pos += 4;
            return v;
        };
        auto str = [&]() {
            const std::uint32_t n = u32();
            need(n);
            std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
            pos += n;
            return s;
        };
        need(4);
        if (std::memcmp(bytes.data(), "IBTC", 4) != 0) throw Error(ErrorKind::Format, "not a container file (bad magic)");
        pos = 4;
        const std::uint32_t version = u32();
        if (version != kVersion)
            throw Error(ErrorKind::Format, "unsupported container version " + std::to_string(version));
        Container c(str());
        const std::uint32_t nmeta = u32();
        for (std::uint32_t i = 0; i < nmeta; ++i) {
            std::string k = str();
            c.meta_[k] = str();
        }
        const std::uint32_t narr = u32();
        for (std::uint32_t i = 0; i < narr; ++i) {
            std::string name = str();
            FloatArray a;
            const std::uint32_t rank = u32();
            for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(u32());
            const std::size_t n = a.count();
            need(4 * n);
            a.data.resize(n);
            for (std::size_t k = 0; k < n; ++k) a.data[k] = std::bit_cast<float>(u32());
            c.arrays_[name] = std::move(a);
        }
        if (pos != bytes.size()) throw Error(ErrorKind::Format, "trailing bytes after container");
        return c;
    }

    void save(const std::string& path) const {
        const auto bytes = serialize();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
    }

    static Container load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

private:
    std::string kind_;
    std::map<std::string, std::string> meta_;
    std::map<std::string, FloatArray> arrays_;
};

} // namespace inbetween
