#pragma once

// Self-describing binary container of named float64 arrays plus a JSON header.
//
//   "PAFUSECK"            8 bytes magic
//   u32 version
//   u64 header length, header bytes (UTF-8 JSON)
//   u64 array count
//   per array: u32 name length, name, u32 rank, u64 dims[rank], f64 values[prod(dims)]
//
// All integers and floats are little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "pafuse/common.hpp"

namespace pafuse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'F', 'U', 'S', 'E', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredArray {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;

    bool operator==(const StoredArray&) const = default;
};

struct CheckpointFile {
    nlohmann::ordered_json header;
    std::vector<StoredArray> arrays;

    const StoredArray& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw DataError("checkpoint has no array '" + name + "'");
    }
};

namespace detail {
template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void get_doubles(double* dst, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};
}  // namespace detail

inline std::string checkpoint_to_bytes(const CheckpointFile& ck) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    const std::string header = ck.header.dump();
    detail::put<std::uint64_t>(out, header.size());
    out += header;
    detail::put<std::uint64_t>(out, ck.arrays.size());
    for (const auto& a : ck.arrays) {
        std::uint64_t count = 1;
        for (auto d : a.shape) count *= d;
        if (count != a.values.size()) throw ShapeError("checkpoint: array '" + a.name + "' shape/value mismatch");
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) detail::put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(double));
    }
    return out;
}

inline CheckpointFile checkpoint_from_bytes(const std::string& bytes) {
    detail::Reader r(bytes);
    if (r.get_string(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
        throw DataError("checkpoint: bad magic");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    }
    CheckpointFile ck;
    const auto header_len = r.get<std::uint64_t>();
    try {
        ck.header = nlohmann::ordered_json::parse(r.get_string(header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        StoredArray a;
        a.name = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        std::uint64_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            a.shape.push_back(r.get<std::uint64_t>());
            n *= a.shape.back();
        }
        if (n > bytes.size()) throw DataError("checkpoint: array '" + a.name + "' larger than the file");
        a.values.resize(n);
        r.get_doubles(a.values.data(), n);
        ck.arrays.push_back(std::move(a));
    }
    if (!r.done()) throw DataError("checkpoint: trailing bytes");
    return ck;
}

inline void write_checkpoint(const CheckpointFile& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    const std::string bytes = checkpoint_to_bytes(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path);
}

inline CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_bytes(ss.str());
}

}  // namespace pafuse
