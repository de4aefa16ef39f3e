#include "csd/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace csd {

namespace {

constexpr char kTensorMagic[4] = {'C', 'S', 'D', 'T'};
constexpr uint32_t kTensorVersion = 1;

uint64_t position(std::istream& is) {
    is.clear(is.rdstate() & ~std::ios::failbit);
    auto p = is.tellg();
    return p < 0 ? 0 : static_cast<uint64_t>(p);
}

void read_exact(std::istream& is, unsigned char* buf, size_t n) {
    const uint64_t at = position(is);
    is.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) throw FormatError("unexpected end of data", at + static_cast<uint64_t>(is.gcount()));
}

} // namespace

namespace le {

void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

uint8_t get_u8(std::istream& is) {
    unsigned char b;
    read_exact(is, &b, 1);
    return b;
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    read_exact(is, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    read_exact(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

std::string get_bytes(std::istream& is, size_t n) {
    std::string s(n, '\0');
    if (n > 0) read_exact(is, reinterpret_cast<unsigned char*>(s.data()), n);
    return s;
}

} // namespace le

void write_tensor(std::ostream& os, std::span<const float> values, const std::vector<uint64_t>& extents) {
    os.write(kTensorMagic, 4);
    le::put_u32(os, kTensorVersion);
    le::put_u32(os, static_cast<uint32_t>(extents.size()));
    for (uint64_t e : extents) le::put_u64(os, e);
    for (float v : values) le::put_f32(os, v);
}

void write_tensor(std::ostream& os, const Tensor& t) {
    const Shape& s = t.shape();
    write_tensor(os, t.data(),
                 {static_cast<uint64_t>(s.n()), static_cast<uint64_t>(s.c()), static_cast<uint64_t>(s.h()),
                  static_cast<uint64_t>(s.w())});
}

void read_tensor_raw(std::istream& is, std::vector<uint64_t>& extents, std::vector<float>& values) {
    const uint64_t start = position(is);
    const std::string magic = le::get_bytes(is, 4);
    if (magic != std::string(kTensorMagic, 4)) throw FormatError("bad tensor magic", start);
    const uint32_t version = le::get_u32(is);
    if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version), start + 4);
    const uint32_t rank = le::get_u32(is);
    if (rank == 0 || rank > 8) throw FormatError("unsupported tensor rank " + std::to_string(rank), start + 8);
    extents.assign(rank, 0);
    uint64_t count = 1;
    for (auto& e : extents) {
        e = le::get_u64(is);
        if (e == 0 || e > (uint64_t{1} << 32)) throw FormatError("invalid tensor extent", position(is) - 8);
        count *= e;
        if (count > (uint64_t{1} << 34)) throw FormatError("tensor too large", position(is) - 8);
    }
    values.resize(static_cast<size_t>(count));
    for (auto& v : values) v = le::get_f32(is);
}

Tensor read_tensor(std::istream& is) {
    const uint64_t start = position(is);
    std::vector<uint64_t> extents;
    std::vector<float> values;
    read_tensor_raw(is, extents, values);
    if (extents.size() > 4) throw FormatError("tensor rank above 4 cannot be loaded as a Tensor", start + 8);
    Shape s;
    const size_t pad = 4 - extents.size();
    for (size_t k = 0; k < extents.size(); ++k) s.dims[pad + k] = static_cast<int64_t>(extents[k]);
    return Tensor::from(s, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_tensor(is);
}

} // namespace csd
