#pragma once

#include "csd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace csd {

/// Malformed or truncated binary/text input. `offset` is the byte position
/// where decoding stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, uint64_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    uint64_t offset() const { return offset_; }

private:
    uint64_t offset_;
};

// Little-endian primitives shared by the tensor dump and checkpoint formats.
namespace le {
void put_u8(std::ostream& os, uint8_t v);
void put_u32(std::ostream& os, uint32_t v);
void put_u64(std::ostream& os, uint64_t v);
void put_f32(std::ostream& os, float v);
void put_bytes(std::ostream& os, const std::string& s);
uint8_t get_u8(std::istream& is);
uint32_t get_u32(std::istream& is);
uint64_t get_u64(std::istream& is);
float get_f32(std::istream& is);
std::string get_bytes(std::istream& is, size_t n);
} // namespace le

/// Raw dump block: "CSDT", u32 version=1, u32 rank, u64 extents[rank], f32 payload.
/// Rank-4 tensors are written with rank 4; the reader accepts ranks 1..4 and
/// left-pads missing leading extents with 1.
void write_tensor(std::ostream& os, std::span<const float> values, const std::vector<uint64_t>& extents);
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
/// Reads a block into raw extents + values (any rank).
void read_tensor_raw(std::istream& is, std::vector<uint64_t>& extents, std::vector<float>& values);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

} // namespace csd
