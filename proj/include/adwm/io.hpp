#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "adwm/tensor.hpp"

namespace adwm {

/// TNSR record: "TNSR", u32 version (1), u32 rank, u32 dims[rank], u8 dtype,
/// then the row-major payload. All integers and floats little-endian.
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::uint32_t kTnsrVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t, DType dtype = DType::f64);
/// `offset` is the stream position of the record, used in error messages.
Tensor read_tensor(std::istream& in, std::uint64_t offset = 0);

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(const std::filesystem::path& path);

/// Size in bytes of a record for `shape`.
std::uint64_t tnsr_size(const Shape& shape, DType dtype = DType::f64);

namespace le {

void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
/// Each getter throws FormatError naming `what` and the byte offset when the stream runs dry.
std::uint32_t get_u32(std::istream& in, std::uint64_t& offset, const char* what);
std::uint64_t get_u64(std::istream& in, std::uint64_t& offset, const char* what);
double get_f64(std::istream& in, std::uint64_t& offset, const char* what);

}  // namespace le

}  // namespace adwm
