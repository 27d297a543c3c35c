#include "adwm/io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace adwm {

namespace le {

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get(std::istream& in, std::uint64_t& offset, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError(std::string("truncated ") + what + " at byte " + std::to_string(offset + in.gcount()));
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  offset += sizeof(U);
  return v;
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& in, std::uint64_t& offset, const char* what) {
  return get<std::uint32_t>(in, offset, what);
}
std::uint64_t get_u64(std::istream& in, std::uint64_t& offset, const char* what) {
  return get<std::uint64_t>(in, offset, what);
}
double get_f64(std::istream& in, std::uint64_t& offset, const char* what) {
  return std::bit_cast<double>(get<std::uint64_t>(in, offset, what));
}

}  // namespace le

namespace {

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

}  // namespace

std::uint64_t tnsr_size(const Shape& shape, DType dtype) {
  return 4 + 4 + 4 + 4 * shape.size() + 1 + static_cast<std::uint64_t>(numel(shape)) * dtype_size(dtype);
}

void write_tensor(std::ostream& out, const Tensor& t, DType dtype) {
  if (t.rank() == 0) throw FormatError("rank-0 tensors cannot be written");
  out.write("TNSR", 4);
  le::put_u32(out, kTnsrVersion);
  le::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) le::put_u32(out, static_cast<std::uint32_t>(d));
  out.put(static_cast<char>(dtype));
  std::string payload;
  payload.resize(static_cast<std::size_t>(t.numel()) * dtype_size(dtype));
  char* p = payload.data();
  for (double v : t.data()) {
    if (dtype == DType::f32) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) *p++ = static_cast<char>((bits >> (8 * i)) & 0xff);
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) *p++ = static_cast<char>((bits >> (8 * i)) & 0xff);
    }
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw FormatError("failed writing tensor payload");
}

Tensor read_tensor(std::istream& in, std::uint64_t offset) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4) throw FormatError("truncated magic at byte " + std::to_string(offset + in.gcount()));
  if (std::string_view(magic.data(), 4) != "TNSR") {
    throw FormatError("bad magic at byte " + std::to_string(offset) + ": expected TNSR");
  }
  offset += 4;
  const std::uint64_t version_at = offset;
  const std::uint32_t version = le::get_u32(in, offset, "version");
  if (version != kTnsrVersion) {
    throw FormatError("unsupported TNSR version " + std::to_string(version) + " at byte " +
                      std::to_string(version_at));
  }
  const std::uint64_t rank_at = offset;
  const std::uint32_t rank = le::get_u32(in, offset, "rank");
  if (rank == 0) throw FormatError("rank-0 tensor at byte " + std::to_string(rank_at));
  if (rank > 16) throw FormatError("implausible rank " + std::to_string(rank) + " at byte " + std::to_string(rank_at));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(le::get_u32(in, offset, "dims"));
  const int dtype_byte = in.get();
  if (dtype_byte == std::char_traits<char>::eof()) throw FormatError("truncated dtype at byte " + std::to_string(offset));
  if (dtype_byte != 1 && dtype_byte != 2) {
    throw FormatError("unknown dtype " + std::to_string(dtype_byte) + " at byte " + std::to_string(offset));
  }
  offset += 1;
  const DType dtype = static_cast<DType>(dtype_byte);
  const Index count = numel(shape);
  const std::size_t width = dtype_size(dtype);
  std::string payload(static_cast<std::size_t>(count) * width, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw FormatError("truncated payload at byte " + std::to_string(offset + in.gcount()) + ": expected " +
                      std::to_string(payload.size()) + " bytes");
  }
  Eigen::ArrayXd values(count);
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (Index i = 0; i < count; ++i) {
    if (dtype == DType::f32) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(*p++) << (8 * b);
      values(i) = std::bit_cast<float>(bits);
    } else {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(*p++) << (8 * b);
      values(i) = std::bit_cast<double>(bits);
    }
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t, dtype);
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Tensor t = read_tensor(in, 0);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after record at byte " +
                      std::to_string(static_cast<long long>(in.tellg())));
  }
  return t;
}

}  // namespace adwm
