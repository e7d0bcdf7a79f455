#include "scone/binary_io.hpp"

#include "scone/error.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace scone::io {
namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::array<char, sizeof(T)> buf{};
  std::memcpy(buf.data(), &value, sizeof(T));
  out.write(buf.data(), buf.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> buf{};
  if (!in.read(buf.data(), buf.size())) throw InputError("truncated file");
  T value;
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t value) { write_le(out, value); }
void write_f32(std::ostream& out, float value) { write_le(out, value); }
void write_f64(std::ostream& out, double value) { write_le(out, value); }
void write_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
float read_f32(std::istream& in) { return read_le<float>(in); }
double read_f64(std::istream& in) { return read_le<double>(in); }

std::string read_bytes(std::istream& in, std::size_t count) {
  std::string bytes(count, '\0');
  if (!in.read(bytes.data(), static_cast<std::streamsize>(count)))
    throw InputError("truncated file");
  return bytes;
}

void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer, bool binary) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    writer(out);
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

}  // namespace scone::io
