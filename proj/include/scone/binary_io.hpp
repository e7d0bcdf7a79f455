#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>

namespace scone::io {

void write_u32(std::ostream& out, std::uint32_t value);
void write_f32(std::ostream& out, float value);
void write_f64(std::ostream& out, double value);
void write_bytes(std::ostream& out, std::string_view bytes);

std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::string read_bytes(std::istream& in, std::size_t count);

/// Writes through a sibling temp file and renames it over `path`, so readers
/// never observe a partially written file.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer,
                  bool binary = true);

}  // namespace scone::io
