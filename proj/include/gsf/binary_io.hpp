#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

namespace gsf::io {

// Little-endian primitives, independent of host byte order.
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
void write_f32s(std::ostream& out, std::span<const float> values);

std::uint32_t read_u32(std::istream& in, std::string_view what);
float read_f32(std::istream& in, std::string_view what);
void read_f32s(std::istream& in, std::span<float> values, std::string_view what);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace gsf::io
