#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "edtm/ot.hpp"

namespace edtm::io {

// Matrix files: "EDTM", u16 format version, u64 rows, u64 cols, then
// row-major 32-bit IEEE floats. Every integer and float is little-endian.
inline constexpr std::array<char, 4> kMatrixMagic{'E', 'D', 'T', 'M'};
inline constexpr std::uint16_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 4 + 2 + 8 + 8;

// Values are narrowed to float on encode; decode widens exactly, so
// decode(encode(decode(b))) reproduces b byte for byte.
std::string encode_matrix(const Matrix& m);
Matrix decode_matrix(std::string_view bytes, std::string_view source = "<memory>");

Matrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace edtm::io
