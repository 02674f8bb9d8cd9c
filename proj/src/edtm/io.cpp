#include "edtm/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "edtm/error.hpp"

namespace edtm::io {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t k = 0; k < sizeof(T); ++k) {
    out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
}

template <typename T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U bits = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[k])) << (8 * k);
  }
  return std::bit_cast<T>(bits);
}

}  // namespace

std::string encode_matrix(const Matrix& m) {
  std::string out;
  out.reserve(kMatrixHeaderBytes + static_cast<std::size_t>(m.size()) * 4);
  out.append(kMatrixMagic.data(), kMatrixMagic.size());
  put_le<std::uint16_t>(out, kMatrixVersion);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<float>(out, static_cast<float>(m(i, j)));
  return out;
}

Matrix decode_matrix(std::string_view bytes, std::string_view source) {
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::Io, std::string(source) + ": " + why);
  };
  if (bytes.size() < kMatrixHeaderBytes) bad("truncated matrix header");
  if (std::memcmp(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size()) != 0) {
    bad("missing EDTM magic bytes");
  }
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kMatrixVersion) bad("unsupported matrix format version " + std::to_string(version));
  const auto rows = get_le<std::uint64_t>(bytes.data() + 6);
  const auto cols = get_le<std::uint64_t>(bytes.data() + 14);
  constexpr auto kMaxExtent = static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max());
  if (rows > kMaxExtent || cols > kMaxExtent) bad("matrix extent out of range");
  if (cols != 0 && rows > (bytes.size() / 4) / cols) bad("matrix shape exceeds file size");
  const std::uint64_t expected = kMatrixHeaderBytes + rows * cols * 4;
  if (bytes.size() != expected) {
    std::ostringstream os;
    os << "expected " << expected << " bytes for a " << rows << "x" << cols << " matrix, found "
       << bytes.size();
    bad(os.str());
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const char* p = bytes.data() + kMatrixHeaderBytes;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j, p += 4) m(i, j) = static_cast<double>(get_le<float>(p));
  }
  return m;
}

Matrix read_matrix(const std::filesystem::path& path) {
  return decode_matrix(read_file(path), path.string());
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  write_file_atomic(path, encode_matrix(m));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) fail(ErrorKind::Io, "error reading " + path.string());
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ostringstream suffix;
  suffix << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
         << counter.fetch_add(1);
  std::filesystem::path tmp = path;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorKind::Io, "error writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    const std::string why = ec.message();
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "cannot move " + tmp.string() + " into place: " + why);
  }
}

}  // namespace edtm::io
