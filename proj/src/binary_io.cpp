#include "naref/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace naref::binio {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

void Writer::save(const std::filesystem::path& path) const {
  write_file(path, bytes_.data(), bytes_.size());
}

Reader Reader::from_file(const std::filesystem::path& path) { return Reader(read_file(path)); }

}  // namespace naref::binio
