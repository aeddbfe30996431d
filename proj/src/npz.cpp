#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>

#include <zlib.h>

#include "pgasr/error.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::io {

namespace {

std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> inflate_raw(const unsigned char* src, std::size_t size, std::size_t out_size,
                                       const std::string& label) {
  std::vector<unsigned char> out(out_size);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw LoadError("zlib init failed for " + label);
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(size);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != out_size) throw LoadError("corrupt deflate stream in " + label);
  return out;
}

}  // namespace

NpyArray parse_npy(std::span<const unsigned char> bytes, const std::string& label) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0)
    throw LoadError(label + ": not an .npy payload");
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = le16(&bytes[8]);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw LoadError(label + ": truncated .npy header");
    header_len = le32(&bytes[8]);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw LoadError(label + ": truncated .npy header");
  const std::string header(reinterpret_cast<const char*>(&bytes[offset]), header_len);

  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr':\\s*'([^']+)'"))) throw LoadError(label + ": missing descr");
  const std::string descr = m[1];
  if (std::regex_search(header, m, std::regex("'fortran_order':\\s*(True|False)")) && m[1] == "True")
    throw LoadError(label + ": Fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, std::regex("'shape':\\s*\\(([^)]*)\\)"))) throw LoadError(label + ": missing shape");

  NpyArray arr;
  const std::string dims = m[1];
  const std::regex num("\\d+");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it)
    arr.shape.push_back(std::stoull(it->str()));
  std::size_t count = 1;
  for (std::size_t d : arr.shape) count *= d;

  const unsigned char* data = &bytes[offset + header_len];
  const std::size_t avail = bytes.size() - offset - header_len;
  arr.data.resize(count);
  if (descr == "<f4") {
    if (avail < count * 4) throw LoadError(label + ": truncated float32 data");
    std::memcpy(arr.data.data(), data, count * 4);
  } else if (descr == "<f8") {
    if (avail < count * 8) throw LoadError(label + ": truncated float64 data");
    for (std::size_t i = 0; i < count; ++i) {
      double v;
      std::memcpy(&v, data + i * 8, 8);
      arr.data[i] = static_cast<float>(v);
    }
  } else {
    throw LoadError(label + ": unsupported dtype " + descr);
  }
  return arr;
}

std::map<std::string, NpyArray> read_npz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string label = path.string();

  // Locate the end-of-central-directory record from the back.
  if (buf.size() < 22) throw LoadError(label + ": not a zip archive");
  std::size_t eocd = std::string::npos;
  for (std::size_t i = buf.size() - 22 + 1; i-- > 0;) {
    if (le32(&buf[i]) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw LoadError(label + ": zip directory not found");
  const std::size_t entries = le16(&buf[eocd + 10]);
  std::size_t cd = le32(&buf[eocd + 16]);

  std::map<std::string, NpyArray> arrays;
  for (std::size_t e = 0; e < entries; ++e) {
    if (cd + 46 > buf.size() || le32(&buf[cd]) != 0x02014b50) throw LoadError(label + ": bad central directory");
    const std::uint16_t method = le16(&buf[cd + 10]);
    const std::uint32_t csize = le32(&buf[cd + 20]);
    const std::uint32_t usize = le32(&buf[cd + 24]);
    const std::size_t name_len = le16(&buf[cd + 28]);
    const std::size_t extra_len = le16(&buf[cd + 30]);
    const std::size_t comment_len = le16(&buf[cd + 32]);
    const std::size_t local = le32(&buf[cd + 42]);
    std::string name(reinterpret_cast<const char*>(&buf[cd + 46]), name_len);
    cd += 46 + name_len + extra_len + comment_len;
    if (csize == 0xFFFFFFFFu || usize == 0xFFFFFFFFu || local == 0xFFFFFFFFu)
      throw LoadError(label + ": zip64 members are not supported");

    if (local + 30 > buf.size() || le32(&buf[local]) != 0x04034b50) throw LoadError(label + ": bad local header");
    const std::size_t data_at = local + 30 + le16(&buf[local + 26]) + le16(&buf[local + 28]);
    if (data_at + csize > buf.size()) throw LoadError(label + ": truncated member " + name);

    std::vector<unsigned char> payload;
    if (method == 0) {
      payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(data_at),
                     buf.begin() + static_cast<std::ptrdiff_t>(data_at + csize));
    } else if (method == 8) {
      payload = inflate_raw(&buf[data_at], csize, usize, label + ":" + name);
    } else {
      throw LoadError(label + ": unsupported compression method " + std::to_string(method));
    }
    if (name.size() > 4 && name.ends_with(".npy")) name.resize(name.size() - 4);
    arrays.emplace(name, parse_npy(payload, label + ":" + name));
  }
  return arrays;
}

}  // namespace pgasr::io
