#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pgasr::io {

// Raw little-endian float32, row-major, no header.
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);
void write_f32(const std::filesystem::path& path, std::span<const float> values);

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;  // converted to float32
};

// Parses a single .npy payload (float32/float64, C order).
NpyArray parse_npy(std::span<const unsigned char> bytes, const std::string& label);

// Reads every array of an .npz archive (stored or deflated members). Keys
// are member names without the ".npy" suffix.
std::map<std::string, NpyArray> read_npz(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pgasr::io
