#pragma once

// "GTCK" raster container shared by checkpoints and dataset sequences.
//
//   magic    4 bytes  "GTCK"
//   version  u32
//   repeated until end of file:
//     name length  u16
//     name         bytes (no terminator)
//     rank         u8
//     dims         u32 * rank
//     payload      float32 * product(dims)
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rspgrid::io {

inline constexpr std::uint32_t kContainerVersion = 1;

struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string encode_container(const std::vector<Record>& records);
std::vector<Record> decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_container(const std::filesystem::path& path);

const Record& find_record(const std::vector<Record>& records, const std::string& name);

}  // namespace rspgrid::io
