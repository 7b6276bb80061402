#include "rspgrid/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rspgrid::io {

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(U)) throw FormatError(std::string("GTCK: truncated ") + what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("GTCK: truncated ") + what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_container(const std::vector<Record>& records) {
  std::string out = "GTCK";
  put<std::uint32_t>(out, kContainerVersion);
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw FormatError("GTCK: record name too long: " + r.name.substr(0, 32));
    if (r.dims.size() > 0xFF) throw FormatError("GTCK: rank too large for record " + r.name);
    std::size_t n = 1;
    for (auto d : r.dims) n *= d;
    if (n != r.values.size()) throw FormatError("GTCK: payload size does not match dims for record " + r.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out += r.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint32_t>(out, d);
    out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(float));
  }
  return out;
}

std::vector<Record> decode_container(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != "GTCK") throw FormatError("GTCK: bad magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kContainerVersion) throw FormatError("GTCK: unsupported version " + std::to_string(version));
  std::vector<Record> records;
  while (!in.done()) {
    Record r;
    const auto len = in.get<std::uint16_t>("name length");
    r.name = in.take(len, "name");
    const auto rank = in.get<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      r.dims.push_back(in.get<std::uint32_t>("dims"));
      n *= r.dims.back();
    }
    const std::string payload = in.take(n * sizeof(float), "payload");
    r.values.resize(n);
    std::memcpy(r.values.data(), payload.data(), payload.size());
    records.push_back(std::move(r));
  }
  return records;
}

void write_container(const std::filesystem::path& path, const std::vector<Record>& records) {
  const std::string bytes = encode_container(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Record> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_container(ss.str());
}

const Record& find_record(const std::vector<Record>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw FormatError("GTCK: missing record " + name);
}

}  // namespace rspgrid::io
