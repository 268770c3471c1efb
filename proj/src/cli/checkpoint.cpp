#include "fedtt/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "fedtt/error.hpp"

namespace fedtt {
namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > end_)
      throw IoError("checkpoint truncated reading " + std::string(what) + " at offset " +
                    std::to_string(pos_));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > end_)
      throw IoError("checkpoint truncated reading " + std::string(what) + " at offset " +
                    std::to_string(pos_));
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// Validates framing and CRC; returns the payload end (CRC offset).
std::size_t check_frame(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16)
    throw IoError("checkpoint too short (" + std::to_string(bytes.size()) +
                  " bytes); CRC check failed at offset 0");
  if (std::memcmp(bytes.data(), "FTT1", 4) != 0) throw IoError("bad checkpoint magic at offset 0");
  const std::size_t end = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (std::size_t i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[end + i]) << (8 * i);
  if (stored != crc_of(bytes.data(), end))
    throw IoError("checkpoint CRC mismatch at offset " + std::to_string(end));
  Reader r(bytes, end);
  r.bytes(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
  return end;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& entries) {
  std::vector<std::uint8_t> out{'F', 'T', 'T', '1'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw IoError("tensor name too long: " + e.name.substr(0, 32) + "...");
    const auto& shape = e.tensor.shape();
    if (shape.size() > 255) throw IoError("tensor '" + e.name + "' has too many axes");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) {
      if (d > std::numeric_limits<std::uint32_t>::max())
        throw IoError("tensor '" + e.name + "' dimension too large");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : e.tensor.values())
      put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const std::size_t end = check_frame(bytes);
  Reader r(bytes, end);
  r.bytes(8, "header");
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto len = r.get<std::uint16_t>("name length");
    e.name = r.bytes(len, "name");
    const auto order = r.get<std::uint8_t>("order");
    std::vector<std::size_t> shape(order);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    const std::size_t n = shape_product(shape);
    if (n > (end - r.pos()) / 4)
      throw IoError("checkpoint entry '" + e.name + "' overruns payload at offset " +
                    std::to_string(r.pos()));
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<float>(r.get<std::uint32_t>("values"));
    e.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(e));
  }
  if (r.pos() != end)
    throw IoError("trailing bytes in checkpoint at offset " + std::to_string(r.pos()));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

namespace {
std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_all(path));
}

std::string describe_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const auto entries = decode_checkpoint(bytes);
  std::ostringstream os;
  os << "format FTT1 version " << kCheckpointVersion << ", " << entries.size() << " tensors, "
     << bytes.size() << " bytes\n";
  std::size_t total = 0;
  for (const auto& e : entries) {
    os << "  " << e.name << " " << shape_to_string(e.tensor.shape()) << "\n";
    total += e.tensor.size();
  }
  os << "parameters " << total << "\n";
  return os.str();
}

}  // namespace fedtt
