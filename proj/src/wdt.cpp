#include "wavediff/wdt.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wavediff {

namespace {

constexpr char kMagic[4] = {'W', 'D', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const std::string& b, size_t& pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
  pos += 4;
  return v;
}
uint64_t get_u64(const std::string& b, size_t& pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace

void save_wdt(const std::string& path, const NDTensor& t) {
  std::string b;
  b.append(kMagic, 4);
  put_u32(b, kVersion);
  put_u32(b, static_cast<uint32_t>(t.ndim()));
  for (int64_t d = 0; d < t.ndim(); ++d) put_u64(b, static_cast<uint64_t>(t.dim(d)));
  for (int64_t i = 0; i < t.size(); ++i) {
    uint64_t bits;
    double v = t[i];
    std::memcpy(&bits, &v, 8);
    put_u64(b, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("wdt: cannot open " + path + " for writing");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("wdt: short write to " + path);
}

NDTensor load_wdt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("wdt: cannot open " + path);
  std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), kMagic, 4) != 0) {
    throw std::runtime_error("wdt: " + path + " is not a WDT1 file");
  }
  size_t pos = 4;
  if (get_u32(b, pos) != kVersion) throw std::runtime_error("wdt: unsupported version in " + path);
  const uint32_t rank = get_u32(b, pos);
  Shape shape(rank);
  for (uint32_t d = 0; d < rank; ++d) {
    if (pos + 8 > b.size()) throw std::runtime_error("wdt: truncated header in " + path);
    shape[d] = static_cast<int64_t>(get_u64(b, pos));
  }
  NDTensor t(shape);
  if (pos + static_cast<size_t>(t.size()) * 8 > b.size()) {
    throw std::runtime_error("wdt: truncated payload in " + path);
  }
  for (int64_t i = 0; i < t.size(); ++i) {
    uint64_t bits = get_u64(b, pos);
    double v;
    std::memcpy(&v, &bits, 8);
    t[i] = v;
  }
  return t;
}

}  // namespace wavediff
