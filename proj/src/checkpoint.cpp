#include "mat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mat {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  f.write((const char*)b, 4);
}

uint32_t get_u32(std::istream& f) {
  unsigned char b[4];
  f.read((char*)b, 4);
  if (!f) throw std::runtime_error("checkpoint truncated");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<TensorPtr>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, 8);
  for (const auto& t : tensors) {
    if (t->name.empty()) throw std::invalid_argument("checkpoint tensors must be named");
    put_u32(f, (uint32_t)t->name.size());
    f.write(t->name.data(), (std::streamsize)t->name.size());
    put_u32(f, (uint32_t)t->shape.size());
    for (int s : t->shape) put_u32(f, (uint32_t)s);
    for (float v : t->value) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(f, bits);
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<TensorPtr> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::vector<TensorPtr> out;
  while (true) {
    f.peek();
    if (f.eof()) break;
    const uint32_t name_len = get_u32(f);
    if (name_len > 4096) throw std::runtime_error("corrupt checkpoint: oversized name");
    std::string name((size_t)name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rank = get_u32(f);
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: rank " + std::to_string(rank));
    std::vector<int> shape((size_t)rank);
    int64_t n = 1;
    for (auto& s : shape) {
      s = (int)get_u32(f);
      n *= s;
    }
    std::vector<float> data((size_t)n);
    for (auto& v : data) {
      const uint32_t bits = get_u32(f);
      std::memcpy(&v, &bits, 4);
    }
    auto t = tensor(std::move(shape), std::move(data));
    t->name = std::move(name);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace mat
