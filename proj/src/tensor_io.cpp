#include "dlif/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dlif {

namespace {

constexpr char kMagic[5] = {'D', 'L', 'I', 'F', '1'};

void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_dlif1(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_dlif1: cannot open " + path);
  os.write(kMagic, 5);
  const unsigned char rank = static_cast<unsigned char>(t->rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d : t->shape) put_u32_le(os, static_cast<uint32_t>(d));
  std::vector<unsigned char> payload(t->data.size() * 4);
  for (size_t i = 0; i < t->data.size(); ++i) {
    const float f = static_cast<float>(t->data[i]);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    payload[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
    payload[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    payload[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    payload[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os) throw std::runtime_error("write_dlif1: write failed for " + path);
}

Tensor read_dlif1(const std::string& path, bool requires_grad) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_dlif1: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0) {
    throw std::runtime_error("read_dlif1: bad magic in " + path);
  }
  unsigned char rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 1);
  Shape shape(rank);
  for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_u32_le(is));
  const int64_t n = numel(shape);
  std::vector<unsigned char> payload(static_cast<size_t>(n) * 4);
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!is) throw std::runtime_error("read_dlif1: truncated payload in " + path);
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t bits = static_cast<uint32_t>(payload[4 * i + 0]) |
                          (static_cast<uint32_t>(payload[4 * i + 1]) << 8) |
                          (static_cast<uint32_t>(payload[4 * i + 2]) << 16) |
                          (static_cast<uint32_t>(payload[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = static_cast<double>(f);
  }
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

void save_tensor_dir(const std::string& dir, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("save_tensor_dir: cannot open manifest in " + dir);
  for (const auto& [name, t] : tensors) {
    const std::string file = name + ".dlif";
    write_dlif1(dir + "/" + file, t);
    manifest << name << ", " << file << ", ";
    for (size_t i = 0; i < t->shape.size(); ++i) manifest << (i ? "x" : "") << t->shape[i];
    manifest << "\n";
  }
}

std::vector<std::pair<std::string, Tensor>> load_tensor_dir(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("load_tensor_dir: cannot open manifest in " + dir);
  std::vector<std::pair<std::string, Tensor>> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file;
    std::getline(ls, name, ',');
    std::getline(ls, file, ',');
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    };
    trim(name);
    trim(file);
    out.emplace_back(name, read_dlif1(dir + "/" + file));
  }
  return out;
}

void truncate_to_f32(const Tensor& t) {
  for (double& v : t->data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace dlif
