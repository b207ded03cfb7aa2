#include "nerfmd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nerfmd {

namespace {

constexpr char kMagic[4] = {'N', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T take(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  f.write(kMagic, 4);
  put<uint32_t>(f, kVersion);
  put<int32_t>(f, mlp.pos_levels);
  put<int32_t>(f, mlp.dir_levels);
  put<int32_t>(f, mlp.hidden);
  put<int32_t>(f, mlp.depth);
  put<int32_t>(f, mlp.color_hidden);
  put<uint32_t>(f, iteration);
  put<uint64_t>(f, config_hash);
  put<uint64_t>(f, uint64_t(params.size()));
  f.write(reinterpret_cast<const char*>(params.data()),
          std::streamsize(params.size()) * 4);
  if (!f) throw std::runtime_error("checkpoint: write failure for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = take<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ck;
  ck.mlp.pos_levels = take<int32_t>(f);
  ck.mlp.dir_levels = take<int32_t>(f);
  ck.mlp.hidden = take<int32_t>(f);
  ck.mlp.depth = take<int32_t>(f);
  ck.mlp.color_hidden = take<int32_t>(f);
  ck.iteration = take<uint32_t>(f);
  ck.config_hash = take<uint64_t>(f);
  uint64_t count = take<uint64_t>(f);
  ck.params.resize(ptrdiff_t(count));
  f.read(reinterpret_cast<char*>(ck.params.data()), std::streamsize(count) * 4);
  if (!f) throw std::runtime_error("checkpoint: truncated parameters");
  return ck;
}

}  // namespace nerfmd
