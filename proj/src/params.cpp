#include "plad/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace plad {

ag::Tensor ParamRegistry::add(const std::string& name, int rows, int cols,
                              std::vector<double> init, bool decay) {
  if (name.empty()) throw std::invalid_argument("parameter name is empty");
  if (contains(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  if (rows <= 0 || cols <= 0 ||
      init.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("bad init size for parameter " + name);
  Entry e;
  e.name = name;
  e.tensor = ag::Tensor::param(rows, cols, std::move(init));
  e.decay = decay;
  entries_.push_back(e);
  return entries_.back().tensor;
}

const ParamRegistry::Entry& ParamRegistry::at(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e;
  throw std::out_of_range("no parameter named " + name);
}

ParamRegistry::Entry& ParamRegistry::at(const std::string& name) {
  for (Entry& e : entries_)
    if (e.name == name) return e;
  throw std::out_of_range("no parameter named " + name);
}

bool ParamRegistry::contains(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::vector<ag::Tensor> ParamRegistry::tensors() const {
  std::vector<ag::Tensor> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.tensor);
  return out;
}

std::size_t ParamRegistry::total_values() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += static_cast<std::size_t>(e.tensor.size());
  return n;
}

void ParamRegistry::zero_grad() {
  for (Entry& e : entries_) e.tensor.zero_grad();
}

std::vector<double> glorot_fill(Rng& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return v;
}

std::vector<double> gaussian_fill(Rng& rng, int rows, int cols, double sigma) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = sigma * rng.gaussian();
  return v;
}

std::vector<double> constant_fill(int rows, int cols, double v) {
  return std::vector<double>(static_cast<std::size_t>(rows) * cols, v);
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() { if (f) std::fclose(f); }
};

void put_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint write failed");
}

void put_u64(std::FILE* f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 8, f) != 8) throw std::runtime_error("checkpoint write failed");
}

std::uint32_t get_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw std::runtime_error(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::FILE* f, const std::string& path) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8)
    throw std::runtime_error(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

// Doubles go through their IEEE-754 bit pattern so the round-trip is exact and
// independent of any text formatting.
void put_doubles(std::FILE* f, const std::vector<double>& v) {
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(f, bits);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& reg) {
  FileCloser fc;
  fc.f = std::fopen(path.c_str(), "wb");
  if (!fc.f) throw std::runtime_error("cannot open " + path + " for writing");
  std::FILE* f = fc.f;
  if (std::fwrite(kMagic, 1, 8, f) != 8)
    throw std::runtime_error("checkpoint write failed");
  put_u32(f, kVersion);
  put_u64(f, reg.entries().size());
  for (const ParamRegistry::Entry& e : reg.entries()) {
    put_u32(f, static_cast<std::uint32_t>(e.name.size()));
    if (std::fwrite(e.name.data(), 1, e.name.size(), f) != e.name.size())
      throw std::runtime_error("checkpoint write failed");
    put_u32(f, static_cast<std::uint32_t>(e.tensor.rows()));
    put_u32(f, static_cast<std::uint32_t>(e.tensor.cols()));
    put_doubles(f, e.tensor.value());
  }
}

void load_checkpoint(const std::string& path, ParamRegistry& reg) {
  FileCloser fc;
  fc.f = std::fopen(path.c_str(), "rb");
  if (!fc.f) throw std::runtime_error("cannot open " + path);
  std::FILE* f = fc.f;
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const std::uint32_t version = get_u32(f, path);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  const std::uint64_t count = get_u64(f, path);
  if (count != reg.entries().size())
    throw std::runtime_error(path + ": checkpoint has " + std::to_string(count) +
                             " tensors, model has " +
                             std::to_string(reg.entries().size()));
  for (const ParamRegistry::Entry& e : reg.entries()) {
    const std::uint32_t name_len = get_u32(f, path);
    std::string name(name_len, '\0');
    if (name_len != 0 && std::fread(name.data(), 1, name_len, f) != name_len)
      throw std::runtime_error(path + ": truncated checkpoint");
    if (name != e.name)
      throw std::runtime_error(path + ": tensor name mismatch, expected " +
                               e.name + ", found " + name);
    const std::uint32_t rows = get_u32(f, path);
    const std::uint32_t cols = get_u32(f, path);
    if (rows != static_cast<std::uint32_t>(e.tensor.rows()) ||
        cols != static_cast<std::uint32_t>(e.tensor.cols()))
      throw std::runtime_error(path + ": shape mismatch for " + e.name);
    ag::Tensor t = e.tensor;
    std::vector<double>& dst = t.raw_value();
    for (double& x : dst) {
      const std::uint64_t bits = get_u64(f, path);
      double d;
      std::memcpy(&d, &bits, 8);
      x = d;
    }
  }
  // Anything left over means the header count lied.
  char probe;
  if (std::fread(&probe, 1, 1, f) == 1)
    throw std::runtime_error(path + ": trailing bytes after last tensor");
}

}  // namespace plad
