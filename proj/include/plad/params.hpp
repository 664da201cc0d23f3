#pragma once

#include <string>
#include <utility>
#include <vector>

#include "plad/autograd.hpp"
#include "plad/rng.hpp"

namespace plad {

// Flat ordered collection of named trainable tensors. Modules register their
// parameters here so the optimizer, the checkpoint writer, and the gradient
// checker all iterate one list in a stable order. `decay` marks whether the
// tensor takes weight decay (layer-norm gains, biases, prompt context tokens
// and the temperature opt out).
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    ag::Tensor tensor;
    bool decay = true;
  };

  ag::Tensor add(const std::string& name, int rows, int cols,
                 std::vector<double> init, bool decay = true);

  // Throws std::out_of_range when no entry has this name.
  const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<ag::Tensor> tensors() const;
  std::size_t total_values() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

// Initializer fills. Glorot draws uniform +-sqrt(6/(rows+cols)).
std::vector<double> glorot_fill(Rng& rng, int rows, int cols);
std::vector<double> gaussian_fill(Rng& rng, int rows, int cols, double sigma);
std::vector<double> constant_fill(int rows, int cols, double v);

// Binary little-endian checkpoint with bitwise round-trip:
//   "PLADCKPT", u32 version, u64 count, then per tensor
//   u32 name bytes, name, u32 rows, u32 cols, row-major doubles.
void save_checkpoint(const std::string& path, const ParamRegistry& reg);

// Loads values into an already constructed registry. Names, order, and shapes
// must match the file exactly; the registry defines the architecture and the
// file only supplies values.
void load_checkpoint(const std::string& path, ParamRegistry& reg);

}  // namespace plad
