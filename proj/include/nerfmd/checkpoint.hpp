#pragma once

#include <cstdint>
#include <string>

#include "nerfmd/mlp.hpp"

namespace nerfmd {

// Binary field checkpoint: "NMCK" magic, version, architecture, iteration,
// the config hash of the producing run, then float32 parameters.
struct Checkpoint {
  MlpConfig mlp;
  Eigen::VectorXf params;
  uint32_t iteration = 0;
  uint64_t config_hash = 0;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  template <class T>
  void to_field(Mlp<T>& field) const {
    if (!(field.config() == mlp))
      throw std::runtime_error("checkpoint: architecture mismatch");
    if (field.params().size() != params.size())
      throw std::runtime_error("checkpoint: parameter count mismatch");
    for (ptrdiff_t i = 0; i < params.size(); ++i)
      field.params()[i] = T(params[i]);
  }

  template <class T>
  static Checkpoint from_field(const Mlp<T>& field, uint32_t iteration,
                               uint64_t config_hash) {
    Checkpoint ck;
    ck.mlp = field.config();
    ck.params.resize(field.params().size());
    for (ptrdiff_t i = 0; i < ck.params.size(); ++i)
      ck.params[i] = float(field.params()[i]);
    ck.iteration = iteration;
    ck.config_hash = config_hash;
    return ck;
  }
};

}  // namespace nerfmd
