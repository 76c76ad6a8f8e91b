#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirl/nn/backbones.hpp"
#include "cirl/tensor.hpp"

namespace cirl::nn {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

struct CheckpointMeta {
  ModelSpec spec;
  std::uint64_t step = 0;
};

template <class T>
struct Checkpoint {
  CheckpointMeta meta;
  std::vector<NamedTensor<T>> tensors;
};

// Versioned binary container: magic, format version, a JSON header (spec,
// step, tensor names/shapes/dtype), raw little-endian tensor data, and a
// trailing SHA-256 digest of everything before it. Save/load round-trips
// bit-exactly.
template <class T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<NamedTensor<T>>& tensors);

// Raises LoadError on a missing or unreadable file, wrong magic, unsupported
// version, dtype mismatch, truncation, or digest mismatch.
template <class T>
Checkpoint<T> load_checkpoint(const std::string& path);

}  // namespace cirl::nn
