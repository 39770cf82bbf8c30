#pragma once

#include <map>
#include <string>

#include "model.hpp"

namespace evqa {

// Checkpoint container format: magic "EVQA", version u32, tensor count u32,
// then per tensor: name length u16 + UTF-8 name, rank u8, dims u32 each,
// payload as little-endian f64. Round-trips are bit-exact.
constexpr uint32_t kCheckpointVersion = 1;

void save_named_tensors(const std::string& path, const NamedTensors& tensors);
std::map<std::string, TensorPtr> load_named_tensors(const std::string& path);

// Copies values from `src` into each destination tensor, validating shapes;
// missing or mismatched entries raise CheckpointError naming the tensor.
void apply_named_tensors(const NamedTensors& dst, const std::map<std::string, TensorPtr>& src);

// Bit-cast helpers for stashing non-float state (rng words) in the tensor
// container.
TensorPtr tensor_from_u64(const std::vector<uint64_t>& words, std::string name);
std::vector<uint64_t> u64_from_tensor(const TensorPtr& t);

}  // namespace evqa
