#pragma once

#include <map>
#include <string>

#include "parsec/parent_net.hpp"
#include "parsec/tensor.hpp"

namespace parsec {

/// Weight checkpoint container: magic "PSEC", a format version, then a table of
/// (key string, shape, 64-bit little-endian floats). Holds both trainable
/// parameters and batchnorm running buffers.
void save_weights(const WeightStore& store, const std::string& path);

/// Raw table from a checkpoint file.
std::map<std::string, Tensor> read_weight_file(const std::string& path);

/// Loads a checkpoint into an existing store. Strict: every checkpoint key
/// must exist in the store with a matching shape, and every store key must be
/// present in the checkpoint.
void load_weights_into(WeightStore& store, const std::string& path);

}  // namespace parsec
