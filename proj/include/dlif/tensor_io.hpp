#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

// DLIF1 binary tensor file: 5-byte magic "DLIF1", u8 rank, rank x u32
// little-endian dims, f32 little-endian row-major payload.
void write_dlif1(const std::string& path, const Tensor& t);
Tensor read_dlif1(const std::string& path, bool requires_grad = false);

// A directory of DLIF1 files plus a manifest of `name, file, shape` lines.
void save_tensor_dir(const std::string& dir, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensor_dir(const std::string& dir);

// Round every value to its f32 representation in place (the precision that
// survives a DLIF1 round trip).
void truncate_to_f32(const Tensor& t);

}  // namespace dlif
