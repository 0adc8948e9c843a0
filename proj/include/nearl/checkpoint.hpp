#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nearl/backbone.hpp"
#include "nearl/model.hpp"

namespace nearl {

// "NEARL1" file: magic, u64 record count, then per record a u32 name length,
// the name bytes, u32 rank, u64 dims, and the little-endian f64 payload.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Value snapshot that no longer aliases the source tensors.
std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& tensors);

// Copies values into the model's tensors in place. The record set must name
// exactly the model's tensors with identical shapes, else Error(dim_mismatch).
void restore(Model& model, const std::vector<NamedTensor>& tensors);

}  // namespace nearl
