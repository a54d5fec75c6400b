#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ebt/autodiff/tensor.hpp"
#include "ebt/model/transformer.hpp"

namespace ebt {

/// Binary container: "EBTF", u32 version, u64-prefixed config text, u64
/// tensor count, then per tensor u64-prefixed name, u64 rank, u64 dims and
/// little-endian f64 payload.
struct Checkpoint {
  std::string config_text;
  std::map<std::string, Tensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Adapters go under "lora/<target>/A" and "lora/<target>/B"; tensors whose
/// names start with "oracle/" are carried through untouched.
Checkpoint model_to_checkpoint(const Model& model);
Model model_from_checkpoint(const Checkpoint& ckpt);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace ebt
