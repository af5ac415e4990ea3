#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adamix/trainer.hpp"

namespace adamix {

/// Checkpoint or other file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint contents do not fit the expected architecture.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Little-endian layout: "AAMX", u32 version, descriptor (input C H W,
/// classes, blocks, stage count, widths), u64 layer, u64 step, then the
/// classifier, teacher, encoder prefix and generator tensors. Each tensor is
/// u64 count followed by its doubles; batch-norm statistics follow the
/// parameters of their network.
std::vector<unsigned char> encode_checkpoint(const ModelState& state, std::size_t layer);

struct Checkpoint {
  ArchDescriptor arch;
  std::size_t layer = 0;
  std::size_t step = 0;
  std::vector<std::vector<double>> classifier, teacher, encoder, generator;
};

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

/// Copies a decoded checkpoint into a state of the same architecture.
void restore(ModelState& state, const Checkpoint& checkpoint);

void save_checkpoint(const std::string& path, const ModelState& state, std::size_t layer);
Checkpoint load_checkpoint(const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes);
std::string hex_digest(std::uint64_t digest);
/// Digest of a file's bytes.
std::string file_digest(const std::string& path);

}  // namespace adamix
