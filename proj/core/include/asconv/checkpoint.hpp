#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asconv/model.hpp"
#include "asconv/training.hpp"

// Binary layout, all integers little-endian:
//   "ASCV"                       magic
//   u32 version                  currently 1
//   u32 n, n bytes               model config as `key = value` lines
//   u32 count                    parameter arrays
//   repeated count times:
//     u32 n, n bytes             name
//     u32 rank, rank x u32       dims
//     numel x f32                values, row-major
//   u8 has_adam
//   if has_adam:  u64 step, then for each parameter in order: m (f32 x numel),
//                 v (f32 x numel)
//   u64 iteration
//   u32 n, n bytes               generator state text

namespace asconv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  TensorF value;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedArray> params;
  std::optional<AdamState<float>> adam;
  std::uint64_t iteration = 0;
  std::string rng_state;
};

/// Snapshot of a model (and optionally its training state).
Checkpoint make_checkpoint(const AsConvSR<float>& model, const TrainState* state = nullptr);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError for bad magic, unsupported version, truncation or
/// corrupt length fields.
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Throws IoError when the file cannot be written or read.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies parameters into `model`. Throws ShapeError naming the first
/// parameter whose shape differs and ValueError for missing or extra names.
void load_params(AsConvSR<float>& model, const Checkpoint& ckpt);

/// Model built from the checkpoint's own config.
AsConvSR<float> model_from_checkpoint(const Checkpoint& ckpt);

/// Restores optimizer state, iteration counter and generator state.
void restore_train_state(const Checkpoint& ckpt, TrainState& state);

}  // namespace asconv
