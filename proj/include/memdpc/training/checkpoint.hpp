#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "memdpc/core/params.hpp"
#include "memdpc/training/model.hpp"

namespace memdpc::training {

/// Named arrays plus a JSON manifest {config, step, best_val_loss,
/// rng_state, metadata}. Arrays are kept sorted by name so that equal
/// contents always serialise to identical bytes.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> arrays;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

/// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Copies parameter and buffer values into `ckpt.arrays`.
void store_state(Checkpoint& ckpt, const ParamList& params, const BufferList& buffers);

/// Moves every parameter and buffer out of `arrays`. Throws
/// MissingParameter naming the first absent key and ConfigMismatch on a
/// shape difference. Leftover arrays stay in `arrays`.
void take_state(std::map<std::string, Tensor>& arrays, const ParamList& params,
                const BufferList& buffers);

/// Throws UnexpectedParameter naming the first array not claimed by anyone.
void require_consumed(const std::map<std::string, Tensor>& arrays);

/// The model spec stored in a checkpoint manifest.
ModelSpec checkpoint_model_spec(const Checkpoint& ckpt);

/// Rebuilds the model saved in `ckpt`. Optimizer moments ("adam.*") are
/// ignored; any other unclaimed array is an error.
Model load_model(const Checkpoint& ckpt);
/// As above, but first checks the stored spec equals `expected`
/// (ConfigMismatch otherwise; no silent reshaping).
Model load_model(const Checkpoint& ckpt, const ModelSpec& expected);

}  // namespace memdpc::training
