#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "memdpc/training/config.hpp"
#include "memdpc/training/model.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::evaluation {

/// Spatially pooled final context feature of a clip, averaged over windows.
struct ClipEmbedding {
  std::string clip_id;
  int label = 0;
  std::vector<double> vector;
};

/// Mean over the spatial positions of a [C][H][W] feature.
std::vector<double> spatial_pool(const backbone::ContextFeature& c);

/// Element-wise mean of equally sized vectors.
std::vector<double> average_vectors(const std::vector<std::vector<double>>& vs);

/// First frames of every window: 0, hop, 2*hop, ... while the window fits.
/// `hop` 0 means one window length. Throws ClipTooShort when none fits.
std::vector<int> window_starts(int frames, const training::DataSpec& data, int block_len, int hop = 0);

/// Pooled context for an encoder batch [B*N][3][L][H][W]: [B][C] node.
ag::Var pooled_context(const training::Model& model, const ag::Var& blocks, int batch, bool training);

/// Runs every window of the clip through f and g (eval mode, centre view)
/// and averages the pooled c_t vectors.
ClipEmbedding extract_embedding(const videodata::LoadedClip& clip, const training::Model& model,
                                const training::DataSpec& data, int hop = 0);

std::vector<ClipEmbedding> extract_embeddings(const std::vector<videodata::LoadedClip>& clips,
                                              const training::Model& model,
                                              const training::DataSpec& data, int hop = 0);

/// CSV `clip_id,label,v0..v{C-1}`.
void write_embeddings(const std::vector<ClipEmbedding>& e, const std::filesystem::path& csv);
std::vector<ClipEmbedding> read_embeddings(const std::filesystem::path& csv);

/// Stable clip identifier: the index path of the clip.
std::string clip_id(const videodata::IndexEntry& e);

}  // namespace memdpc::evaluation
