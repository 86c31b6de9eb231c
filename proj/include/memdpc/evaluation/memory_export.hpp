#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "memdpc/evaluation/embedding.hpp"

namespace memdpc::evaluation {

struct MemoryNeighbour {
  int slot = 0;
  int rank = 0;  // 1-based
  std::string clip_id;
  int label = 0;
  double score = 0.0;
};

/// ||m_i|| for every slot.
std::vector<double> memory_magnitudes(const memory::MemoryBank& bank);

/// Per clip: spatially pooled z, averaged over every block of every window.
/// Lives in the same space as the memory rows.
std::vector<ClipEmbedding> clip_block_features(const std::vector<videodata::LoadedClip>& clips,
                                               const training::Model& model, const training::DataSpec& data);

/// Top `top` clips per memory row by critic score (cosine when normalized),
/// ties broken by clip order.
std::vector<MemoryNeighbour> memory_neighbours(const Tensor& rows, const std::vector<ClipEmbedding>& clips,
                                               int top = 3, bool normalized = true);

/// Per clip: addressing distribution of the first predicted step, averaged
/// over positions and windows. Each vector sums to 1.
std::vector<ClipEmbedding> addressing_vectors(const std::vector<videodata::LoadedClip>& clips,
                                              const training::Model& model, const training::DataSpec& data,
                                              int pred_steps);

/// Writes memory_magnitude.csv, memory_neighbours.csv and
/// addressing_vectors.csv into `out_dir`.
void export_memory_views(const training::Model& model, const std::vector<videodata::LoadedClip>& clips,
                         const training::DataSpec& data, int pred_steps, const std::filesystem::path& out_dir);

}  // namespace memdpc::evaluation
