#include "memdpc/training/batching.hpp"

#include "memdpc/core/error.hpp"
#include "memdpc/videodata/augment.hpp"

namespace memdpc::training {

Tensor make_batch(const std::vector<WindowRequest>& windows, const DataSpec& data, int block_len,
                  const videodata::AugmentPolicy& policy) {
  std::vector<videodata::VideoBlockSequence> seqs;
  seqs.reserve(windows.size());
  for (const auto& w : windows) {
    auto seq = videodata::partition_clip(*w.clip, data.partition(block_len, w.start));
    seqs.push_back(videodata::augment(seq, policy, w.seed));
  }
  return videodata::to_encoder_input(seqs);
}

std::vector<videodata::LoadedClip> load_split(const videodata::DatasetIndex& index,
                                              videodata::Split split, videodata::Modality modality,
                                              const DataSpec& data, int block_len) {
  const int need = data.loop_pad ? 1 : data.window_frames(block_len);
  auto report = videodata::load_clips(index, split, modality, need, data.frame_pattern);
  if (report.clips.empty()) {
    std::string why = "no usable " + videodata::to_string(split) + "/" +
                      videodata::to_string(modality) + " clips";
    if (!report.rejected.empty()) why += " (first rejection: " + report.rejected.front() + ")";
    fail(ErrorKind::DataExhausted, why);
  }
  return std::move(report.clips);
}

}  // namespace memdpc::training
