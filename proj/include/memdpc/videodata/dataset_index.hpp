#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memdpc/videodata/clip.hpp"

namespace memdpc::videodata {

enum class Split { Train, Test };
enum class Modality { Rgb, Flow };

std::string to_string(Split s);
std::string to_string(Modality m);
Split parse_split(const std::string& s);
Modality parse_modality(const std::string& s);

struct IndexEntry {
  std::string clip_path;  // relative to the index file's directory, or absolute
  int label = 0;
  Split split = Split::Train;
  Modality modality = Modality::Rgb;
  /// Frame at which an injected failure starts (unintentional-action data).
  std::optional<int> failure_frame;
};

/// Manifest of clips. Serialized as CSV with header
/// `path,label,split,modality` plus an optional `failure_frame` column.
struct DatasetIndex {
  std::vector<IndexEntry> entries;
  int num_classes = 0;
  std::filesystem::path root;  // directory relative paths resolve against

  /// Entries matching a split and modality, in file order.
  std::vector<IndexEntry> select(Split split, Modality modality) const;
  std::filesystem::path resolve(const IndexEntry& e) const;

  void validate() const;
};

DatasetIndex read_index(const std::filesystem::path& csv);
void write_index(const DatasetIndex& index, const std::filesystem::path& csv);

/// A clip held in memory together with its index entry.
struct LoadedClip {
  IndexEntry entry;
  Clip clip;
};

struct LoadReport {
  std::vector<LoadedClip> clips;
  std::vector<std::string> rejected;  // one message per rejected entry
};

/// Loads every entry of the given split/modality. Entries whose clip is
/// unreadable or shorter than `min_frames` are rejected and reported.
LoadReport load_clips(const DatasetIndex& index, Split split, Modality modality, int min_frames,
                      const std::string& frame_pattern = kDefaultFramePattern);

}  // namespace memdpc::videodata
