#include "memdpc/videodata/dataset_index.hpp"

#include <fstream>
#include <sstream>

#include "memdpc/core/error.hpp"

namespace memdpc::videodata {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }
std::string to_string(Modality m) { return m == Modality::Rgb ? "rgb" : "flow"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorKind::InvalidIndex, "unknown split '" + s + "'");
}

Modality parse_modality(const std::string& s) {
  if (s == "rgb") return Modality::Rgb;
  if (s == "flow") return Modality::Flow;
  fail(ErrorKind::InvalidIndex, "unknown modality '" + s + "'");
}

std::vector<IndexEntry> DatasetIndex::select(Split split, Modality modality) const {
  std::vector<IndexEntry> out;
  for (const auto& e : entries) {
    if (e.split == split && e.modality == modality) out.push_back(e);
  }
  return out;
}

fs::path DatasetIndex::resolve(const IndexEntry& e) const {
  fs::path p(e.clip_path);
  return p.is_absolute() ? p : root / p;
}

void DatasetIndex::validate() const {
  if (num_classes <= 0) fail(ErrorKind::InvalidIndex, "index has no classes");
  for (const auto& e : entries) {
    if (e.label < 0 || e.label >= num_classes) {
      fail(ErrorKind::InvalidIndex, "label " + std::to_string(e.label) + " of '" + e.clip_path +
                                        "' outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

namespace {
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace

DatasetIndex read_index(const fs::path& csv) {
  std::ifstream is(csv);
  if (!is) fail(ErrorKind::IoError, "cannot open index " + csv.string());
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::InvalidIndex, "index " + csv.string() + " is empty");
  const auto header = split_csv(line);
  const bool with_failure = header.size() == 5 && header[4] == "failure_frame";
  if (header.size() < 4 || header[0] != "path" || header[1] != "label" || header[2] != "split" ||
      header[3] != "modality" || (header.size() == 5 && !with_failure) || header.size() > 5) {
    fail(ErrorKind::InvalidIndex,
         "index header must be 'path,label,split,modality[,failure_frame]', got '" + line + "'");
  }
  DatasetIndex index;
  index.root = csv.parent_path();
  int max_label = -1;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      fail(ErrorKind::InvalidIndex, csv.string() + ":" + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " fields");
    }
    IndexEntry e;
    e.clip_path = cells[0];
    try {
      e.label = std::stoi(cells[1]);
      if (with_failure && !cells[4].empty()) e.failure_frame = std::stoi(cells[4]);
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidIndex, csv.string() + ":" + std::to_string(line_no) + ": bad integer");
    }
    e.split = parse_split(cells[2]);
    e.modality = parse_modality(cells[3]);
    if (e.label < 0) fail(ErrorKind::InvalidIndex, "negative label at line " + std::to_string(line_no));
    max_label = std::max(max_label, e.label);
    index.entries.push_back(std::move(e));
  }
  index.num_classes = max_label + 1;
  return index;
}

void write_index(const DatasetIndex& index, const fs::path& csv) {
  bool with_failure = false;
  for (const auto& e : index.entries) with_failure = with_failure || e.failure_frame.has_value();
  std::ofstream os(csv);
  if (!os) fail(ErrorKind::IoError, "cannot write index " + csv.string());
  os << "path,label,split,modality" << (with_failure ? ",failure_frame" : "") << '\n';
  for (const auto& e : index.entries) {
    os << e.clip_path << ',' << e.label << ',' << to_string(e.split) << ',' << to_string(e.modality);
    if (with_failure) {
      os << ',';
      if (e.failure_frame) os << *e.failure_frame;
    }
    os << '\n';
  }
  if (!os) fail(ErrorKind::IoError, "write failed for " + csv.string());
}

LoadReport load_clips(const DatasetIndex& index, Split split, Modality modality, int min_frames,
                      const std::string& frame_pattern) {
  LoadReport report;
  for (const auto& e : index.select(split, modality)) {
    try {
      Clip clip = load_clip(index.resolve(e), frame_pattern);
      if (clip.frames < min_frames) {
        report.rejected.push_back(e.clip_path + ": " + std::to_string(clip.frames) +
                                  " frames, need " + std::to_string(min_frames));
        continue;
      }
      report.clips.push_back({e, std::move(clip)});
    } catch (const Error& err) {
      report.rejected.push_back(e.clip_path + ": " + err.what());
    }
  }
  return report;
}

}  // namespace memdpc::videodata
