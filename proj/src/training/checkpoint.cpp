#include "memdpc/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "memdpc/core/error.hpp"

namespace memdpc::training {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'D', 'P', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive format assumes little endian");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  void read(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) fail(ErrorKind::CorruptArchive, "checkpoint truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, sizeof(kMagic));
  put(out, kVersion);
  const std::string manifest = ckpt.manifest.dump();
  put(out, static_cast<std::uint64_t>(manifest.size()));
  put_bytes(out, manifest.data(), manifest.size());
  put(out, static_cast<std::uint64_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    put(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put(out, static_cast<std::int64_t>(d));
    put_bytes(out, t.ptr(), sizeof(double) * static_cast<std::size_t>(t.size()));
  }
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::CorruptArchive, "not a checkpoint archive");
  }
  if (r.get<std::uint32_t>() != kVersion) fail(ErrorKind::CorruptArchive, "unsupported version");
  Checkpoint ckpt;
  const auto mlen = r.get<std::uint64_t>();
  if (mlen > bytes.size()) fail(ErrorKind::CorruptArchive, "checkpoint truncated");
  std::string manifest(mlen, '\0');
  r.read(manifest.data(), mlen);
  try {
    ckpt.manifest = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("bad manifest: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    if (nlen > bytes.size()) fail(ErrorKind::CorruptArchive, "checkpoint truncated");
    std::string name(nlen, '\0');
    r.read(name.data(), nlen);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::CorruptArchive, "array '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::int64_t>();
      if (d < 0) fail(ErrorKind::CorruptArchive, "negative dimension in '" + name + "'");
    }
    const std::int64_t n = numel(shape);
    if (n < 0 || static_cast<std::uint64_t>(n) > bytes.size() / sizeof(double)) {
      fail(ErrorKind::CorruptArchive, "checkpoint truncated");
    }
    std::vector<double> values(static_cast<std::size_t>(n));
    r.read(values.data(), sizeof(double) * values.size());
    if (!ckpt.arrays.emplace(name, Tensor(shape, std::move(values))).second) {
      fail(ErrorKind::CorruptArchive, "duplicate array '" + name + "'");
    }
  }
  if (!r.done()) fail(ErrorKind::CorruptArchive, "trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& file) {
  const auto bytes = serialize(ckpt);
  std::error_code ec;
  if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "cannot write " + tmp.string());
  }
  fs::rename(tmp, file, ec);
  if (ec) fail(ErrorKind::IoError, "cannot move checkpoint into " + file.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open checkpoint " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void store_state(Checkpoint& ckpt, const ParamList& params, const BufferList& buffers) {
  for (const auto& p : params) ckpt.arrays[p.name] = p.var->value;
  for (const auto& b : buffers) ckpt.arrays[b.name] = *b.tensor;
}

namespace {
void take_one(std::map<std::string, Tensor>& arrays, const std::string& name, Tensor& dst) {
  auto it = arrays.find(name);
  if (it == arrays.end()) fail(ErrorKind::MissingParameter, "checkpoint lacks '" + name + "'");
  if (it->second.shape() != dst.shape()) {
    fail(ErrorKind::ConfigMismatch, "'" + name + "' is " + shape_str(it->second.shape()) +
                                        " in the checkpoint but " + shape_str(dst.shape()) +
                                        " in the model");
  }
  dst = std::move(it->second);
  arrays.erase(it);
}
}  // namespace

void take_state(std::map<std::string, Tensor>& arrays, const ParamList& params,
                const BufferList& buffers) {
  for (const auto& p : params) take_one(arrays, p.name, p.var->value);
  for (const auto& b : buffers) take_one(arrays, b.name, *b.tensor);
}

void require_consumed(const std::map<std::string, Tensor>& arrays) {
  if (!arrays.empty()) {
    fail(ErrorKind::UnexpectedParameter, "checkpoint has unexpected array '" + arrays.begin()->first + "'");
  }
}

ModelSpec checkpoint_model_spec(const Checkpoint& ckpt) {
  if (!ckpt.manifest.contains("model")) fail(ErrorKind::CorruptArchive, "manifest lacks the model spec");
  return ModelSpec::from_json(ckpt.manifest.at("model"));
}

Model load_model(const Checkpoint& ckpt) {
  Model model(checkpoint_model_spec(ckpt), 0);
  auto arrays = ckpt.arrays;
  take_state(arrays, model.parameters(), model.buffers());
  std::erase_if(arrays, [](const auto& kv) { return kv.first.starts_with("adam."); });
  require_consumed(arrays);
  return model;
}

Model load_model(const Checkpoint& ckpt, const ModelSpec& expected) {
  const ModelSpec stored = checkpoint_model_spec(ckpt);
  if (!(stored == expected)) {
    fail(ErrorKind::ConfigMismatch, "checkpoint architecture " + stored.to_json().dump() +
                                        " differs from requested " + expected.to_json().dump());
  }
  return load_model(ckpt);
}

}  // namespace memdpc::training
