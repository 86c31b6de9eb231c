#include "memdpc/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <map>

#include "memdpc/core/error.hpp"

namespace memdpc::cli {

using nlohmann::json;

std::string to_string(KeyType t) {
  switch (t) {
    case KeyType::Int: return "int";
    case KeyType::Real: return "real";
    case KeyType::Bool: return "bool";
    case KeyType::String: return "string";
    case KeyType::IntList: return "int list";
    case KeyType::RealList: return "real list";
  }
  return "?";
}

namespace {

using K = KeyType;

std::vector<KeyDef> build_registry() {
  const videodata::AugmentPolicy aug;
  const training::TrainConfig tc;
  const videodata::SyntheticSpec ss;
  const evaluation::ProbeConfig pc;
  const evaluation::UnintentionalConfig uc;
  return {
      {"run.root", K::String, "", "parent of run directories; empty uses $MEMDPC_RUN_ROOT, else ./runs"},
      {"run.name", K::String, "", "run directory name; empty uses the command name"},
      {"seed", K::Int, 0, "seed for initialization, sampling and classifier training"},

      {"data.root", K::String, "", "dataset directory holding index.csv"},
      {"data.modality", K::String, "rgb", "rgb or flow"},
      {"data.num_blocks", K::Int, tc.data.num_blocks, "blocks per window"},
      {"data.sampling_stride", K::Int, tc.data.sampling_stride, "temporal stride between sampled frames"},
      {"data.loop_pad", K::Bool, tc.data.loop_pad, "loop short clips instead of rejecting them"},
      {"data.frame_pattern", K::String, tc.data.frame_pattern, "printf pattern of frame files"},

      {"augment.crop_size", K::Int, aug.crop_size, "clip-wise crop side; 0 keeps the frame"},
      {"augment.random_crop", K::Bool, aug.random_crop, "random rather than centre crop at train time"},
      {"augment.output_size", K::Int, aug.output_size, "resize after crop; 0 keeps the crop"},
      {"augment.flip_prob", K::Real, aug.flip_prob, "clip-wise horizontal flip probability"},
      {"augment.brightness", K::Real, aug.brightness, "frame-wise brightness jitter"},
      {"augment.contrast", K::Real, aug.contrast, "frame-wise contrast jitter"},
      {"augment.saturation", K::Real, aug.saturation, "frame-wise saturation jitter"},
      {"augment.greyscale_prob", K::Real, aug.greyscale_prob, "frame-wise greyscale probability"},

      {"model.depth", K::String, "tiny", "encoder: tiny, R18 or R34"},
      {"model.input_size", K::Int, tc.model.backbone.input_size, "network input side in pixels"},
      {"model.block_len", K::Int, tc.model.backbone.block_len, "frames per block"},
      {"model.memory_k", K::Int, tc.model.memory_k, "memory slots"},
      {"model.predictor_hidden", K::Int, tc.model.predictor_hidden, "addressing MLP width; 0 uses C"},
      {"model.bidirectional", K::Bool, tc.model.bidirectional, "add the time-reversed prediction stream"},
      {"model.temperature", K::Real, tc.model.temperature, "addressing softmax temperature"},
      {"model.checkpoint", K::String, "", "pretrained checkpoint; empty uses random initialization"},

      {"train.pred_steps", K::Int, tc.pred_steps, "future blocks predicted"},
      {"train.batch_size", K::Int, tc.batch_size, "windows per step"},
      {"train.normalized_critic", K::Bool, tc.normalized_critic, "cosine instead of dot-product critic"},
      {"train.lr", K::Real, tc.lr, "initial Adam learning rate"},
      {"train.lr_decay_factor", K::Real, tc.lr_decay_factor, "learning-rate factor on plateau"},
      {"train.plateau_patience", K::Int, tc.plateau_patience, "validations without improvement before decay"},
      {"train.plateau_threshold", K::Real, tc.plateau_threshold, "relative improvement that resets patience"},
      {"train.weight_decay", K::Real, tc.weight_decay, "L2 penalty"},
      {"train.max_steps", K::Int, tc.max_steps, "optimizer steps"},
      {"train.val_every", K::Int, tc.val_every, "steps between validations"},
      {"train.val_batches", K::Int, tc.val_batches, "batches per validation"},
      {"train.checkpoint_every", K::Int, tc.checkpoint_every, "steps between numbered checkpoints"},
      {"train.deterministic", K::Bool, tc.deterministic, "record wall_ms as 0"},
      {"train.resume", K::String, "", "checkpoint to resume from"},

      {"synthetic.num_classes", K::Int, ss.num_classes, "motion classes"},
      {"synthetic.clips_per_class", K::Int, ss.clips_per_class, "clips per class"},
      {"synthetic.frame_size", K::Int, ss.frame_size, "frame side in pixels"},
      {"synthetic.clip_len", K::Int, ss.clip_len, "frames per clip"},
      {"synthetic.speed", K::Real, ss.speed, "sprite speed in pixels per frame"},
      {"synthetic.noise_std", K::Real, ss.noise_std, "pixel noise"},
      {"synthetic.texture", K::Real, ss.texture, "background texture amplitude"},
      {"synthetic.texture_scale", K::Int, ss.texture_scale, "background texture correlation length"},
      {"synthetic.colour_jitter", K::Real, ss.colour_jitter, "spread of random colours"},
      {"synthetic.sprite_min", K::Int, ss.sprite_min, "smallest sprite side"},
      {"synthetic.sprite_max", K::Int, ss.sprite_max, "largest sprite side"},
      {"synthetic.num_sprites", K::Int, ss.num_sprites, "sprites per clip"},
      {"synthetic.sprite_texture", K::Real, ss.sprite_texture, "texture carried by sprites"},
      {"synthetic.pan", K::Bool, ss.pan, "background moves with the class motion"},
      {"synthetic.train_fraction", K::Real, ss.train_fraction, "train share per class"},
      {"synthetic.write_png", K::Bool, ss.write_png, "write frame images"},
      {"synthetic.write_packed", K::Bool, ss.write_packed, "write one packed array per clip"},
      {"synthetic.write_flow", K::Bool, ss.write_flow, "also write mapped flow clips"},
      {"synthetic.glitch", K::Bool, ss.glitch, "shuffle frames after a per-clip failure frame"},
      {"synthetic.glitch_min", K::Real, ss.glitch_min, "earliest failure frame as a clip fraction"},
      {"synthetic.glitch_max", K::Real, ss.glitch_max, "latest failure frame as a clip fraction"},
      {"synthetic.seed", K::Int, ss.seed, "generator seed"},

      {"probe.mode", K::String, "linear", "linear, nonlinear or finetune"},
      {"probe.dropout", K::Real, pc.dropout, "dropout before the final layer"},
      {"probe.epochs", K::Int, pc.epochs, "classifier epochs"},
      {"probe.batch_size", K::Int, pc.batch_size, "classifier minibatch"},
      {"probe.lr", K::Real, pc.lr, "classifier Adam learning rate"},
      {"probe.lr_decay_factor", K::Real, pc.lr_decay_factor, "factor applied at each decay epoch"},
      {"probe.decay_epochs", K::IntList, json::array(), "epochs at which the rate decays"},
      {"probe.weight_decay", K::Real, pc.weight_decay, "L2 penalty"},
      {"probe.label_fraction", K::Real, pc.label_fraction, "stratified share of train labels"},
      {"probe.standardize", K::Bool, pc.standardize, "z-score frozen features with train statistics"},
      {"probe.fractions", K::RealList, json::array(), "non-empty: run the data-efficiency sweep"},
      {"probe.seeds", K::IntList, json::array({0}), "sweep seeds"},

      {"retrieve.ks", K::IntList, json::array({1, 5, 10, 20}), "recall cut-offs, ascending"},
      {"retrieve.queries", K::String, "", "query embedding CSV; empty extracts the test split"},
      {"retrieve.gallery", K::String, "", "gallery embedding CSV; empty extracts the train split"},

      {"unintentional.mode", K::String, "freeze", "freeze or finetune"},
      {"unintentional.steps", K::Int, uc.steps, "balanced minibatches"},
      {"unintentional.batch_size", K::Int, uc.batch_size, "items per minibatch"},
      {"unintentional.lr", K::Real, uc.lr, "Adam learning rate"},
      {"unintentional.weight_decay", K::Real, uc.weight_decay, "L2 penalty"},
      {"unintentional.standardize", K::Bool, uc.standardize, "z-score frozen inputs"},

      {"export.split", K::String, "train", "clips used for neighbours and addressing"},
  };
}

const std::map<std::string, json>& profiles() {
  static const std::map<std::string, json> p = {
      {"paper_ucf_r18",
       {{"model.depth", "R18"},
        {"model.input_size", 128},
        {"model.block_len", 5},
        {"model.memory_k", 1024},
        {"data.num_blocks", 8},
        {"data.sampling_stride", 3},
        {"augment.crop_size", 224},
        {"augment.output_size", 128},
        {"augment.flip_prob", 0.5},
        {"augment.brightness", 0.5},
        {"augment.contrast", 0.5},
        {"augment.saturation", 0.5},
        {"augment.greyscale_prob", 0.2},
        {"train.batch_size", 16},
        {"train.lr", 1e-3},
        {"train.lr_decay_factor", 0.1},
        {"probe.dropout", 0.9},
        {"probe.lr", 1e-3},
        {"probe.lr_decay_factor", 0.1},
        {"unintentional.lr", 1e-3}}},
      {"desk_tiny",
       {{"model.depth", "tiny"},
        {"model.input_size", 32},
        {"model.block_len", 5},
        {"model.memory_k", 64},
        {"data.num_blocks", 8},
        {"data.sampling_stride", 1},
        {"train.batch_size", 8},
        {"train.max_steps", 1200},
        {"train.pred_steps", 1},
        {"synthetic.frame_size", 32},
        {"synthetic.clip_len", 48},
        {"synthetic.texture", 0.0},
        {"synthetic.colour_jitter", 0.0},
        {"synthetic.sprite_min", 9},
        {"synthetic.sprite_max", 12},
        {"probe.dropout", 0.0},
        {"probe.epochs", 300},
        {"probe.lr", 1e-2}}},
  };
  return p;
}

[[noreturn]] void bad_value(const KeyDef& key, const std::string& text) {
  fail(ErrorKind::ConfigError, "key '" + key.name + "' expects " + to_string(key.type) + ", got '" + text + "'");
}

template <typename T>
T parse_number(const KeyDef& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) bad_value(key, text);
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = text.find(',', pos);
    out.push_back(text.substr(pos, comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

const json& at(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) fail(ErrorKind::Internal, "resolved config lacks '" + key + "'");
  return cfg.at(key);
}

int get_int(const json& cfg, const std::string& key) { return at(cfg, key).get<int>(); }
double get_real(const json& cfg, const std::string& key) { return at(cfg, key).get<double>(); }
bool get_bool(const json& cfg, const std::string& key) { return at(cfg, key).get<bool>(); }
std::string get_str(const json& cfg, const std::string& key) { return at(cfg, key).get<std::string>(); }

std::uint64_t get_seed(const json& cfg, const std::string& key) {
  const auto v = at(cfg, key).get<std::int64_t>();
  if (v < 0) fail(ErrorKind::ConfigError, "key '" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

template <typename F>
auto config_error(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ConfigError) throw;
    fail(ErrorKind::ConfigError, e.what());
  }
}

}  // namespace

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> r = build_registry();
  return r;
}

const KeyDef* find_key(const std::string& name) {
  for (const auto& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

json defaults() {
  json out = json::object();
  for (const auto& k : registry()) out[k.name] = k.default_value;
  return out;
}

std::vector<std::string> profile_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : profiles()) out.push_back(name);
  return out;
}

json profile(const std::string& name) {
  const auto it = profiles().find(name);
  if (it == profiles().end()) {
    std::string known;
    for (const auto& n : profile_names()) known += (known.empty() ? "" : ", ") + n;
    fail(ErrorKind::ConfigError, "unknown profile '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

json parse_value(const KeyDef& key, const std::string& text) {
  switch (key.type) {
    case K::Int: return parse_number<std::int64_t>(key, text);
    case K::Real: return parse_number<double>(key, text);
    case K::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      bad_value(key, text);
    case K::String: return text;
    case K::IntList: {
      json out = json::array();
      for (const auto& part : split_list(text)) out.push_back(parse_number<std::int64_t>(key, part));
      return out;
    }
    case K::RealList: {
      json out = json::array();
      for (const auto& part : split_list(text)) out.push_back(parse_number<double>(key, part));
      return out;
    }
  }
  bad_value(key, text);
}

json coerce(const KeyDef& key, const json& v) {
  const auto bad = [&] { bad_value(key, v.dump()); };
  switch (key.type) {
    case K::Int:
      if (!v.is_number_integer()) bad();
      return v;
    case K::Real:
      if (!v.is_number()) bad();
      return v.get<double>();
    case K::Bool:
      if (!v.is_boolean()) bad();
      return v;
    case K::String:
      if (!v.is_string()) bad();
      return v;
    case K::IntList:
      if (!v.is_array()) bad();
      for (const auto& x : v)
        if (!x.is_number_integer()) bad();
      return v;
    case K::RealList: {
      if (!v.is_array()) bad();
      json out = json::array();
      for (const auto& x : v) {
        if (!x.is_number()) bad();
        out.push_back(x.get<double>());
      }
      return out;
    }
  }
  bad();
  return v;
}

void merge(json& into, const json& overrides, const std::string& origin) {
  if (!overrides.is_object()) fail(ErrorKind::ConfigError, origin + " must be a flat JSON object");
  for (const auto& [name, value] : overrides.items()) {
    const KeyDef* key = find_key(name);
    if (!key) fail(ErrorKind::ConfigError, "unknown config key '" + name + "' in " + origin);
    into[name] = coerce(*key, value);
  }
}

json resolve(const std::optional<std::string>& profile_name, const std::optional<std::string>& config_file,
             const std::vector<std::pair<std::string, std::string>>& flags) {
  json cfg = defaults();
  if (profile_name) merge(cfg, profile(*profile_name), "profile " + *profile_name);
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) fail(ErrorKind::ConfigError, "cannot read config file " + *config_file);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::ConfigError, "config file " + *config_file + " is not valid JSON: " + e.what());
    }
    merge(cfg, file, *config_file);
  }
  for (const auto& [name, text] : flags) {
    const KeyDef* key = find_key(name);
    if (!key) fail(ErrorKind::ConfigError, "unknown config key '" + name + "'");
    cfg[name] = parse_value(*key, text);
  }
  return cfg;
}

training::TrainConfig train_config(const json& cfg) {
  return config_error([&] {
    training::TrainConfig c;
    c.modality = videodata::parse_modality(get_str(cfg, "data.modality"));
    c.model.backbone = backbone::BackboneConfig::make(backbone::parse_depth(get_str(cfg, "model.depth")),
                                                      get_int(cfg, "model.input_size"),
                                                      get_int(cfg, "model.block_len"));
    c.model.memory_k = get_int(cfg, "model.memory_k");
    c.model.predictor_hidden = get_int(cfg, "model.predictor_hidden");
    c.model.bidirectional = get_bool(cfg, "model.bidirectional");
    c.model.temperature = get_real(cfg, "model.temperature");

    c.data.num_blocks = get_int(cfg, "data.num_blocks");
    c.data.sampling_stride = get_int(cfg, "data.sampling_stride");
    c.data.loop_pad = get_bool(cfg, "data.loop_pad");
    c.data.frame_pattern = get_str(cfg, "data.frame_pattern");
    auto& a = c.data.augment;
    a.crop_size = get_int(cfg, "augment.crop_size");
    a.random_crop = get_bool(cfg, "augment.random_crop");
    a.output_size = get_int(cfg, "augment.output_size");
    a.flip_prob = get_real(cfg, "augment.flip_prob");
    a.brightness = get_real(cfg, "augment.brightness");
    a.contrast = get_real(cfg, "augment.contrast");
    a.saturation = get_real(cfg, "augment.saturation");
    a.greyscale_prob = get_real(cfg, "augment.greyscale_prob");

    c.pred_steps = get_int(cfg, "train.pred_steps");
    c.batch_size = get_int(cfg, "train.batch_size");
    c.normalized_critic = get_bool(cfg, "train.normalized_critic");
    c.lr = get_real(cfg, "train.lr");
    c.lr_decay_factor = get_real(cfg, "train.lr_decay_factor");
    c.plateau_patience = get_int(cfg, "train.plateau_patience");
    c.plateau_threshold = get_real(cfg, "train.plateau_threshold");
    c.weight_decay = get_real(cfg, "train.weight_decay");
    c.max_steps = get_int(cfg, "train.max_steps");
    c.val_every = get_int(cfg, "train.val_every");
    c.val_batches = get_int(cfg, "train.val_batches");
    c.checkpoint_every = get_int(cfg, "train.checkpoint_every");
    c.deterministic = get_bool(cfg, "train.deterministic");
    c.seed = get_seed(cfg, "seed");
    c.validate();
    return c;
  });
}

videodata::SyntheticSpec synthetic_spec(const json& cfg) {
  return config_error([&] {
    videodata::SyntheticSpec s;
    s.num_classes = get_int(cfg, "synthetic.num_classes");
    s.clips_per_class = get_int(cfg, "synthetic.clips_per_class");
    s.frame_size = get_int(cfg, "synthetic.frame_size");
    s.clip_len = get_int(cfg, "synthetic.clip_len");
    s.speed = get_real(cfg, "synthetic.speed");
    s.noise_std = get_real(cfg, "synthetic.noise_std");
    s.texture = get_real(cfg, "synthetic.texture");
    s.texture_scale = get_int(cfg, "synthetic.texture_scale");
    s.colour_jitter = get_real(cfg, "synthetic.colour_jitter");
    s.sprite_min = get_int(cfg, "synthetic.sprite_min");
    s.sprite_max = get_int(cfg, "synthetic.sprite_max");
    s.num_sprites = get_int(cfg, "synthetic.num_sprites");
    s.sprite_texture = get_real(cfg, "synthetic.sprite_texture");
    s.pan = get_bool(cfg, "synthetic.pan");
    s.train_fraction = get_real(cfg, "synthetic.train_fraction");
    s.write_png = get_bool(cfg, "synthetic.write_png");
    s.write_packed = get_bool(cfg, "synthetic.write_packed");
    s.write_flow = get_bool(cfg, "synthetic.write_flow");
    s.glitch = get_bool(cfg, "synthetic.glitch");
    s.glitch_min = get_real(cfg, "synthetic.glitch_min");
    s.glitch_max = get_real(cfg, "synthetic.glitch_max");
    s.seed = get_seed(cfg, "synthetic.seed");
    s.frame_pattern = get_str(cfg, "data.frame_pattern");
    s.validate();
    return s;
  });
}

evaluation::ProbeConfig probe_config(const json& cfg) {
  return config_error([&] {
    evaluation::ProbeConfig p;
    p.mode = evaluation::parse_probe_mode(get_str(cfg, "probe.mode"));
    p.dropout = get_real(cfg, "probe.dropout");
    p.epochs = get_int(cfg, "probe.epochs");
    p.batch_size = get_int(cfg, "probe.batch_size");
    p.lr = get_real(cfg, "probe.lr");
    p.lr_decay_factor = get_real(cfg, "probe.lr_decay_factor");
    p.decay_epochs = at(cfg, "probe.decay_epochs").get<std::vector<int>>();
    p.weight_decay = get_real(cfg, "probe.weight_decay");
    p.label_fraction = get_real(cfg, "probe.label_fraction");
    p.standardize = get_bool(cfg, "probe.standardize");
    p.seed = get_seed(cfg, "seed");
    p.validate();
    return p;
  });
}

evaluation::UnintentionalConfig unintentional_config(const json& cfg) {
  return config_error([&] {
    evaluation::UnintentionalConfig u;
    const auto mode = get_str(cfg, "unintentional.mode");
    if (mode != "freeze" && mode != "finetune") {
      fail(ErrorKind::ConfigError, "unintentional.mode must be freeze or finetune, got '" + mode + "'");
    }
    u.finetune = mode == "finetune";
    u.steps = get_int(cfg, "unintentional.steps");
    u.batch_size = get_int(cfg, "unintentional.batch_size");
    u.lr = get_real(cfg, "unintentional.lr");
    u.weight_decay = get_real(cfg, "unintentional.weight_decay");
    u.standardize = get_bool(cfg, "unintentional.standardize");
    u.seed = get_seed(cfg, "seed");
    u.validate();
    return u;
  });
}

}  // namespace memdpc::cli
