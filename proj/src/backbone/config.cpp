#include "memdpc/backbone/config.hpp"

#include "memdpc/core/error.hpp"

namespace memdpc::backbone {

std::string to_string(EncoderDepth depth) {
  switch (depth) {
    case EncoderDepth::R18: return "R18";
    case EncoderDepth::R34: return "R34";
    case EncoderDepth::Tiny: return "tiny";
  }
  return "tiny";
}

EncoderDepth parse_depth(const std::string& name) {
  if (name == "R18" || name == "r18") return EncoderDepth::R18;
  if (name == "R34" || name == "r34") return EncoderDepth::R34;
  if (name == "tiny") return EncoderDepth::Tiny;
  fail(ErrorKind::ConfigError, "unknown encoder depth '" + name + "' (expected R18, R34, tiny)");
}

BackboneConfig BackboneConfig::make(EncoderDepth depth, int input_size, int block_len) {
  BackboneConfig c;
  c.depth = depth;
  c.block_len = block_len;
  if (depth == EncoderDepth::Tiny) {
    c.input_size = input_size > 0 ? input_size : 32;
    c.stem_channels = 16;
    c.stem_kernel = 5;
    c.stages = {{16, 1, 1, 1, 1}, {16, 1, 3, 2, 2}};
    return c;
  }
  c.input_size = input_size > 0 ? input_size : 128;
  c.stem_channels = 64;
  c.stem_kernel = 7;
  const bool r34 = depth == EncoderDepth::R34;
  c.stages = {
      {64, r34 ? 3 : 2, 1, 1, 1},
      {128, r34 ? 4 : 2, 1, 1, 2},
      {256, r34 ? 6 : 2, 3, 2, 2},
      {256, r34 ? 3 : 2, 3, 2, 2},
  };
  return c;
}

namespace {
int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }
}  // namespace

int BackboneConfig::feature_size() const {
  int s = conv_out(input_size, stem_kernel, stem_stride, stem_kernel / 2);
  if (stem_pool) s = conv_out(s, 3, 2, 1);
  for (const auto& st : stages) s = conv_out(s, 3, st.spatial_stride, 1);
  return s;
}

void BackboneConfig::validate() const {
  if (input_size <= 0 || block_len <= 0 || input_channels <= 0) {
    fail(ErrorKind::ConfigError, "backbone sizes must be positive");
  }
  if (stem_kernel % 2 == 0) fail(ErrorKind::ConfigError, "stem kernel must be odd");
  for (const auto& st : stages) {
    if (st.channels <= 0 || st.depth <= 0 || st.temporal_kernel % 2 == 0 || st.temporal_stride <= 0 ||
        st.spatial_stride <= 0) {
      fail(ErrorKind::ConfigError, "invalid stage specification");
    }
  }
  if (feature_size() <= 0) fail(ErrorKind::ConfigError, "input too small for the encoder");
}

nlohmann::json BackboneConfig::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages) {
    stages_json.push_back({{"channels", s.channels},
                           {"depth", s.depth},
                           {"temporal_kernel", s.temporal_kernel},
                           {"temporal_stride", s.temporal_stride},
                           {"spatial_stride", s.spatial_stride}});
  }
  return {{"depth", to_string(depth)},     {"input_size", input_size},
          {"block_len", block_len},        {"input_channels", input_channels},
          {"stem_channels", stem_channels}, {"stem_kernel", stem_kernel},
          {"stem_stride", stem_stride},    {"stem_pool", stem_pool},
          {"stages", stages_json},         {"batch_norm", batch_norm}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  try {
    BackboneConfig c;
    c.depth = parse_depth(j.at("depth").get<std::string>());
    c.input_size = j.at("input_size").get<int>();
    c.block_len = j.at("block_len").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stem_kernel = j.at("stem_kernel").get<int>();
    c.stem_stride = j.at("stem_stride").get<int>();
    c.stem_pool = j.at("stem_pool").get<bool>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("channels").get<int>(), s.at("depth").get<int>(),
                          s.at("temporal_kernel").get<int>(), s.at("temporal_stride").get<int>(),
                          s.at("spatial_stride").get<int>()});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("malformed backbone config: ") + e.what());
  }
}

}  // namespace memdpc::backbone
