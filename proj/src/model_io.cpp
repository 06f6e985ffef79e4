#include "binio.hpp"
#include "rigsynth/error.hpp"
#include "rigsynth/model.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace rigsynth {

using nlohmann::json;

namespace {

constexpr char kWeightMagic[4] = {'E', 'M', 'O', 'W'};
constexpr std::uint32_t kWeightVersion = 1;

json config_json(const ModelConfig& c) {
  return json{{"feature_dim", c.feature_dim},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"d_ff", c.d_ff},
              {"layers", c.layers},
              {"dropout", c.dropout},
              {"leaky_slope", c.leaky_slope},
              {"output_dim", c.output_dim},
              {"positional_encoding", c.positional_encoding},
              {"feature_family", c.feature_family}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.layers = j.value("layers", c.layers);
  c.dropout = j.value("dropout", c.dropout);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.output_dim = j.value("output_dim", c.output_dim);
  c.positional_encoding = j.value("positional_encoding", c.positional_encoding);
  c.feature_family = j.value("feature_family", c.feature_family);
  c.validate();
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json(std::string_view text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("model config: ") + ex.what());
  }
}

void save_model(const std::filesystem::path& path, const Audio2RigModel& model) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  const auto list = tensors(model.params);
  for (const auto& t : list) {
    manifest.push_back({{"name", t.name},
                        {"shape", {t.value->rows(), t.value->cols()}},
                        {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value->size()) * sizeof(float);
  }
  json header{{"config", config_json(model.config)},
              {"feature_family", model.config.feature_family},
              {"feature_dim", model.config.feature_dim},
              {"dtype", "f32"},
              {"layout", "row-major"},
              {"tensors", std::move(manifest)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kWeightMagic, 4);
  binio::put(out, kWeightVersion);
  binio::put(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : list) {
    const Eigen::MatrixXd& m = *t.value;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) binio::put(out, static_cast<float>(m(r, c)));
    }
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Audio2RigModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open weight file " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kWeightMagic)) {
    throw Error(ErrorCode::BadMagic, path.string() + " is not an EMOW weight file");
  }
  std::uint32_t version = 0, header_len = 0;
  if (!binio::get(in, version) || !binio::get(in, header_len)) {
    throw Error(ErrorCode::Truncated, path.string() + ": truncated header");
  }
  if (version != kWeightVersion) {
    throw Error(ErrorCode::BadMagic, path.string() + ": unsupported weight version " +
                                         std::to_string(version));
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), header_len)) {
    throw Error(ErrorCode::Truncated, path.string() + ": truncated manifest");
  }
  json header;
  ModelConfig cfg;
  try {
    header = json::parse(text);
    cfg = config_from(header.at("config"));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
  // Shapes come from the config; the manifest must agree with them.
  Audio2RigModel model = zero_model(cfg);
  auto list = tensors(model.params);
  const auto& manifest = header.at("tensors");
  if (manifest.size() != list.size()) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": manifest lists " +
                                              std::to_string(manifest.size()) + " tensors, expected " +
                                              std::to_string(list.size()));
  }
  const std::streamoff payload_start = in.tellg();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& entry = manifest[i];
    Eigen::MatrixXd& m = *list[i].value;
    if (entry.at("name").get<std::string>() != list[i].name ||
        entry.at("shape")[0].get<Eigen::Index>() != m.rows() ||
        entry.at("shape")[1].get<Eigen::Index>() != m.cols()) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": tensor " + list[i].name +
                                                " does not match the manifest");
    }
    in.seekg(payload_start + entry.at("offset").get<std::streamoff>());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        float v;
        if (!binio::get(in, v)) throw Error(ErrorCode::Truncated, path.string() + ": short payload");
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::NonFinite, path.string() + ": non-finite weight in " + list[i].name);
        }
        m(r, c) = v;
      }
    }
  }
  return model;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rigsynth
