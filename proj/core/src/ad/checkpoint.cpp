#include "iqt/ad/checkpoint.hpp"

#include <fstream>

#include "../binary_io.hpp"
#include "iqt/error.hpp"

namespace iqt::ad {

namespace {
constexpr const char* kMagic = "IQTC1";
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& params = ckpt.params;
  const auto& adam = ckpt.adam;
  if (adam.m.size() != params.size() || adam.v.size() != params.size()) {
    throw ShapeError("write_checkpoint: optimizer moments do not match parameters");
  }
  nlohmann::json manifest;
  manifest["magic"] = kMagic;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& p : params) layers.push_back({{"name", p.name}, {"shape", p.value.shape}});
  manifest["layers"] = std::move(layers);
  manifest["optimizer"] = {{"type", "adam"},
                           {"learning_rate", adam.learning_rate},
                           {"beta1", adam.beta1},
                           {"beta2", adam.beta2},
                           {"epsilon", adam.epsilon},
                           {"step", adam.step}};
  manifest["extra"] = ckpt.extra;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string line = manifest.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (const auto& p : params) detail::write_f32_le(out, p.value.data);
  for (const auto& m : adam.m) detail::write_f32_le(out, m);
  for (const auto& v : adam.v) detail::write_f32_le(out, v);
  out.flush();
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest", "missing checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest", e.what());
  }
  if (manifest.value("magic", "") != kMagic) throw FormatError("magic", "expected \"IQTC1\"");
  if (!manifest.contains("layers") || !manifest["layers"].is_array()) throw FormatError("layers", "missing layer list");
  if (!manifest.contains("optimizer")) throw FormatError("optimizer", "missing optimizer block");

  Checkpoint ck;
  try {
    for (const auto& layer : manifest["layers"]) {
      Shape shape = layer.at("shape").get<Shape>();
      ck.params.push_back(Parameter{layer.at("name").get<std::string>(), Tensor(shape)});
    }
    const auto& opt = manifest["optimizer"];
    ck.adam.learning_rate = opt.at("learning_rate").get<double>();
    ck.adam.beta1 = opt.at("beta1").get<double>();
    ck.adam.beta2 = opt.at("beta2").get<double>();
    ck.adam.epsilon = opt.at("epsilon").get<double>();
    ck.adam.step = opt.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("layers", e.what());
  }
  ck.extra = manifest.value("extra", nlohmann::json::object());

  for (auto& p : ck.params) detail::read_f32_le(in, p.value.data, "checkpoint parameters");
  for (const auto& p : ck.params) {
    ck.adam.m.emplace_back(p.value.size());
    detail::read_f32_le(in, ck.adam.m.back(), "checkpoint first moments");
  }
  for (const auto& p : ck.params) {
    ck.adam.v.emplace_back(p.value.size());
    detail::read_f32_le(in, ck.adam.v.back(), "checkpoint second moments");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw TruncationError("checkpoint '" + path.string() + "' has trailing bytes");
  }
  return ck;
}

}  // namespace iqt::ad
