#include "dtvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtvae/errors.hpp"

namespace dtvae {
namespace {

using nlohmann::json;

json config_to_json(const TrainConfig& c) {
  return json{{"input", c.model.input},   {"hidden", c.model.hidden}, {"latent", c.model.latent},
              {"rank", c.model.rank},     {"epsilon", c.model.epsilon}, {"batch", c.batch},
              {"epochs", c.epochs},       {"lr", c.lr},               {"seed", c.seed},
              {"eval_samples", c.eval_samples}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.model.input = j.at("input").get<Index>();
  c.model.hidden = j.at("hidden").get<Index>();
  c.model.latent = j.at("latent").get<Index>();
  c.model.rank = j.at("rank").get<Index>();
  c.model.epsilon = j.at("epsilon").get<double>();
  c.batch = j.at("batch").get<Index>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_samples = j.at("eval_samples").get<Index>();
  return c;
}

void put_double(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_double(const std::string& in, std::size_t& pos) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]);
  }
  pos += 8;
  return std::bit_cast<double>(bits);
}

template <typename Fn>
void for_each_block(const ModelParams& p, Fn&& fn) {
  const auto layers = p.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    fn(std::string(kLayerNames[i]) + ".w", layers[i]->w.rows(), layers[i]->w.cols());
    fn(std::string(kLayerNames[i]) + ".b", layers[i]->b.rows(), Index{1});
  }
}

void write_section(std::string& out, const ModelParams& p) {
  for (const DenseLayer* l : p.layers()) {
    for (Index i = 0; i < l->w.size(); ++i) put_double(out, l->w.data()[i]);
    for (Index i = 0; i < l->b.size(); ++i) put_double(out, l->b.data()[i]);
  }
}

void read_section(const std::string& in, std::size_t& pos, ModelParams& p) {
  for (DenseLayer* l : p.layers()) {
    for (Index i = 0; i < l->w.size(); ++i) l->w.data()[i] = get_double(in, pos);
    for (Index i = 0; i < l->b.size(); ++i) l->b.data()[i] = get_double(in, pos);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["version"] = kCheckpointVersion;
  header["config"] = config_to_json(ckpt.config);
  header["epoch"] = ckpt.state.epoch;
  header["adam_step"] = ckpt.state.adam.step;
  header["byte_order"] = "little";
  header["layout"] = "column-major";
  header["sections"] = {"params", "adam_m", "adam_v"};
  json blocks = json::array();
  for_each_block(ckpt.state.params, [&](const std::string& name, Index rows, Index cols) {
    blocks.push_back(json{{"name", name}, {"rows", rows}, {"cols", cols}});
  });
  header["blocks"] = blocks;

  std::string out = std::string(kCheckpointVersion) + "\n" + header.dump() + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(ckpt.state.params.size()) * 24);
  write_section(out, ckpt.state.params);
  write_section(out, ckpt.state.adam.m);
  write_section(out, ckpt.state.adam.v);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::stringstream buffer;
  buffer << f.rdbuf();
  const std::string in = buffer.str();

  const auto first = in.find('\n');
  if (first == std::string::npos || in.compare(0, first, kCheckpointVersion) != 0) {
    throw FormatError("checkpoint: version mismatch, expected " + std::string(kCheckpointVersion), 0);
  }
  const auto second = in.find('\n', first + 1);
  if (second == std::string::npos) throw FormatError("checkpoint: missing header", first + 1);

  Checkpoint ckpt;
  json header;
  try {
    header = json::parse(in.substr(first + 1, second - first - 1));
    ckpt.config = config_from_json(header.at("config"));
    ckpt.state.epoch = header.at("epoch").get<int>();
    ckpt.state.adam.step = header.at("adam_step").get<std::int64_t>();
    if (header.at("byte_order") != "little" || header.at("layout") != "column-major") {
      throw FormatError("checkpoint: unsupported byte order or layout", first + 1);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what(), first + 1);
  }
  ckpt.config.validate();
  ckpt.state.params = ModelParams::zeros(ckpt.config.model);
  ckpt.state.adam.m = ModelParams::zeros(ckpt.config.model);
  ckpt.state.adam.v = ModelParams::zeros(ckpt.config.model);

  std::size_t pos = second + 1;
  const std::size_t expected = static_cast<std::size_t>(ckpt.state.params.size()) * 3 * 8;
  if (in.size() - pos != expected) {
    throw FormatError("checkpoint: payload holds " + std::to_string(in.size() - pos) +
                          " bytes, config implies " + std::to_string(expected),
                      pos);
  }
  read_section(in, pos, ckpt.state.params);
  read_section(in, pos, ckpt.state.adam.m);
  read_section(in, pos, ckpt.state.adam.v);
  return ckpt;
}

}  // namespace dtvae
