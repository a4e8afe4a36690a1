#include "mmalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mmalign {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'A', 'L', 'I', 'G', 'N', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(value);
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('/')); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string variant_name(ResidualVariant v) {
  return v == ResidualVariant::kAsPrinted ? "as_printed" : "standard_postln";
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"d_in1", c.d_in1},
      {"d_in2", c.d_in2},
      {"d_model", c.d_model},
      {"num_heads", c.num_heads},
      {"d_ff", c.d_ff},
      {"encoder_layers", c.encoder_layers},
      {"fusion_layers", c.fusion_layers},
      {"head_hidden", c.head_hidden},
      {"max_len", c.max_len},
      {"window", c.window},
      {"task", to_string(c.task)},
      {"num_classes", c.num_classes},
      {"residual", variant_name(c.variant)},
      {"positional", c.positional},
      {"renormalize_columns", c.renormalize_columns},
      {"fusion_positional", c.fusion_positional},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.d_in1 = j.at("d_in1").get<Index>();
    c.d_in2 = j.at("d_in2").get<Index>();
    c.d_model = j.at("d_model").get<Index>();
    c.num_heads = j.at("num_heads").get<Index>();
    c.d_ff = j.at("d_ff").get<Index>();
    c.encoder_layers = j.at("encoder_layers").get<Index>();
    c.fusion_layers = j.at("fusion_layers").get<Index>();
    c.head_hidden = j.at("head_hidden").get<Index>();
    c.max_len = j.at("max_len").get<Index>();
    c.window = j.at("window").get<Index>();
    c.task = j.at("task").get<std::string>() == "classification" ? Task::kClassification
                                                                 : Task::kRegression;
    c.num_classes = j.at("num_classes").get<Index>();
    c.variant = j.at("residual").get<std::string>() == "standard_postln"
                    ? ResidualVariant::kStandardPostLN
                    : ResidualVariant::kAsPrinted;
    c.positional = j.at("positional").get<bool>();
    c.renormalize_columns = j.at("renormalize_columns").get<bool>();
    c.fusion_positional = j.at("fusion_positional").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, ModelParams& model, std::uint64_t seed,
                     const nlohmann::json& hyperparameters) {
  const ParamList params = model.all();
  nlohmann::json blocks = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    blocks.push_back({{"name", p.name},
                      {"group", group_of(p.name)},
                      {"rows", p.param->value.rows()},
                      {"cols", p.param->value.cols()},
                      {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.param->value.size());
  }
  nlohmann::json manifest = {
      {"format", "mmalign-checkpoint"},
      {"version", kCheckpointVersion},
      {"seed", seed},
      {"model_config", to_json(model.config)},
      {"hyperparameters", hyperparameters},
      {"blocks", blocks},
  };
  const std::string manifest_text = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, manifest_text.size());
  out += manifest_text;
  for (const auto& p : params) {
    const Matrix& v = p.param->value;
    for (Index i = 0; i < v.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v.data()[i]));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes, pos);
  if (pos + manifest_len > bytes.size()) throw DataError("checkpoint manifest truncated");

  LoadedCheckpoint loaded;
  try {
    loaded.manifest = nlohmann::json::parse(bytes.substr(pos, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }
  pos += manifest_len;
  const std::size_t data_start = pos;

  loaded.seed = loaded.manifest.at("seed").get<std::uint64_t>();
  loaded.hyperparameters = loaded.manifest.value("hyperparameters", nlohmann::json::object());
  loaded.model = ModelParams(model_config_from_json(loaded.manifest.at("model_config")), loaded.seed);

  const ParamList params = loaded.model.all();
  const auto& blocks = loaded.manifest.at("blocks");
  if (blocks.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(blocks.size()) + " blocks, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto& block = blocks[b];
    Matrix& v = params[b].param->value;
    if (block.at("name").get<std::string>() != params[b].name ||
        block.at("rows").get<Index>() != v.rows() || block.at("cols").get<Index>() != v.cols()) {
      throw DataError("checkpoint block " + block.at("name").get<std::string>() +
                      " does not match parameter " + params[b].name);
    }
    std::size_t at = data_start + 8 * block.at("offset").get<std::size_t>();
    for (Index i = 0; i < v.size(); ++i) {
      v.data()[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, at));
    }
  }
  return loaded;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

namespace {
std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}
}  // namespace

std::string fnv1a_hex(std::string_view bytes) { return hex64(fnv1a(bytes)); }

std::string file_digest(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

std::string params_digest(const ParamList& params) {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const Matrix& v = p.param->value;
    state = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()),
                                   static_cast<std::size_t>(v.size()) * sizeof(double)),
                  state);
  }
  return hex64(state);
}

}  // namespace mmalign
