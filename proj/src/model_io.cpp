#include <fstream>
#include <iterator>

#include "adsnn/model.hpp"
#include "adsnn/serialize.hpp"

namespace adsnn {
namespace {

constexpr std::string_view kModelMagic = "ADSNmdl";
constexpr std::uint8_t kModelFormatVersion = 1;
constexpr std::size_t kDigestSize = 32;

}  // namespace

// Layout: magic, version byte, u32 config length, config JSON, u32 tensor
// count, tensors in Model::state() order, SHA-256 of everything before it.
void save_model(const Model& model, const std::filesystem::path& path) {
  if (!model.config()) throw std::invalid_argument("only models built from a ModelConfig can be saved");
  std::string bytes;
  bytes.append(kModelMagic);
  bytes.push_back(static_cast<char>(kModelFormatVersion));
  const std::string config = model.config()->canonical_text();
  append_u32(bytes, static_cast<std::uint32_t>(config.size()));
  bytes.append(config);
  auto& mutable_model = const_cast<Model&>(model);
  const auto state = mutable_model.state();
  append_u32(bytes, static_cast<std::uint32_t>(state.size()));
  for (const auto* t : state) append_tensor(bytes, *t);
  bytes.append(sha256_raw(bytes));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string_view view(bytes);

  if (view.size() < kModelMagic.size() + 1 + kDigestSize) throw FormatError(path.string() + ": not a model file (too short)");
  if (view.substr(0, kModelMagic.size()) != kModelMagic) throw FormatError(path.string() + ": bad model magic");
  const auto version = static_cast<std::uint8_t>(view[kModelMagic.size()]);
  if (version != kModelFormatVersion) {
    throw FormatError(path.string() + ": unsupported model format version " + std::to_string(version));
  }
  const std::string_view body = view.substr(0, view.size() - kDigestSize);
  if (sha256_raw(body) != view.substr(view.size() - kDigestSize)) {
    throw FormatError(path.string() + ": checksum mismatch (file corrupted or truncated)");
  }

  std::size_t offset = kModelMagic.size() + 1;
  const std::uint32_t config_len = parse_u32(body, offset);
  if (body.size() - offset < config_len) throw FormatError(path.string() + ": truncated config");
  ModelConfig config;
  try {
    config = ModelConfig::from_json(nlohmann::json::parse(body.substr(offset, config_len)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid embedded config: " + e.what());
  }
  offset += config_len;

  Model model = build_adsnn(config);
  auto state = model.state();
  const std::uint32_t count = parse_u32(body, offset);
  if (count != state.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(state.size()) + " tensors, file has " +
                      std::to_string(count));
  }
  for (auto* target : state) {
    Tensor<float> t = parse_tensor(body, offset);
    if (t.shape() != target->shape()) {
      throw FormatError(path.string() + ": tensor shape " + shape_string(t.shape()) + " does not match " +
                        shape_string(target->shape()));
    }
    *target = std::move(t);
  }
  if (offset != body.size()) throw FormatError(path.string() + ": trailing bytes after tensors");
  return model;
}

}  // namespace adsnn
