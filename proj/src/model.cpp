#include "lda/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "lda/error.hpp"
#include "lda/rng.hpp"
#include "json.hpp"

namespace lda {

namespace {

constexpr char kMagic[4] = {'L', 'D', 'A', '1'};
constexpr std::uint32_t kVersion = 1;

constexpr std::uint64_t kEncoderStream = 0x10;
constexpr std::uint64_t kFirstHeadStream = 0x20;
constexpr std::uint64_t kBalancedHeadStream = 0x21;
constexpr std::uint64_t kProjectionStream = 0x22;

AffineLayer init_affine(std::size_t fan_in, std::size_t fan_out,
                        std::uint64_t stream_seed) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(stream_seed);
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.next_uniform(-bound, bound);
  AffineLayer layer;
  layer.weight = Tensor::param({fan_in, fan_out}, std::move(w));
  layer.bias = Tensor::param({fan_out}, std::vector<double>(fan_out, 0.0));
  return layer;
}

Tensor apply_affine(const AffineLayer& layer, const Tensor& x) {
  return add(matmul(x, layer.weight), layer.bias);
}

void validate_dims(const ModelDims& dims) {
  if (dims.input < 1 || dims.rep < 1 || dims.classes < 2 || dims.proj < 1) {
    throw ConfigError("model dims: input/rep/proj must be >= 1 and classes >= 2");
  }
  for (std::size_t h : dims.hidden) {
    if (h < 1) throw ConfigError("model dims: hidden width < 1");
  }
  if (dims.proj < dims.rep) {
    throw ConfigError("model dims: proj dim " + std::to_string(dims.proj) +
                      " must be >= rep dim " + std::to_string(dims.rep));
  }
}

}  // namespace

LdaModel LdaModel::init(ModelKind kind, ModelDims dims, std::uint64_t seed) {
  if (dims.proj == 0) dims.proj = 2 * dims.rep;
  validate_dims(dims);
  LdaModel model;
  model.kind_ = kind;
  model.dims_ = dims;

  std::size_t in = dims.input;
  std::size_t layer_index = 0;
  for (std::size_t width : dims.hidden) {
    model.encoder_.push_back(
        init_affine(in, width, mix_seed({seed, kEncoderStream, layer_index++})));
    in = width;
  }
  model.encoder_.push_back(
      init_affine(in, dims.rep, mix_seed({seed, kEncoderStream, layer_index})));

  if (kind == ModelKind::baseline) {
    model.head_balanced_ =
        init_affine(dims.rep, dims.classes, mix_seed({seed, kFirstHeadStream}));
  } else {
    model.head_unbalanced_ =
        init_affine(dims.rep, dims.classes, mix_seed({seed, kFirstHeadStream}));
    model.head_balanced_ = init_affine(dims.rep, dims.classes,
                                       mix_seed({seed, kBalancedHeadStream}));
    model.projection_ =
        init_affine(dims.rep, dims.proj, mix_seed({seed, kProjectionStream}));
  }
  return model;
}

namespace {

Tensor encode(const std::vector<AffineLayer>& encoder, const Tensor& x) {
  Tensor h = x;
  for (const AffineLayer& layer : encoder) h = relu(apply_affine(layer, h));
  return h;
}

}  // namespace

ForwardTrain LdaModel::forward_train(const Tensor& batch) const {
  if (batch.rank() != 2 || batch.cols() != dims_.input) {
    throw ShapeError("forward: batch " + shape_to_string(batch.shape()) +
                     " does not match input dim " + std::to_string(dims_.input));
  }
  ForwardTrain out;
  out.rep = encode(encoder_, batch);
  out.logits_b = apply_affine(head_balanced_, out.rep);
  if (kind_ == ModelKind::lda) {
    out.logits_u = apply_affine(head_unbalanced_, out.rep);
    out.proj = apply_affine(projection_, out.rep);
  }
  return out;
}

Tensor LdaModel::forward_infer(const Tensor& batch) const {
  return apply_affine(head_balanced_, encode(encoder_, batch));
}

std::vector<int> LdaModel::predict(std::span<const double> features,
                                   std::size_t num_rows) const {
  if (num_rows == 0 || features.size() != num_rows * dims_.input) {
    throw ShapeError("predict: feature buffer does not hold " +
                     std::to_string(num_rows) + " rows of dim " +
                     std::to_string(dims_.input));
  }
  Tensor x = Tensor::constant({num_rows, dims_.input},
                              {features.begin(), features.end()});
  Tensor logits = forward_infer(x);
  std::vector<int> labels(num_rows);
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < num_rows; ++i) {
    labels[i] = static_cast<int>(
        argmax_row({logits.values().data() + i * c, c}));
  }
  return labels;
}

std::vector<Tensor> LdaModel::parameters() const {
  std::vector<Tensor> params;
  for (const auto& [name, tensor] : named_parameters()) params.push_back(tensor);
  return params;
}

std::vector<Tensor> LdaModel::encoder_parameters() const {
  std::vector<Tensor> params;
  for (const AffineLayer& layer : encoder_) {
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  }
  return params;
}

std::vector<Tensor> LdaModel::classifier_parameters() const {
  std::vector<Tensor> params;
  auto push = [&params](const AffineLayer& layer) {
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  };
  if (kind_ == ModelKind::lda) push(head_unbalanced_);
  push(head_balanced_);
  if (kind_ == ModelKind::lda) push(projection_);
  return params;
}

std::vector<std::pair<std::string, Tensor>> LdaModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  auto push = [&named](const std::string& name, const AffineLayer& layer) {
    named.emplace_back(name + ".weight", layer.weight);
    named.emplace_back(name + ".bias", layer.bias);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    push("encoder." + std::to_string(i), encoder_[i]);
  if (kind_ == ModelKind::lda) push("head_unbalanced", head_unbalanced_);
  push("head_balanced", head_balanced_);
  if (kind_ == ModelKind::lda) push("projection", projection_);
  return named;
}

void LdaModel::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json manifest;
  manifest["kind"] = kind_ == ModelKind::lda ? "lda" : "baseline";
  manifest["dims"] = {{"input", dims_.input},   {"hidden", dims_.hidden},
                      {"rep", dims_.rep},       {"classes", dims_.classes},
                      {"proj", dims_.proj}};
  manifest["layout"] = "float64_le";
  auto layers = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : named_parameters()) {
    layers.push_back({{"name", name}, {"shape", tensor.shape()}});
  }
  manifest["layers"] = layers;
  const std::string manifest_text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t manifest_len = manifest_text.size();
  out.write(reinterpret_cast<const char*>(&manifest_len), sizeof(manifest_len));
  out.write(manifest_text.data(),
            static_cast<std::streamsize>(manifest_text.size()));
  for (const auto& [name, tensor] : named_parameters()) {
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

nlohmann::json read_checkpoint_manifest(std::ifstream& in,
                                        const std::filesystem::path& path) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad magic in " + path.string());
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion) {
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  }
  std::uint64_t manifest_len = 0;
  in.read(reinterpret_cast<char*>(&manifest_len), sizeof(manifest_len));
  if (!in || manifest_len > (1ull << 24)) {
    throw CheckpointError("bad manifest length in " + path.string());
  }
  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw CheckpointError("truncated manifest in " + path.string());
  try {
    return nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest parse failure in " + path.string() + ": " +
                          e.what());
  }
}

}  // namespace

void LdaModel::load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const nlohmann::json manifest = read_checkpoint_manifest(in, path);
  try {
    const std::string kind_name = manifest.at("kind").get<std::string>();
    const std::string expected = kind_ == ModelKind::lda ? "lda" : "baseline";
    if (kind_name != expected) {
      throw CheckpointError("checkpoint kind '" + kind_name +
                            "' does not match model kind '" + expected + "'");
    }
    const auto layers = manifest.at("layers");
    auto named = named_parameters();
    if (layers.size() != named.size()) {
      throw CheckpointError("layer count mismatch in " + path.string());
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto entry_shape = layers[i].at("shape").get<Shape>();
      const std::string entry_name = layers[i].at("name").get<std::string>();
      if (entry_name != named[i].first ||
          entry_shape != named[i].second.shape()) {
        throw CheckpointError("layer " + entry_name + " " +
                              shape_to_string(entry_shape) + " in " +
                              path.string() + " does not match expected " +
                              named[i].first + " " +
                              shape_to_string(named[i].second.shape()));
      }
      auto& data = named[i].second.values_mut();
      in.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
      if (!in) {
        throw CheckpointError("truncated parameter data for " + entry_name +
                              " in " + path.string());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest field failure in " + path.string() + ": " +
                          e.what());
  }
}

LdaModel LdaModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const nlohmann::json manifest = read_checkpoint_manifest(in, path);
  in.close();
  ModelDims dims;
  ModelKind kind = ModelKind::lda;
  try {
    const auto& d = manifest.at("dims");
    dims.input = d.at("input").get<std::size_t>();
    dims.hidden = d.at("hidden").get<std::vector<std::size_t>>();
    dims.rep = d.at("rep").get<std::size_t>();
    dims.classes = d.at("classes").get<std::size_t>();
    dims.proj = d.at("proj").get<std::size_t>();
    const std::string kind_name = manifest.at("kind").get<std::string>();
    kind = kind_name == "lda" ? ModelKind::lda : ModelKind::baseline;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest field failure in " + path.string() + ": " +
                          e.what());
  }
  LdaModel model = init(kind, dims, 0);
  model.load_weights(path);
  return model;
}

}  // namespace lda
