#include "adsnn/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "adsnn/serialize.hpp"

namespace adsnn {
namespace {

// Canonical MobileNetV1 body: (output filters, stride) per depthwise-separable block.
constexpr std::size_t kStemFilters = 32;
constexpr std::pair<std::size_t, std::size_t> kBackbone[] = {
    {64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2},  {512, 1},
    {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1},
};

Tensor<float> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>(dist(rng));
  return t;
}

conv::BatchNormParams<float> clone_norm(const conv::BatchNormParams<float>& bn) {
  return {bn.gamma.clone(), bn.beta.clone(), {bn.stats.mean.clone(), bn.stats.variance.clone()}};
}

std::vector<Tensor<float>*> norm_parameters(conv::BatchNormParams<float>& bn) { return {&bn.gamma, &bn.beta}; }
std::vector<Tensor<float>*> norm_buffers(conv::BatchNormParams<float>& bn) {
  return {&bn.stats.mean, &bn.stats.variance};
}

void require_spatial(const Shape& input, const char* layer) {
  if (input.size() != 3) throw DimensionError(std::string(layer) + " expects HxWxC input, got " + shape_string(input));
}

std::int64_t square_extent(const Shape& input) { return static_cast<std::int64_t>(input.at(0)); }

}  // namespace

ModelConfig ModelConfig::desk_scale() {
  ModelConfig cfg;
  cfg.input_size = 64;
  cfg.width_multiplier = 0.25;
  return cfg;
}

void ModelConfig::validate() const {
  if (input_size < 1) throw std::invalid_argument("input_size must be positive");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw std::invalid_argument("width_multiplier must lie in (0, 1]");
  }
  for (const auto& block : attention_blocks) {
    if (block.heads == 0) throw std::invalid_argument("attention block needs at least one head");
    if (block.value_depth % block.heads != 0 || block.key_depth % block.heads != 0) {
      throw std::invalid_argument("attention depths must be divisible by the head count");
    }
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : attention_blocks) {
    blocks.push_back({{"filters", b.filters}, {"value_depth", b.value_depth}, {"key_depth", b.key_depth}, {"heads", b.heads}});
  }
  return {{"input_size", input_size},
          {"num_classes", num_classes},
          {"width_multiplier", width_multiplier},
          {"attention_blocks", blocks},
          {"seed", seed},
          {"attention_memory_budget", attention_memory_budget}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.input_size = j.at("input_size").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.width_multiplier = j.at("width_multiplier").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.attention_memory_budget = j.at("attention_memory_budget").get<std::int64_t>();
  cfg.attention_blocks.clear();
  for (const auto& b : j.at("attention_blocks")) {
    cfg.attention_blocks.push_back({b.at("filters").get<std::size_t>(), b.at("value_depth").get<std::size_t>(),
                                    b.at("key_depth").get<std::size_t>(), b.at("heads").get<std::size_t>()});
  }
  cfg.validate();
  return cfg;
}

std::string ModelConfig::canonical_text() const { return to_json().dump(); }

std::size_t scaled_channels(std::size_t channels, double multiplier) {
  const auto scaled = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * multiplier + 1e-9));
  return scaled < 1 ? 1 : scaled;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseSeparable: return "dws";
    case LayerKind::AttentionConv: return "attention_conv";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

std::size_t Layer::parameter_count() const {
  auto& self = const_cast<Layer&>(*this);
  std::size_t n = 0;
  for (auto* t : self.parameters()) n += t->size();
  for (auto* t : self.buffers()) n += t->size();
  return n;
}

// --- ConvLayer ---

ConvLayer::ConvLayer(Tensor<float> kernel, std::size_t stride, bool batch_norm, bool relu)
    : kernel_(std::move(kernel)), stride_(stride), relu_(relu) {
  if (kernel_.rank() != 4) throw DimensionError("conv layer kernel must be KxKxMxN");
  if (batch_norm) norm_ = conv::BatchNormParams<float>::identity(kernel_.dim(3));
}

Shape ConvLayer::output_shape(const Shape& input) const {
  require_spatial(input, "conv");
  if (input[2] != kernel_.dim(2)) throw DimensionError("conv: input channels " + shape_string(input));
  return {conv_axis(input[0], kernel_.dim(0), stride_, Padding::Same).out,
          conv_axis(input[1], kernel_.dim(1), stride_, Padding::Same).out, kernel_.dim(3)};
}

Tensor<float> ConvLayer::forward(const Tensor<float>& x, Mode mode) {
  Tensor<float> h = conv2d(x, kernel_, stride_, Padding::Same);
  if (norm_) h = batch_norm(h, norm_->gamma, norm_->beta, norm_->stats, mode);
  return relu_ ? relu(h) : h;
}

std::vector<Tensor<float>*> ConvLayer::parameters() {
  std::vector<Tensor<float>*> out{&kernel_};
  if (norm_) {
    for (auto* t : norm_parameters(*norm_)) out.push_back(t);
  }
  return out;
}

std::vector<Tensor<float>*> ConvLayer::buffers() {
  if (!norm_) return {};
  return norm_buffers(*norm_);
}

std::unique_ptr<Layer> ConvLayer::clone() const {
  auto copy = std::make_unique<ConvLayer>(kernel_.clone(), stride_, false, relu_);
  if (norm_) copy->norm_ = clone_norm(*norm_);
  return copy;
}

std::int64_t ConvLayer::madds(const Shape& input) const {
  require_spatial(input, "conv");
  return conv::cost_standard({static_cast<std::int64_t>(kernel_.dim(0)), static_cast<std::int64_t>(kernel_.dim(2)),
                              static_cast<std::int64_t>(kernel_.dim(3)), square_extent(input),
                              static_cast<std::int64_t>(output_shape(input)[0])});
}

// --- DwsLayer ---

DwsLayer::DwsLayer(conv::DwsBlockParams<float> params) : params_(std::move(params)) {}

Shape DwsLayer::output_shape(const Shape& input) const {
  require_spatial(input, "dws");
  if (input[2] != params_.in_channels()) throw DimensionError("dws: input channels " + shape_string(input));
  const std::size_t k = params_.depthwise.dim(0);
  return {conv_axis(input[0], k, params_.stride, Padding::Same).out,
          conv_axis(input[1], k, params_.stride, Padding::Same).out, params_.out_channels()};
}

Tensor<float> DwsLayer::forward(const Tensor<float>& x, Mode mode) { return conv::dws_block_forward(x, params_, mode); }

std::vector<Tensor<float>*> DwsLayer::parameters() {
  std::vector<Tensor<float>*> out{&params_.depthwise};
  if (params_.depthwise_norm) {
    for (auto* t : norm_parameters(*params_.depthwise_norm)) out.push_back(t);
  }
  out.push_back(&params_.pointwise);
  if (params_.pointwise_norm) {
    for (auto* t : norm_parameters(*params_.pointwise_norm)) out.push_back(t);
  }
  return out;
}

std::vector<Tensor<float>*> DwsLayer::buffers() {
  std::vector<Tensor<float>*> out;
  if (params_.depthwise_norm) {
    for (auto* t : norm_buffers(*params_.depthwise_norm)) out.push_back(t);
  }
  if (params_.pointwise_norm) {
    for (auto* t : norm_buffers(*params_.pointwise_norm)) out.push_back(t);
  }
  return out;
}

std::unique_ptr<Layer> DwsLayer::clone() const {
  conv::DwsBlockParams<float> p;
  p.depthwise = params_.depthwise.clone();
  p.pointwise = params_.pointwise.clone();
  if (params_.depthwise_norm) p.depthwise_norm = clone_norm(*params_.depthwise_norm);
  if (params_.pointwise_norm) p.pointwise_norm = clone_norm(*params_.pointwise_norm);
  p.stride = params_.stride;
  return std::make_unique<DwsLayer>(std::move(p));
}

std::int64_t DwsLayer::madds(const Shape& input) const {
  require_spatial(input, "dws");
  return conv::cost_dws({static_cast<std::int64_t>(params_.depthwise.dim(0)),
                         static_cast<std::int64_t>(params_.in_channels()),
                         static_cast<std::int64_t>(params_.out_channels()), square_extent(input),
                         static_cast<std::int64_t>(output_shape(input)[0])});
}

// --- AttentionConvLayer ---

AttentionConvLayer::AttentionConvLayer(Tensor<float> conv_kernel, attn::AttentionWeights<float> weights,
                                       attn::AttentionConfig config)
    : kernel_(std::move(conv_kernel)),
      weights_(std::move(weights)),
      config_(config),
      norm_(conv::BatchNormParams<float>::identity(kernel_.dim(3) + config.value_depth)) {
  config_.validate();
}

Shape AttentionConvLayer::output_shape(const Shape& input) const {
  require_spatial(input, "attention_conv");
  if (input[2] != kernel_.dim(2)) throw DimensionError("attention_conv: input channels " + shape_string(input));
  return {input[0], input[1], kernel_.dim(3) + config_.value_depth};
}

Tensor<float> AttentionConvLayer::forward(const Tensor<float>& x, Mode mode) {
  Tensor<float> h = attn::attention_augmented_conv(x, kernel_, weights_, config_);
  return relu(batch_norm(h, norm_.gamma, norm_.beta, norm_.stats, mode));
}

std::vector<Tensor<float>*> AttentionConvLayer::parameters() {
  std::vector<Tensor<float>*> out{&kernel_};
  for (auto& head : weights_.heads) {
    out.push_back(&head.query);
    out.push_back(&head.key);
    out.push_back(&head.value);
  }
  if (config_.enabled()) out.push_back(&weights_.output);
  out.push_back(&norm_.gamma);
  out.push_back(&norm_.beta);
  return out;
}

std::vector<Tensor<float>*> AttentionConvLayer::buffers() { return norm_buffers(norm_); }

std::unique_ptr<Layer> AttentionConvLayer::clone() const {
  attn::AttentionWeights<float> w;
  for (const auto& head : weights_.heads) w.heads.push_back({head.query.clone(), head.key.clone(), head.value.clone()});
  w.output = weights_.output.clone();
  auto copy = std::make_unique<AttentionConvLayer>(kernel_.clone(), std::move(w), config_);
  copy->norm_ = clone_norm(norm_);
  return copy;
}

std::int64_t AttentionConvLayer::madds(const Shape& input) const {
  require_spatial(input, "attention_conv");
  const auto in_ch = static_cast<std::int64_t>(kernel_.dim(2));
  std::int64_t total = conv::cost_standard({static_cast<std::int64_t>(kernel_.dim(0)), in_ch,
                                            static_cast<std::int64_t>(kernel_.dim(3)), square_extent(input),
                                            square_extent(input)});
  if (config_.enabled()) {
    const auto hw = static_cast<std::int64_t>(input[0] * input[1]);
    const auto dk = static_cast<std::int64_t>(config_.key_depth);
    const auto dv = static_cast<std::int64_t>(config_.value_depth);
    total += hw * in_ch * (2 * dk + dv);  // projections
    total += hw * hw * (dk + dv);         // logits and weighted values
    total += hw * dv * dv;                // output projection
  }
  return total;
}

// --- pooling / dense / softmax ---

Shape GlobalAvgPoolLayer::output_shape(const Shape& input) const {
  require_spatial(input, "global_avg_pool");
  return {input[2]};
}

Tensor<float> GlobalAvgPoolLayer::forward(const Tensor<float>& x, Mode) { return global_avg_pool(x); }

DenseLayer::DenseLayer(Tensor<float> weights, Tensor<float> bias) : weights_(std::move(weights)), bias_(std::move(bias)) {}

Shape DenseLayer::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != weights_.dim(0)) {
    throw DimensionError("dense expects [" + std::to_string(weights_.dim(0)) + "] input, got " + shape_string(input));
  }
  return {weights_.dim(1)};
}

Tensor<float> DenseLayer::forward(const Tensor<float>& x, Mode) { return dense(x, weights_, bias_); }

std::unique_ptr<Layer> DenseLayer::clone() const {
  return std::make_unique<DenseLayer>(weights_.clone(), bias_.clone());
}

std::int64_t DenseLayer::madds(const Shape&) const {
  return static_cast<std::int64_t>(weights_.dim(0) * weights_.dim(1));
}

Tensor<float> SoftmaxLayer::forward(const Tensor<float>& x, Mode) { return softmax(x, x.rank() - 1); }

// --- Model ---

Model::Model(Shape input_shape, std::vector<std::unique_ptr<Layer>> layers, std::optional<ModelConfig> config)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), config_(std::move(config)) {
  Shape shape = input_shape_;
  for (const auto& layer : layers_) shape = layer->output_shape(shape);
}

Model::Model(const Model& other) : input_shape_(other.input_shape_), config_(other.config_) {
  layers_.reserve(other.layers_.size());
  for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

std::size_t Model::num_classes() const {
  if (layers_.empty()) return 0;
  const Shape out = layer_output_shape(layers_.size() - 1);
  return out.size() == 1 ? out[0] : 0;
}

Tensor<float> Model::run(const Tensor<float>& batch, std::size_t end, Mode mode) {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw DimensionError("model expects batches of " + shape_string(input_shape_) + ", got " +
                         shape_string(batch.shape()));
  }
  Tensor<float> h = batch;
  for (std::size_t i = 0; i < end; ++i) h = layers_[i]->forward(h, mode);
  return h;
}

Tensor<float> Model::forward(const Tensor<float>& batch, Mode mode) { return run(batch, layers_.size(), mode); }

Tensor<float> Model::logits(const Tensor<float>& batch, Mode mode) {
  std::size_t end = layers_.size();
  if (end > 0 && layers_.back()->kind() == LayerKind::Softmax) --end;
  return run(batch, end, mode);
}

Tensor<float> Model::forward_to(const Tensor<float>& batch, std::size_t index, Mode mode) {
  if (index >= layers_.size()) {
    throw std::out_of_range("layer index " + std::to_string(index) + " outside model of " +
                            std::to_string(layers_.size()) + " layers");
  }
  return run(batch, index + 1, mode);
}

std::vector<Tensor<float>*> Model::parameters() {
  std::vector<Tensor<float>*> out;
  for (auto& layer : layers_)
    for (auto* t : layer->parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor<float>*> Model::buffers() {
  std::vector<Tensor<float>*> out;
  for (auto& layer : layers_)
    for (auto* t : layer->buffers()) out.push_back(t);
  return out;
}

std::vector<Tensor<float>*> Model::state() {
  std::vector<Tensor<float>*> out;
  for (auto& layer : layers_) {
    for (auto* t : layer->parameters()) out.push_back(t);
    for (auto* t : layer->buffers()) out.push_back(t);
  }
  return out;
}

std::vector<LayerInfo> Model::describe() const {
  std::vector<LayerInfo> out;
  Shape shape = input_shape_;
  for (const auto& layer : layers_) {
    Shape next = layer->output_shape(shape);
    out.push_back({layer->kind(), shape, next, layer->kernel_size(), layer->stride(), layer->parameter_count()});
    shape = std::move(next);
  }
  return out;
}

Shape Model::layer_output_shape(std::size_t index) const {
  if (index >= layers_.size()) throw std::out_of_range("layer index " + std::to_string(index) + " out of range");
  Shape shape = input_shape_;
  for (std::size_t i = 0; i <= index; ++i) shape = layers_[i]->output_shape(shape);
  return shape;
}

std::string Model::config_hash() const { return config_ ? sha256_hex(config_->canonical_text()) : std::string(); }

std::vector<AttentionBlockConfig> resolve_attention_blocks(const ModelConfig& config) {
  std::size_t in_channels = scaled_channels(kBackbone[std::size(kBackbone) - 1].first, config.width_multiplier);
  std::vector<AttentionBlockConfig> out;
  for (AttentionBlockConfig block : config.attention_blocks) {
    const std::size_t heads = block.heads == 0 ? 4 : block.heads;
    std::size_t depth = (in_channels + 3) / 4;
    depth = (depth + heads - 1) / heads * heads;
    block.heads = heads;
    if (block.value_depth == 0) block.value_depth = depth;
    if (block.key_depth == 0) block.key_depth = depth;
    if (block.filters == 0) block.filters = depth;
    out.push_back(block);
    in_channels = block.filters + block.value_depth;
  }
  return out;
}

Model build_adsnn(const ModelConfig& input_config) {
  input_config.validate();
  ModelConfig config = input_config;
  config.attention_blocks = resolve_attention_blocks(input_config);
  config.validate();

  std::mt19937_64 rng(config.seed);
  std::vector<std::unique_ptr<Layer>> layers;
  const double alpha = config.width_multiplier;

  std::size_t channels = scaled_channels(kStemFilters, alpha);
  layers.push_back(std::make_unique<ConvLayer>(he_uniform({3, 3, 3, channels}, 27, rng), 2, true, true));
  std::size_t spatial = conv_axis(config.input_size, 3, 2, Padding::Same).out;

  for (const auto& [filters, stride] : kBackbone) {
    const std::size_t out = scaled_channels(filters, alpha);
    conv::DwsBlockParams<float> p;
    p.depthwise = he_uniform({3, 3, channels}, 9, rng);
    p.pointwise = he_uniform({1, 1, channels, out}, channels, rng);
    p.depthwise_norm = conv::BatchNormParams<float>::identity(channels);
    p.pointwise_norm = conv::BatchNormParams<float>::identity(out);
    p.stride = stride;
    layers.push_back(std::make_unique<DwsLayer>(std::move(p)));
    spatial = conv_axis(spatial, 3, stride, Padding::Same).out;
    channels = out;
  }

  for (const auto& block : config.attention_blocks) {
    attn::AttentionConfig acfg{block.heads, block.key_depth, block.value_depth};
    acfg.validate();
    if (acfg.enabled()) {
      const auto estimate = attn::attention_memory_estimate(static_cast<std::int64_t>(spatial),
                                                            static_cast<std::int64_t>(spatial),
                                                            static_cast<std::int64_t>(acfg.heads));
      if (estimate > config.attention_memory_budget) {
        throw std::invalid_argument("attention layer on a " + std::to_string(spatial) + "x" + std::to_string(spatial) +
                                    " grid needs " + std::to_string(estimate) + " attention entries, budget is " +
                                    std::to_string(config.attention_memory_budget));
      }
    }
    Tensor<float> kernel = he_uniform({3, 3, channels, block.filters}, 9 * channels, rng);
    auto weights = attn::init_attention_weights<float>(channels, acfg, rng);
    layers.push_back(std::make_unique<AttentionConvLayer>(std::move(kernel), std::move(weights), acfg));
    channels = block.filters + block.value_depth;
  }

  layers.push_back(std::make_unique<GlobalAvgPoolLayer>());
  layers.push_back(std::make_unique<DenseLayer>(he_uniform({channels, config.num_classes}, channels, rng),
                                                Tensor<float>(Shape{config.num_classes}, 0.0f)));
  layers.push_back(std::make_unique<SoftmaxLayer>());
  return Model(Shape{config.input_size, config.input_size, 3}, std::move(layers), config);
}

std::int64_t count_parameters(const Model& model) {
  std::int64_t total = 0;
  for (std::size_t i = 0; i < model.size(); ++i) total += static_cast<std::int64_t>(model.layer(i).parameter_count());
  return total;
}

std::int64_t count_madds(const Model& model) {
  std::int64_t total = 0;
  Shape shape = model.input_shape();
  for (std::size_t i = 0; i < model.size(); ++i) {
    total += model.layer(i).madds(shape);
    shape = model.layer(i).output_shape(shape);
  }
  return total;
}

}  // namespace adsnn
