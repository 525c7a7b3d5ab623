#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adsnn/attention.hpp"
#include "adsnn/conv_layers.hpp"
#include "adsnn/ops.hpp"

namespace adsnn {

/// One attention-augmented layer. Zero fields are resolved at build time:
/// filters and depths default to ceil(0.25 * F_in) rounded up to a multiple
/// of `heads`.
struct AttentionBlockConfig {
  std::size_t filters = 0;      // F_conv, channels of the convolution branch
  std::size_t value_depth = 0;  // d_v
  std::size_t key_depth = 0;    // d_k
  std::size_t heads = 4;        // N_h

  bool operator==(const AttentionBlockConfig&) const = default;
};

struct ModelConfig {
  std::size_t input_size = 224;
  std::size_t num_classes = 4;
  double width_multiplier = 1.0;
  std::vector<AttentionBlockConfig> attention_blocks{AttentionBlockConfig{}, AttentionBlockConfig{}};
  std::uint64_t seed = 0;
  // Largest (HW)^2 * N_h any attention layer may hold per image.
  std::int64_t attention_memory_budget = std::int64_t{1} << 26;

  // width 0.25, 64x64 input: sized for CPU test runs.
  static ModelConfig desk_scale();

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  // Sorted-key JSON, used for hashing and the model file header.
  std::string canonical_text() const;

  bool operator==(const ModelConfig&) const = default;
};

// max(1, floor(channels * multiplier))
std::size_t scaled_channels(std::size_t channels, double multiplier);

enum class LayerKind { Conv, DepthwiseSeparable, AttentionConv, GlobalAvgPool, Dense, Softmax };
std::string to_string(LayerKind kind);

/// Structural description of one layer; shapes are per sample (no batch axis).
struct LayerInfo {
  LayerKind kind;
  Shape input;
  Shape output;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t parameters = 0;

  bool operator==(const LayerInfo&) const = default;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<float> forward(const Tensor<float>& x, Mode mode) = 0;
  // Trainable tensors.
  virtual std::vector<Tensor<float>*> parameters() = 0;
  // Running statistics; saved with the model but not trained.
  virtual std::vector<Tensor<float>*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  // Multiply-accumulates, using the input extent as D_F.
  virtual std::int64_t madds(const Shape& input) const = 0;
  virtual std::size_t kernel_size() const { return 0; }
  virtual std::size_t stride() const { return 0; }

  std::size_t parameter_count() const;
};

/// Standard convolution with optional batch norm and ReLU.
class ConvLayer final : public Layer {
 public:
  ConvLayer(Tensor<float> kernel, std::size_t stride, bool batch_norm, bool relu);

  LayerKind kind() const override { return LayerKind::Conv; }
  Shape output_shape(const Shape& input) const override;
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override;
  std::vector<Tensor<float>*> buffers() override;
  std::unique_ptr<Layer> clone() const override;
  std::int64_t madds(const Shape& input) const override;
  std::size_t kernel_size() const override { return kernel_.dim(0); }
  std::size_t stride() const override { return stride_; }

  Tensor<float>& kernel() { return kernel_; }

 private:
  Tensor<float> kernel_;
  std::size_t stride_;
  std::optional<conv::BatchNormParams<float>> norm_;
  bool relu_;
};

class DwsLayer final : public Layer {
 public:
  explicit DwsLayer(conv::DwsBlockParams<float> params);

  LayerKind kind() const override { return LayerKind::DepthwiseSeparable; }
  Shape output_shape(const Shape& input) const override;
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override;
  std::vector<Tensor<float>*> buffers() override;
  std::unique_ptr<Layer> clone() const override;
  std::int64_t madds(const Shape& input) const override;
  std::size_t kernel_size() const override { return params_.depthwise.dim(0); }
  std::size_t stride() const override { return params_.stride; }

  conv::DwsBlockParams<float>& params() { return params_; }

 private:
  conv::DwsBlockParams<float> params_;
};

/// 3x3 conv branch concatenated with multi-head self-attention, then BN + ReLU.
class AttentionConvLayer final : public Layer {
 public:
  AttentionConvLayer(Tensor<float> conv_kernel, attn::AttentionWeights<float> weights, attn::AttentionConfig config);

  LayerKind kind() const override { return LayerKind::AttentionConv; }
  Shape output_shape(const Shape& input) const override;
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override;
  std::vector<Tensor<float>*> buffers() override;
  std::unique_ptr<Layer> clone() const override;
  std::int64_t madds(const Shape& input) const override;
  std::size_t kernel_size() const override { return kernel_.dim(0); }
  std::size_t stride() const override { return 1; }

  const attn::AttentionConfig& config() const { return config_; }

 private:
  Tensor<float> kernel_;
  attn::AttentionWeights<float> weights_;
  attn::AttentionConfig config_;
  conv::BatchNormParams<float> norm_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
  Shape output_shape(const Shape& input) const override;
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override { return {}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPoolLayer>(); }
  std::int64_t madds(const Shape&) const override { return 0; }
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(Tensor<float> weights, Tensor<float> bias);

  LayerKind kind() const override { return LayerKind::Dense; }
  Shape output_shape(const Shape& input) const override;
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override;
  std::int64_t madds(const Shape& input) const override;

 private:
  Tensor<float> weights_;
  Tensor<float> bias_;
};

class SoftmaxLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Softmax; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<float> forward(const Tensor<float>& x, Mode mode) override;
  std::vector<Tensor<float>*> parameters() override { return {}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxLayer>(); }
  std::int64_t madds(const Shape&) const override { return 0; }
};

/// Sequential network over NHWC float batches.
class Model {
 public:
  Model(Shape input_shape, std::vector<std::unique_ptr<Layer>> layers, std::optional<ModelConfig> config = {});
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  const Shape& input_shape() const { return input_shape_; }
  const std::optional<ModelConfig>& config() const { return config_; }
  std::size_t num_classes() const;

  // Class probabilities, B x M.
  Tensor<float> forward(const Tensor<float>& batch, Mode mode);
  // Output of the last layer before a trailing softmax.
  Tensor<float> logits(const Tensor<float>& batch, Mode mode);
  // Output of layer `index` (inclusive).
  Tensor<float> forward_to(const Tensor<float>& batch, std::size_t index, Mode mode);

  std::vector<Tensor<float>*> parameters();
  std::vector<Tensor<float>*> buffers();
  // Every saved tensor: per layer, parameters then buffers.
  std::vector<Tensor<float>*> state();

  std::vector<LayerInfo> describe() const;
  // Per-sample output shape of layer `index`.
  Shape layer_output_shape(std::size_t index) const;
  std::string config_hash() const;

 private:
  Tensor<float> run(const Tensor<float>& batch, std::size_t end, Mode mode);

  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::optional<ModelConfig> config_;
};

// Fills in zero fields of the attention blocks for the given backbone output width.
std::vector<AttentionBlockConfig> resolve_attention_blocks(const ModelConfig& config);

/// MobileNetV1 backbone (3x3/2 stem + 13 depthwise-separable blocks) scaled by
/// the width multiplier, then the configured attention-augmented layers,
/// global average pooling, a dense classifier and softmax.
Model build_adsnn(const ModelConfig& config);

// Sum of parameter and running-statistic sizes.
std::int64_t count_parameters(const Model& model);
std::int64_t count_madds(const Model& model);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace adsnn
