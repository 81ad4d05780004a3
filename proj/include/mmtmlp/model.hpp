#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mmtmlp/nn/layers.hpp"
#include "mmtmlp/sampling.hpp"

namespace mmtmlp::model {

using nn::Matrix;

enum class ModelKind { rgb_seq, mm_tmlp, fusionnet, hp_mlp };

ModelKind parse_model_kind(std::string_view name);
std::string_view to_string(ModelKind kind);

bool is_sequence_model(ModelKind kind);
bool uses_rgb(ModelKind kind);
/// mm_tmlp uses the hand stream only when its sequence length is non-zero.
bool uses_hp(ModelKind kind);

enum class RgbBackend { precomputed, reference };

RgbBackend parse_rgb_backend(std::string_view name);
std::string_view to_string(RgbBackend backend);

/// Stand-in image extractor: patch-flatten, shared patch embedding, then a projection.
struct ReferenceExtractorConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch = 16;
  std::size_t patch_dim = 256;
  std::size_t out_dim = 512;

  std::size_t patches() const { return (height / patch) * (width / patch); }
  std::size_t input_width() const { return channels * height * width; }
};

struct TemporalMlpConfig {
  std::size_t depth = 2;
  double time_hidden_ratio = 2.0;
  double channel_hidden_ratio = 2.0;
  nn::Activation activation = nn::Activation::gelu;
};

struct ModelConfig {
  ModelKind kind = ModelKind::mm_tmlp;
  std::size_t n_actions = 37;
  RgbBackend rgb_backend = RgbBackend::precomputed;
  /// Width of one precomputed feature row; D_rgb equals it for the precomputed backend.
  std::size_t rgb_feature_dim = 512;
  ReferenceExtractorConfig reference;
  std::size_t hp_hidden = 256;
  std::size_t hp_dim = 128;
  std::size_t head_hidden = 256;
  nn::Activation activation = nn::Activation::gelu;
  TemporalMlpConfig temporal;
  /// Stream sequence lengths; 0 disables a stream. Single-frame models ignore them.
  std::size_t t_rgb = 60;
  std::size_t t_hp = 60;

  bool rgb_stream() const;
  bool hp_stream() const;
  /// D_rgb: output width of the RGB extractor.
  std::size_t rgb_dim() const;
  /// Per-frame input width of the RGB stream.
  std::size_t rgb_input_width() const;
  void validate() const;

  /// Copy with t_rgb / t_hp taken from a rate configuration.
  ModelConfig with_rates(const sampling::RateConfig& rates) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown keys are a ConfigError. Absent keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model");

/// Fixed per-feature standardization y = (x - mean) / scale. Not trained.
class InputScaler {
 public:
  InputScaler() = default;
  InputScaler(std::string name, std::size_t dim);

  Matrix apply(const Matrix& x) const;
  /// Estimates mean and standard deviation per column; near-constant columns keep scale 1.
  void fit(const Matrix& samples);

  void collect(nn::ParameterList& out) {
    out.push_back(&mean_);
    out.push_back(&scale_);
  }

 private:
  nn::Parameter mean_;
  nn::Parameter scale_;
};

/// 126 flattened normalized keypoints -> hidden -> D_hp.
class HpExtractor {
 public:
  HpExtractor() = default;
  HpExtractor(std::string name, std::size_t hidden, std::size_t out, nn::Activation act);

  void init_uniform(std::mt19937_64& rng) { mlp_.init_uniform(rng); }
  Matrix forward(const Matrix& frames);
  void backward(const Matrix& dy);
  InputScaler& scaler() noexcept { return scaler_; }
  std::uint64_t macs_per_frame() const noexcept { return mlp_.macs_per_row(); }
  void collect(nn::ParameterList& out);

 private:
  InputScaler scaler_;
  nn::Mlp2 mlp_;
};

class RgbExtractor {
 public:
  RgbExtractor() = default;
  RgbExtractor(std::string name, const ModelConfig& cfg);

  void init_uniform(std::mt19937_64& rng);
  /// T x input_width -> T x D_rgb. The precomputed backend returns its (standardized) input.
  Matrix forward(const Matrix& frames);
  void backward(const Matrix& dy);
  InputScaler& scaler() noexcept { return scaler_; }
  RgbBackend backend() const noexcept { return backend_; }
  std::uint64_t macs_per_frame() const noexcept;
  void collect(nn::ParameterList& out);

  /// Horizontal flip of one input row, as the backend understands it.
  void flip(std::span<double> frame) const;

 private:
  Matrix patchify(const Matrix& frames) const;

  RgbBackend backend_ = RgbBackend::precomputed;
  ReferenceExtractorConfig ref_;
  std::size_t input_width_ = 0;
  InputScaler scaler_;
  nn::Linear patch_embed_;
  nn::ActivationLayer patch_act_;
  nn::Linear projection_;
  std::size_t frames_ = 0;
};

/// Stack of pre-norm residual blocks: time mixing across T per channel, then channel
/// mixing across D per time step.
class TemporalMlp {
 public:
  TemporalMlp() = default;
  TemporalMlp(std::string name, std::size_t steps, std::size_t dim, const TemporalMlpConfig& cfg);

  void init_uniform(std::mt19937_64& rng);
  Matrix forward(const Matrix& seq);
  Matrix backward(const Matrix& dy);

  std::size_t steps() const noexcept { return steps_; }
  std::size_t depth() const noexcept { return blocks_.size(); }
  std::uint64_t macs() const noexcept;
  /// Zeroes the output layer of every residual branch, making the module the identity.
  void zero_residual_branches();
  void collect(nn::ParameterList& out);

 private:
  struct Block {
    nn::LayerNorm time_norm;
    nn::Mlp2 time_mlp;
    nn::LayerNorm channel_norm;
    nn::Mlp2 channel_mlp;
  };

  std::size_t steps_ = 0;
  std::size_t dim_ = 0;
  std::vector<Block> blocks_;
};

/// Per-stream model inputs, one row per sampled time step.
struct StreamInputs {
  Matrix rgb;  // T_rgb x rgb_input_width
  Matrix hp;   // T_hp x 126
};

StreamInputs make_inputs(const sampling::MultiRateWindow& window);
Matrix hand_frames_to_matrix(std::span<const handpose::NormalizedHandFrame> frames);

/// Common interface of every model kind. forward() caches activations for backward().
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ModelKind kind() const noexcept { return cfg_.kind; }

  /// 1 x n_actions logits.
  virtual Matrix forward(const StreamInputs& in) = 0;
  virtual void backward(const Matrix& dlogits) = 0;
  virtual nn::ParameterList parameters() = 0;

  /// Multiply-accumulates of one forward pass.
  virtual std::uint64_t macs() const = 0;

  virtual RgbExtractor* rgb_extractor() { return nullptr; }
  virtual HpExtractor* hp_extractor() { return nullptr; }

  Matrix forward(const sampling::MultiRateWindow& w) { return forward(make_inputs(w)); }

 protected:
  ModelConfig cfg_;
};

/// Two-stream model: per-stream extractor + temporal MLP, final-step concat, head.
class MmTmlp final : public Model {
 public:
  MmTmlp(const ModelConfig& cfg, std::uint64_t seed);

  Matrix forward(const StreamInputs& in) override;
  void backward(const Matrix& dlogits) override;
  nn::ParameterList parameters() override;
  std::uint64_t macs() const override;
  RgbExtractor* rgb_extractor() override { return cfg_.rgb_stream() ? &rgb_extractor_ : nullptr; }
  HpExtractor* hp_extractor() override { return cfg_.hp_stream() ? &hp_extractor_ : nullptr; }

  TemporalMlp& rgb_temporal() noexcept { return rgb_temporal_; }
  TemporalMlp& hp_temporal() noexcept { return hp_temporal_; }
  nn::Mlp2& head() noexcept { return head_; }

 private:
  RgbExtractor rgb_extractor_;
  TemporalMlp rgb_temporal_;
  HpExtractor hp_extractor_;
  TemporalMlp hp_temporal_;
  nn::Mlp2 head_;
  std::size_t rgb_steps_ = 0;
  std::size_t hp_steps_ = 0;
};

/// Single-frame fusion: both extractors on the final frame, concat, head.
class FusionNet final : public Model {
 public:
  FusionNet(const ModelConfig& cfg, std::uint64_t seed);

  /// Direct form on extracted features ([D_rgb], [D_hp]).
  Matrix forward_features(const Matrix& rgb_feat, const Matrix& hp_feat);

  Matrix forward(const StreamInputs& in) override;
  void backward(const Matrix& dlogits) override;
  nn::ParameterList parameters() override;
  std::uint64_t macs() const override;
  RgbExtractor* rgb_extractor() override { return &rgb_extractor_; }
  HpExtractor* hp_extractor() override { return &hp_extractor_; }
  nn::Mlp2& head() noexcept { return head_; }

 private:
  RgbExtractor rgb_extractor_;
  HpExtractor hp_extractor_;
  nn::Mlp2 head_;
  bool features_only_ = false;
};

/// Single-frame hand-pose classifier.
class HpMlp final : public Model {
 public:
  HpMlp(const ModelConfig& cfg, std::uint64_t seed);

  Matrix forward(const StreamInputs& in) override;
  void backward(const Matrix& dlogits) override;
  nn::ParameterList parameters() override;
  std::uint64_t macs() const override;
  HpExtractor* hp_extractor() override { return &hp_extractor_; }

 private:
  HpExtractor hp_extractor_;
  nn::Mlp2 head_;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Copies values of identically named, identically shaped parameters. Returns the count copied.
std::size_t copy_shared_parameters(Model& from, Model& to);

// Checkpoints -----------------------------------------------------------------

nlohmann::json parameters_to_json(const nn::ParameterList& params);
/// Every parameter must be present with a matching shape.
void load_parameters(const nlohmann::json& j, const nn::ParameterList& params);

/// JSON checkpoint: header (format, version, model config, extra metadata) + named arrays.
void save_checkpoint(const std::string& path, Model& model, const nlohmann::json& metadata = {});
std::unique_ptr<Model> load_checkpoint(const std::string& path, nlohmann::json* metadata = nullptr);

}  // namespace mmtmlp::model
