#include "mmtmlp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mmtmlp/error.hpp"
#include "strict_json.hpp"

namespace mmtmlp::model {

using nn::join_name;

ModelKind parse_model_kind(std::string_view name) {
  if (name == "rgb_seq") return ModelKind::rgb_seq;
  if (name == "mm_tmlp") return ModelKind::mm_tmlp;
  if (name == "fusionnet") return ModelKind::fusionnet;
  if (name == "hp_mlp") return ModelKind::hp_mlp;
  throw ConfigError("unknown model kind '" + std::string(name) +
                    "' (expected rgb_seq, mm_tmlp, fusionnet or hp_mlp)");
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::rgb_seq: return "rgb_seq";
    case ModelKind::mm_tmlp: return "mm_tmlp";
    case ModelKind::fusionnet: return "fusionnet";
    case ModelKind::hp_mlp: return "hp_mlp";
  }
  return "?";
}

bool is_sequence_model(ModelKind kind) { return kind == ModelKind::rgb_seq || kind == ModelKind::mm_tmlp; }
bool uses_rgb(ModelKind kind) { return kind != ModelKind::hp_mlp; }
bool uses_hp(ModelKind kind) { return kind != ModelKind::rgb_seq; }

RgbBackend parse_rgb_backend(std::string_view name) {
  if (name == "precomputed") return RgbBackend::precomputed;
  if (name == "reference") return RgbBackend::reference;
  throw ConfigError("unknown RGB backend '" + std::string(name) + "' (expected precomputed or reference)");
}

std::string_view to_string(RgbBackend backend) {
  return backend == RgbBackend::precomputed ? "precomputed" : "reference";
}

// ModelConfig -----------------------------------------------------------------

bool ModelConfig::rgb_stream() const {
  if (!uses_rgb(kind)) return false;
  return kind != ModelKind::mm_tmlp || t_rgb > 0;
}

bool ModelConfig::hp_stream() const {
  if (!uses_hp(kind)) return false;
  return kind != ModelKind::mm_tmlp || t_hp > 0;
}

std::size_t ModelConfig::rgb_dim() const {
  return rgb_backend == RgbBackend::precomputed ? rgb_feature_dim : reference.out_dim;
}

std::size_t ModelConfig::rgb_input_width() const {
  return rgb_backend == RgbBackend::precomputed ? rgb_feature_dim : reference.input_width();
}

void ModelConfig::validate() const {
  if (n_actions < 1) throw ConfigError("n_actions must be at least 1");
  if (hp_hidden == 0 || hp_dim == 0 || head_hidden == 0) throw ConfigError("layer widths must be positive");
  if (rgb_stream() && rgb_dim() == 0) throw ConfigError("RGB feature width must be positive");
  if (rgb_backend == RgbBackend::reference) {
    const auto& r = reference;
    if (r.channels == 0 || r.patch == 0 || r.height % r.patch != 0 || r.width % r.patch != 0 ||
        r.height == 0 || r.width == 0 || r.patch_dim == 0 || r.out_dim == 0) {
      throw ConfigError("reference extractor: image sides must be positive multiples of the patch size");
    }
  }
  if (!(temporal.time_hidden_ratio > 0.0) || !(temporal.channel_hidden_ratio > 0.0)) {
    throw ConfigError("temporal hidden ratios must be positive");
  }
  if (kind == ModelKind::mm_tmlp && t_rgb == 0 && t_hp == 0) {
    throw ConfigError("mm_tmlp needs at least one enabled stream");
  }
  if (kind == ModelKind::mm_tmlp && t_rgb == 0) {
    throw ConfigError("mm_tmlp requires the RGB stream (use hp_mlp for hand pose only)");
  }
  if (kind == ModelKind::rgb_seq && t_rgb == 0) throw ConfigError("rgb_seq requires t_rgb >= 1");
}

ModelConfig ModelConfig::with_rates(const sampling::RateConfig& rates) const {
  ModelConfig out = *this;
  out.t_rgb = uses_rgb(kind) ? rates.rgb_steps() : 0;
  out.t_hp = uses_hp(kind) ? rates.hp_steps() : 0;
  return out;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"kind", to_string(c.kind)},
      {"n_actions", c.n_actions},
      {"rgb_backend", to_string(c.rgb_backend)},
      {"rgb_feature_dim", c.rgb_feature_dim},
      {"reference",
       {{"channels", c.reference.channels},
        {"height", c.reference.height},
        {"width", c.reference.width},
        {"patch", c.reference.patch},
        {"patch_dim", c.reference.patch_dim},
        {"out_dim", c.reference.out_dim}}},
      {"hp_hidden", c.hp_hidden},
      {"hp_dim", c.hp_dim},
      {"head_hidden", c.head_hidden},
      {"activation", nn::to_string(c.activation)},
      {"temporal",
       {{"depth", c.temporal.depth},
        {"time_hidden_ratio", c.temporal.time_hidden_ratio},
        {"channel_hidden_ratio", c.temporal.channel_hidden_ratio},
        {"activation", nn::to_string(c.temporal.activation)}}},
      {"t_rgb", c.t_rgb},
      {"t_hp", c.t_hp},
  };
}

using detail::StrictObject;

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where) {
  ModelConfig c;
  StrictObject o(j, where);
  std::string kind(to_string(c.kind));
  std::string backend(to_string(c.rgb_backend));
  std::string act(nn::to_string(c.activation));
  o.get("kind", kind);
  o.get("n_actions", c.n_actions);
  o.get("rgb_backend", backend);
  o.get("rgb_feature_dim", c.rgb_feature_dim);
  o.get("hp_hidden", c.hp_hidden);
  o.get("hp_dim", c.hp_dim);
  o.get("head_hidden", c.head_hidden);
  o.get("activation", act);
  o.get("t_rgb", c.t_rgb);
  o.get("t_hp", c.t_hp);
  if (const auto* r = o.child("reference")) {
    StrictObject ro(*r, where + ".reference");
    ro.get("channels", c.reference.channels);
    ro.get("height", c.reference.height);
    ro.get("width", c.reference.width);
    ro.get("patch", c.reference.patch);
    ro.get("patch_dim", c.reference.patch_dim);
    ro.get("out_dim", c.reference.out_dim);
    ro.finish();
  }
  c.temporal.activation = c.activation;
  bool temporal_act_set = false;
  if (const auto* t = o.child("temporal")) {
    StrictObject to(*t, where + ".temporal");
    std::string tact;
    to.get("depth", c.temporal.depth);
    to.get("time_hidden_ratio", c.temporal.time_hidden_ratio);
    to.get("channel_hidden_ratio", c.temporal.channel_hidden_ratio);
    to.get("activation", tact);
    to.finish();
    if (!tact.empty()) {
      c.temporal.activation = nn::parse_activation(tact);
      temporal_act_set = true;
    }
  }
  o.finish();
  c.kind = parse_model_kind(kind);
  c.rgb_backend = parse_rgb_backend(backend);
  c.activation = nn::parse_activation(act);
  if (!temporal_act_set) c.temporal.activation = c.activation;
  return c;
}

// InputScaler -------------------------------------------------------------------

InputScaler::InputScaler(std::string name, std::size_t dim)
    : mean_(join_name(name, "mean"), 1, dim, false), scale_(join_name(name, "scale"), 1, dim, false) {
  scale_.value.fill(1.0);
}

Matrix InputScaler::apply(const Matrix& x) const {
  if (x.cols() != mean_.value.cols()) {
    throw DimensionError("input scaler '" + mean_.name + "': input " + x.shape_string() + ", expected " +
                         std::to_string(mean_.value.cols()) + " columns");
  }
  Matrix y(x.rows(), x.cols());
  const double* m = mean_.value.data().data();
  const double* s = scale_.value.data().data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = (in[c] - m[c]) / s[c];
  }
  return y;
}

void InputScaler::fit(const Matrix& samples) {
  if (samples.cols() != mean_.value.cols()) throw DimensionError("input scaler fit: width mismatch");
  if (samples.rows() == 0) return;
  const auto n = static_cast<double>(samples.rows());
  for (std::size_t c = 0; c < samples.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < samples.rows(); ++r) mean += samples(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < samples.rows(); ++r) var += (samples(r, c) - mean) * (samples(r, c) - mean);
    const double sd = std::sqrt(var / n);
    mean_.value(0, c) = mean;
    scale_.value(0, c) = sd > 1e-8 ? sd : 1.0;
  }
}

// Extractors --------------------------------------------------------------------

HpExtractor::HpExtractor(std::string name, std::size_t hidden, std::size_t out, nn::Activation act)
    : scaler_(join_name(name, "scaler"), handpose::kFrameFeatures),
      mlp_(join_name(name, "extractor"), handpose::kFrameFeatures, hidden, out, act) {}

Matrix HpExtractor::forward(const Matrix& frames) {
  if (frames.cols() != handpose::kFrameFeatures) {
    throw DimensionError("hand-pose extractor expects " + std::to_string(handpose::kFrameFeatures) +
                         " values per frame, got " + frames.shape_string());
  }
  return mlp_.forward(scaler_.apply(frames));
}

void HpExtractor::backward(const Matrix& dy) { mlp_.backward(dy); }

void HpExtractor::collect(nn::ParameterList& out) {
  scaler_.collect(out);
  mlp_.collect(out);
}

RgbExtractor::RgbExtractor(std::string name, const ModelConfig& cfg)
    : backend_(cfg.rgb_backend),
      ref_(cfg.reference),
      input_width_(cfg.rgb_input_width()),
      scaler_(join_name(name, "scaler"), cfg.rgb_input_width()),
      patch_act_(cfg.activation) {
  if (backend_ == RgbBackend::reference) {
    patch_embed_ = nn::Linear(join_name(name, "extractor.patch_embed"), ref_.channels * ref_.patch * ref_.patch,
                              ref_.patch_dim);
    projection_ = nn::Linear(join_name(name, "extractor.projection"), ref_.patches() * ref_.patch_dim,
                             ref_.out_dim);
  }
}

void RgbExtractor::init_uniform(std::mt19937_64& rng) {
  if (backend_ == RgbBackend::reference) {
    patch_embed_.init_uniform(rng);
    projection_.init_uniform(rng);
  }
}

Matrix RgbExtractor::patchify(const Matrix& frames) const {
  const std::size_t ps = ref_.patch;
  const std::size_t px_count = ref_.width / ps;
  const std::size_t patches = ref_.patches();
  const std::size_t patch_len = ref_.channels * ps * ps;
  Matrix out(frames.rows() * patches, patch_len);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    auto img = frames.row(t);
    for (std::size_t p = 0; p < patches; ++p) {
      const std::size_t py = p / px_count;
      const std::size_t px = p % px_count;
      auto dst = out.row(t * patches + p);
      std::size_t i = 0;
      for (std::size_t c = 0; c < ref_.channels; ++c) {
        for (std::size_t dy = 0; dy < ps; ++dy) {
          const std::size_t base = c * ref_.height * ref_.width + (py * ps + dy) * ref_.width + px * ps;
          for (std::size_t dx = 0; dx < ps; ++dx) dst[i++] = img[base + dx];
        }
      }
    }
  }
  return out;
}

Matrix RgbExtractor::forward(const Matrix& frames) {
  if (frames.cols() != input_width_) {
    throw DimensionError("RGB extractor expects " + std::to_string(input_width_) + " values per frame, got " +
                         frames.shape_string());
  }
  Matrix x = scaler_.apply(frames);
  if (backend_ == RgbBackend::precomputed) return x;
  frames_ = frames.rows();
  Matrix embedded = patch_act_.forward(patch_embed_.forward(patchify(x)));
  // (T*P) x patch_dim and T x (P*patch_dim) share the same row-major layout.
  Matrix flat(frames_, ref_.patches() * ref_.patch_dim,
              std::vector<double>(embedded.data().begin(), embedded.data().end()));
  return projection_.forward(flat);
}

void RgbExtractor::backward(const Matrix& dy) {
  if (backend_ == RgbBackend::precomputed) return;
  Matrix dflat = projection_.backward(dy);
  Matrix dembedded(frames_ * ref_.patches(), ref_.patch_dim,
                   std::vector<double>(dflat.data().begin(), dflat.data().end()));
  patch_embed_.backward(patch_act_.backward(dembedded));
}

std::uint64_t RgbExtractor::macs_per_frame() const noexcept {
  if (backend_ == RgbBackend::precomputed) return 0;
  return ref_.patches() * patch_embed_.macs_per_row() + projection_.macs_per_row();
}

void RgbExtractor::collect(nn::ParameterList& out) {
  scaler_.collect(out);
  if (backend_ == RgbBackend::reference) {
    patch_embed_.collect(out);
    projection_.collect(out);
  }
}

void RgbExtractor::flip(std::span<double> frame) const {
  if (backend_ == RgbBackend::precomputed) return;  // features are treated as mirror-invariant
  if (frame.size() != input_width_) throw DimensionError("RGB flip: wrong frame width");
  for (std::size_t c = 0; c < ref_.channels; ++c) {
    for (std::size_t y = 0; y < ref_.height; ++y) {
      auto row = frame.subspan(c * ref_.height * ref_.width + y * ref_.width, ref_.width);
      std::reverse(row.begin(), row.end());
    }
  }
}

// TemporalMlp -------------------------------------------------------------------

namespace {

std::size_t hidden_width(std::size_t n, double ratio) {
  const auto h = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratio));
  return std::max<std::size_t>(1, h);
}

}  // namespace

TemporalMlp::TemporalMlp(std::string name, std::size_t steps, std::size_t dim, const TemporalMlpConfig& cfg)
    : steps_(steps), dim_(dim) {
  if (steps == 0) throw ConfigError("temporal MLP needs at least one time step");
  const std::size_t th = hidden_width(steps, cfg.time_hidden_ratio);
  const std::size_t ch = hidden_width(dim, cfg.channel_hidden_ratio);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string bn = join_name(name, "block" + std::to_string(b));
    blocks_.push_back(Block{nn::LayerNorm(join_name(bn, "time_norm"), dim),
                            nn::Mlp2(join_name(bn, "time_mlp"), steps, th, steps, cfg.activation),
                            nn::LayerNorm(join_name(bn, "channel_norm"), dim),
                            nn::Mlp2(join_name(bn, "channel_mlp"), dim, ch, dim, cfg.activation)});
  }
}

void TemporalMlp::init_uniform(std::mt19937_64& rng) {
  for (auto& b : blocks_) {
    b.time_mlp.init_uniform(rng);
    b.channel_mlp.init_uniform(rng);
  }
}

Matrix TemporalMlp::forward(const Matrix& seq) {
  if (seq.rows() != steps_ || seq.cols() != dim_) {
    throw DimensionError("temporal MLP instantiated for " + std::to_string(steps_) + "x" + std::to_string(dim_) +
                         ", got sequence " + seq.shape_string());
  }
  Matrix x = seq;
  for (auto& b : blocks_) {
    Matrix mixed = transpose(b.time_mlp.forward(transpose(b.time_norm.forward(x))));
    add_inplace(x, mixed);
    add_inplace(x, b.channel_mlp.forward(b.channel_norm.forward(x)));
  }
  return x;
}

Matrix TemporalMlp::backward(const Matrix& dy) {
  Matrix g = dy;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    add_inplace(g, it->channel_norm.backward(it->channel_mlp.backward(g)));
    add_inplace(g, it->time_norm.backward(transpose(it->time_mlp.backward(transpose(g)))));
  }
  return g;
}

std::uint64_t TemporalMlp::macs() const noexcept {
  std::uint64_t total = 0;
  for (const auto& b : blocks_) total += dim_ * b.time_mlp.macs_per_row() + steps_ * b.channel_mlp.macs_per_row();
  return total;
}

void TemporalMlp::zero_residual_branches() {
  for (auto& b : blocks_) {
    for (nn::Mlp2* m : {&b.time_mlp, &b.channel_mlp}) {
      m->second().weight().value.fill(0.0);
      m->second().bias().value.fill(0.0);
    }
  }
}

void TemporalMlp::collect(nn::ParameterList& out) {
  for (auto& b : blocks_) {
    b.time_norm.collect(out);
    b.time_mlp.collect(out);
    b.channel_norm.collect(out);
    b.channel_mlp.collect(out);
  }
}

// Inputs ------------------------------------------------------------------------

Matrix hand_frames_to_matrix(std::span<const handpose::NormalizedHandFrame> frames) {
  Matrix out(frames.size(), handpose::kFrameFeatures);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto flat = handpose::flatten(frames[t]);
    std::copy(flat.begin(), flat.end(), out.row(t).begin());
  }
  return out;
}

StreamInputs make_inputs(const sampling::MultiRateWindow& window) {
  return {window.rgb_seq, hand_frames_to_matrix(window.hp_seq)};
}

namespace {

Matrix last_row(const Matrix& m, const char* stream) {
  if (m.rows() == 0) throw DimensionError(std::string(stream) + " stream input is empty");
  return slice_rows(m, m.rows() - 1, m.rows());
}

Matrix expand_last(const Matrix& d_last, std::size_t steps) {
  Matrix out(steps, d_last.cols());
  std::copy(d_last.data().begin(), d_last.data().end(), out.row(steps - 1).begin());
  return out;
}

std::pair<Matrix, Matrix> split_cols(const Matrix& m, std::size_t left) {
  Matrix a(m.rows(), left);
  Matrix b(m.rows(), m.cols() - left);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(left), a.row(r).begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(left), src.end(), b.row(r).begin());
  }
  return {std::move(a), std::move(b)};
}

}  // namespace

// MmTmlp ------------------------------------------------------------------------

MmTmlp::MmTmlp(const ModelConfig& cfg, std::uint64_t seed) : Model(cfg) {
  cfg_.validate();
  if (!is_sequence_model(cfg_.kind)) throw ConfigError("MmTmlp built for a single-frame model kind");
  if (cfg_.kind == ModelKind::rgb_seq) cfg_.t_hp = 0;
  std::mt19937_64 rng(seed);
  std::size_t head_in = 0;
  if (cfg_.rgb_stream()) {
    rgb_steps_ = cfg_.t_rgb;
    rgb_extractor_ = RgbExtractor("rgb", cfg_);
    rgb_extractor_.init_uniform(rng);
    rgb_temporal_ = TemporalMlp("rgb.temporal", rgb_steps_, cfg_.rgb_dim(), cfg_.temporal);
    rgb_temporal_.init_uniform(rng);
    head_in += cfg_.rgb_dim();
  }
  if (cfg_.hp_stream()) {
    hp_steps_ = cfg_.t_hp;
    hp_extractor_ = HpExtractor("hp", cfg_.hp_hidden, cfg_.hp_dim, cfg_.activation);
    hp_extractor_.init_uniform(rng);
    hp_temporal_ = TemporalMlp("hp.temporal", hp_steps_, cfg_.hp_dim, cfg_.temporal);
    hp_temporal_.init_uniform(rng);
    head_in += cfg_.hp_dim;
  }
  head_ = nn::Mlp2("head", head_in, cfg_.head_hidden, cfg_.n_actions, cfg_.activation);
  head_.init_uniform(rng);
}

Matrix MmTmlp::forward(const StreamInputs& in) {
  Matrix fused;
  if (rgb_steps_ > 0) {
    if (in.rgb.rows() != rgb_steps_) {
      throw DimensionError("RGB stream instantiated for T=" + std::to_string(rgb_steps_) + ", got " +
                           std::to_string(in.rgb.rows()) + " steps");
    }
    fused = last_row(rgb_temporal_.forward(rgb_extractor_.forward(in.rgb)), "RGB");
  }
  if (hp_steps_ > 0) {
    if (in.hp.rows() != hp_steps_) {
      throw DimensionError("hand-pose stream instantiated for T=" + std::to_string(hp_steps_) + ", got " +
                           std::to_string(in.hp.rows()) + " steps");
    }
    Matrix hp_last = last_row(hp_temporal_.forward(hp_extractor_.forward(in.hp)), "hand-pose");
    fused = fused.empty() ? hp_last : hconcat(fused, hp_last);
  }
  return head_.forward(fused);
}

void MmTmlp::backward(const Matrix& dlogits) {
  Matrix dfused = head_.backward(dlogits);
  const std::size_t rgb_width = rgb_steps_ > 0 ? cfg_.rgb_dim() : 0;
  auto [drgb, dhp] = split_cols(dfused, rgb_width);
  if (rgb_steps_ > 0) rgb_extractor_.backward(rgb_temporal_.backward(expand_last(drgb, rgb_steps_)));
  if (hp_steps_ > 0) hp_extractor_.backward(hp_temporal_.backward(expand_last(dhp, hp_steps_)));
}

nn::ParameterList MmTmlp::parameters() {
  nn::ParameterList out;
  if (rgb_steps_ > 0) {
    rgb_extractor_.collect(out);
    rgb_temporal_.collect(out);
  }
  if (hp_steps_ > 0) {
    hp_extractor_.collect(out);
    hp_temporal_.collect(out);
  }
  head_.collect(out);
  return out;
}

std::uint64_t MmTmlp::macs() const {
  std::uint64_t total = head_.macs_per_row();
  if (rgb_steps_ > 0) total += rgb_steps_ * rgb_extractor_.macs_per_frame() + rgb_temporal_.macs();
  if (hp_steps_ > 0) total += hp_steps_ * hp_extractor_.macs_per_frame() + hp_temporal_.macs();
  return total;
}

// FusionNet ---------------------------------------------------------------------

FusionNet::FusionNet(const ModelConfig& cfg, std::uint64_t seed) : Model(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  rgb_extractor_ = RgbExtractor("rgb", cfg_);
  rgb_extractor_.init_uniform(rng);
  hp_extractor_ = HpExtractor("hp", cfg_.hp_hidden, cfg_.hp_dim, cfg_.activation);
  hp_extractor_.init_uniform(rng);
  head_ = nn::Mlp2("head", cfg_.rgb_dim() + cfg_.hp_dim, cfg_.head_hidden, cfg_.n_actions, cfg_.activation);
  head_.init_uniform(rng);
}

Matrix FusionNet::forward_features(const Matrix& rgb_feat, const Matrix& hp_feat) {
  if (rgb_feat.rows() != 1 || hp_feat.rows() != 1 || rgb_feat.cols() != cfg_.rgb_dim() ||
      hp_feat.cols() != cfg_.hp_dim) {
    throw DimensionError("FusionNet features must be 1x" + std::to_string(cfg_.rgb_dim()) + " and 1x" +
                         std::to_string(cfg_.hp_dim) + ", got " + rgb_feat.shape_string() + " and " +
                         hp_feat.shape_string());
  }
  features_only_ = true;
  return head_.forward(hconcat(rgb_feat, hp_feat));
}

Matrix FusionNet::forward(const StreamInputs& in) {
  Matrix rgb = rgb_extractor_.forward(last_row(in.rgb, "RGB"));
  Matrix hp = hp_extractor_.forward(last_row(in.hp, "hand-pose"));
  Matrix logits = forward_features(rgb, hp);
  features_only_ = false;
  return logits;
}

void FusionNet::backward(const Matrix& dlogits) {
  Matrix dfused = head_.backward(dlogits);
  if (features_only_) return;
  auto [drgb, dhp] = split_cols(dfused, cfg_.rgb_dim());
  rgb_extractor_.backward(drgb);
  hp_extractor_.backward(dhp);
}

nn::ParameterList FusionNet::parameters() {
  nn::ParameterList out;
  rgb_extractor_.collect(out);
  hp_extractor_.collect(out);
  head_.collect(out);
  return out;
}

std::uint64_t FusionNet::macs() const {
  return rgb_extractor_.macs_per_frame() + hp_extractor_.macs_per_frame() + head_.macs_per_row();
}

// HpMlp -------------------------------------------------------------------------

HpMlp::HpMlp(const ModelConfig& cfg, std::uint64_t seed) : Model(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  hp_extractor_ = HpExtractor("hp", cfg_.hp_hidden, cfg_.hp_dim, cfg_.activation);
  hp_extractor_.init_uniform(rng);
  head_ = nn::Mlp2("head", cfg_.hp_dim, cfg_.head_hidden, cfg_.n_actions, cfg_.activation);
  head_.init_uniform(rng);
}

Matrix HpMlp::forward(const StreamInputs& in) {
  return head_.forward(hp_extractor_.forward(last_row(in.hp, "hand-pose")));
}

void HpMlp::backward(const Matrix& dlogits) { hp_extractor_.backward(head_.backward(dlogits)); }

nn::ParameterList HpMlp::parameters() {
  nn::ParameterList out;
  hp_extractor_.collect(out);
  head_.collect(out);
  return out;
}

std::uint64_t HpMlp::macs() const { return hp_extractor_.macs_per_frame() + head_.macs_per_row(); }

// Factory / copying -------------------------------------------------------------

std::unique_ptr<Model> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case ModelKind::rgb_seq:
    case ModelKind::mm_tmlp: return std::make_unique<MmTmlp>(cfg, seed);
    case ModelKind::fusionnet: return std::make_unique<FusionNet>(cfg, seed);
    case ModelKind::hp_mlp: return std::make_unique<HpMlp>(cfg, seed);
  }
  throw ConfigError("unknown model kind");
}

std::size_t copy_shared_parameters(Model& from, Model& to) {
  std::size_t copied = 0;
  auto src = from.parameters();
  for (nn::Parameter* dst : to.parameters()) {
    auto it = std::find_if(src.begin(), src.end(), [&](const nn::Parameter* p) { return p->name == dst->name; });
    if (it == src.end()) continue;
    if ((*it)->value.rows() != dst->value.rows() || (*it)->value.cols() != dst->value.cols()) continue;
    dst->value = (*it)->value;
    ++copied;
  }
  return copied;
}

// Checkpoints -------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointFormat = "mmtmlp-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

nlohmann::json parameters_to_json(const nn::ParameterList& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto* p : params) {
    arr.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()},
                   {"data", p->value.values()}});
  }
  return arr;
}

void load_parameters(const nlohmann::json& j, const nn::ParameterList& params) {
  if (!j.is_array()) throw DataError("checkpoint parameters must be an array");
  for (nn::Parameter* p : params) {
    auto it = std::find_if(j.begin(), j.end(), [&](const nlohmann::json& e) { return e.at("name") == p->name; });
    if (it == j.end()) throw DataError("checkpoint is missing parameter '" + p->name + "'");
    const auto rows = it->at("rows").get<std::size_t>();
    const auto cols = it->at("cols").get<std::size_t>();
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw DimensionError("checkpoint parameter '" + p->name + "' is " + std::to_string(rows) + "x" +
                           std::to_string(cols) + ", model expects " + p->value.shape_string());
    }
    p->value = Matrix(rows, cols, it->at("data").get<std::vector<double>>());
  }
}

void save_checkpoint(const std::string& path, Model& model, const nlohmann::json& metadata) {
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"model", to_json(model.config())},
                      {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata},
                      {"parameters", parameters_to_json(model.parameters())}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

std::unique_ptr<Model> load_checkpoint(const std::string& path, nlohmann::json* metadata) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw DataError("'" + path + "' is not a checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw DataError("checkpoint '" + path + "' has unsupported version");
  }
  auto model = make_model(model_config_from_json(j.at("model")), 0);
  load_parameters(j.at("parameters"), model->parameters());
  if (metadata != nullptr) *metadata = j.value("metadata", nlohmann::json::object());
  return model;
}

}  // namespace mmtmlp::model
