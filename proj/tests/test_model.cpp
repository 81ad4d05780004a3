#include <doctest.h>

#include <array>
#include <random>

#include "mmtmlp/dataset.hpp"
#include "mmtmlp/error.hpp"
#include "mmtmlp/model.hpp"
#include "mmtmlp/training.hpp"
#include "support.hpp"

using namespace mmtmlp;
using namespace mmtmlp::model;
using nn::Matrix;
using testing::random_matrix;

namespace {

ModelConfig tiny_config(ModelKind kind = ModelKind::mm_tmlp) {
  ModelConfig c;
  c.kind = kind;
  c.n_actions = 5;
  c.rgb_backend = RgbBackend::reference;
  c.reference = {.channels = 1, .height = 4, .width = 4, .patch = 2, .patch_dim = 3, .out_dim = 5};
  c.hp_hidden = 6;
  c.hp_dim = 4;
  c.head_hidden = 5;
  c.temporal.depth = 2;
  c.t_rgb = 3;
  c.t_hp = 5;
  return c;
}

StreamInputs tiny_inputs(const ModelConfig& c, std::mt19937_64& rng) {
  StreamInputs in;
  if (c.rgb_stream()) in.rgb = random_matrix(c.t_rgb, c.rgb_input_width(), rng);
  if (c.hp_stream()) in.hp = random_matrix(c.t_hp, handpose::kFrameFeatures, rng, 0.1);
  return in;
}

void randomize_biases(Model& m, std::mt19937_64& rng) {
  for (auto* p : m.parameters()) {
    if (!p->trainable) continue;
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta")) p->value = random_matrix(1, p->value.cols(), rng, 0.3);
    if (p->name.ends_with(".gamma")) {
      for (double& g : p->value.data()) g = 1.0 + 0.3 * std::normal_distribution<double>(0, 1)(rng);
    }
  }
}

}  // namespace

TEST_CASE("model kinds and config") {
  for (auto k : {ModelKind::rgb_seq, ModelKind::mm_tmlp, ModelKind::fusionnet, ModelKind::hp_mlp}) {
    CHECK(parse_model_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_model_kind("levit"), ConfigError);
  CHECK(is_sequence_model(ModelKind::rgb_seq));
  CHECK_FALSE(is_sequence_model(ModelKind::fusionnet));

  const ModelConfig c = tiny_config();
  const ModelConfig back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(model_config_from_json({{"kind", "mm_tmlp"}, {"hidden", 3}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json({{"temporal", {{"depht", 3}}}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json({{"hp_dim", "wide"}}), ConfigError);

  ModelConfig off = c;
  off.t_rgb = 0;
  off.t_hp = 0;
  CHECK_THROWS_AS(off.validate(), ConfigError);
  CHECK_THROWS_AS(make_model(off, 1), ConfigError);
  ModelConfig ratio = c;
  ratio.temporal.time_hidden_ratio = 0.0;
  CHECK_THROWS_AS(ratio.validate(), ConfigError);

  sampling::RateConfig rates;
  rates.f_rgb = 10;
  const ModelConfig r = ModelConfig{}.with_rates(rates);
  CHECK(r.t_rgb == 20);
  CHECK(r.t_hp == 60);
}

TEST_CASE("hand-pose extractor") {
  HpExtractor hp("hp", 256, 128, nn::Activation::gelu);
  std::mt19937_64 rng(1);
  hp.init_uniform(rng);
  const Matrix zeros(3, handpose::kFrameFeatures);
  const Matrix z = hp.forward(zeros);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 128);
  CHECK(nn::slice_rows(z, 0, 1) == nn::slice_rows(z, 2, 3));
  const Matrix pose = random_matrix(1, handpose::kFrameFeatures, rng);
  const Matrix a = hp.forward(pose);
  CHECK(a == hp.forward(pose));
  CHECK(a.all_finite());
  CHECK_THROWS_AS(hp.forward(Matrix(1, 125)), DimensionError);
}

TEST_CASE("RGB extractor backends") {
  std::mt19937_64 rng(2);
  ModelConfig c;
  c.rgb_feature_dim = 16;
  RgbExtractor pre("rgb", c);
  pre.init_uniform(rng);
  const Matrix v = random_matrix(4, 16, rng);
  CHECK(pre.forward(v) == v);
  CHECK(pre.macs_per_frame() == 0);
  std::vector<double> row(v.row(0).begin(), v.row(0).end());
  pre.flip(row);
  CHECK(std::equal(row.begin(), row.end(), v.row(0).begin()));

  c.rgb_backend = RgbBackend::reference;
  RgbExtractor ref("rgb", c);
  ref.init_uniform(rng);
  const Matrix zero_images(2, c.rgb_input_width());
  const Matrix out = ref.forward(zero_images);
  CHECK(out.cols() == 512);
  CHECK(nn::slice_rows(out, 0, 1) == nn::slice_rows(out, 1, 2));
  CHECK_THROWS_AS(ref.forward(Matrix(1, 10)), DimensionError);

  HpExtractor hp("hp", c.hp_hidden, c.hp_dim, c.activation);
  CHECK(ref.macs_per_frame() >= 20 * hp.macs_per_frame());

  // Image flip mirrors columns; doing it twice restores the frame.
  Matrix img = random_matrix(1, c.rgb_input_width(), rng);
  std::vector<double> pixels(img.row(0).begin(), img.row(0).end());
  ref.flip(pixels);
  CHECK(pixels[0] == img(0, c.reference.width - 1));
  ref.flip(pixels);
  CHECK(std::equal(pixels.begin(), pixels.end(), img.row(0).begin()));
}

TEST_CASE("temporal MLP") {
  std::mt19937_64 rng(3);
  TemporalMlpConfig cfg;
  TemporalMlp t("tm", 6, 4, cfg);
  t.init_uniform(rng);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix y = t.forward(x);
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 4);

  Matrix permuted = x;
  std::swap_ranges(permuted.row(0).begin(), permuted.row(0).end(), permuted.row(1).begin());
  const Matrix yp = t.forward(permuted);
  CHECK(nn::max_abs_diff(nn::slice_rows(yp, 5, 6), nn::slice_rows(y, 5, 6)) > 1e-6);

  CHECK_THROWS_AS(t.forward(random_matrix(5, 4, rng)), DimensionError);

  t.zero_residual_branches();
  CHECK(t.forward(x) == x);

  TemporalMlp one("one", 1, 4, cfg);
  one.init_uniform(rng);
  const Matrix single = one.forward(random_matrix(1, 4, rng));
  CHECK(single.rows() == 1);
  CHECK(single.cols() == 4);

  TemporalMlpConfig empty = cfg;
  empty.depth = 0;
  TemporalMlp identity("id", 6, 4, empty);
  CHECK(identity.forward(x) == x);
}

TEST_CASE("two-stream model shapes and head") {
  ModelConfig c;
  c.n_actions = 37;
  c.t_rgb = 20;
  c.t_hp = 60;
  auto m = make_model(c, 4);
  std::mt19937_64 rng(4);
  StreamInputs in{random_matrix(20, 512, rng), random_matrix(60, 126, rng, 0.1)};
  const Matrix logits = m->forward(in);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 37);
  CHECK(logits.all_finite());

  auto& mm = dynamic_cast<MmTmlp&>(*m);
  mm.head().first().weight().value.fill(0.0);
  mm.head().second().weight().value.fill(0.0);
  mm.head().second().bias().value = random_matrix(1, 37, rng);
  CHECK(m->forward(in) == mm.head().second().bias().value);
  StreamInputs other{random_matrix(20, 512, rng), random_matrix(60, 126, rng, 0.1)};
  CHECK(m->forward(other) == mm.head().second().bias().value);

  StreamInputs wrong{random_matrix(19, 512, rng), in.hp};
  CHECK_THROWS_AS(m->forward(wrong), DimensionError);
}

TEST_CASE("depth 0: logits depend only on the final step") {
  ModelConfig c = tiny_config();
  c.temporal.depth = 0;
  auto m = make_model(c, 5);
  std::mt19937_64 rng(5);
  StreamInputs in = tiny_inputs(c, rng);
  const Matrix base = m->forward(in);
  StreamInputs changed = in;
  for (std::size_t r = 0; r + 1 < changed.rgb.rows(); ++r) {
    for (double& v : changed.rgb.row(r)) v += 1.0;
  }
  for (std::size_t r = 0; r + 1 < changed.hp.rows(); ++r) {
    for (double& v : changed.hp.row(r)) v -= 0.5;
  }
  CHECK(m->forward(changed) == base);
  changed.rgb(c.t_rgb - 1, 0) += 1.0;
  CHECK(m->forward(changed) != base);
}

TEST_CASE("adding the hand stream leaves the RGB stream untouched") {
  ModelConfig c = tiny_config();
  auto both = make_model(c, 6);
  ModelConfig rgb_only_cfg = c;
  rgb_only_cfg.kind = ModelKind::rgb_seq;
  auto rgb_only = make_model(rgb_only_cfg, 7);
  CHECK(copy_shared_parameters(*both, *rgb_only) > 0);
  std::mt19937_64 rng(6);
  const StreamInputs in = tiny_inputs(c, rng);
  auto& a = dynamic_cast<MmTmlp&>(*both);
  auto& b = dynamic_cast<MmTmlp&>(*rgb_only);
  const Matrix fa = a.rgb_temporal().forward(a.rgb_extractor()->forward(in.rgb));
  const Matrix fb = b.rgb_temporal().forward(b.rgb_extractor()->forward(in.rgb));
  CHECK(fa == fb);
  CHECK(b.hp_extractor() == nullptr);
}

TEST_CASE("single-step two-stream model with zeroed residuals equals FusionNet") {
  for (auto backend : {RgbBackend::precomputed, RgbBackend::reference}) {
    ModelConfig c = tiny_config();
    c.rgb_backend = backend;
    c.rgb_feature_dim = 7;
    c.t_rgb = 1;
    c.t_hp = 1;
    auto mm = make_model(c, 8);
    ModelConfig fc = c;
    fc.kind = ModelKind::fusionnet;
    auto fusion = make_model(fc, 9);
    std::mt19937_64 rng(8);
    randomize_biases(*mm, rng);
    auto& m = dynamic_cast<MmTmlp&>(*mm);
    m.rgb_temporal().zero_residual_branches();
    m.hp_temporal().zero_residual_branches();
    const std::size_t copied = copy_shared_parameters(*mm, *fusion);
    CHECK(copied == fusion->parameters().size());
    for (int trial = 0; trial < 20; ++trial) {
      const StreamInputs in = tiny_inputs(c, rng);
      CHECK(nn::max_abs_diff(mm->forward(in), fusion->forward(in)) < 1e-12);
    }
  }
}

TEST_CASE("full two-stream model gradients match central differences") {
  ModelConfig c = tiny_config();
  auto m = make_model(c, 10);
  std::mt19937_64 rng(10);
  randomize_biases(*m, rng);
  const StreamInputs in = tiny_inputs(c, rng);
  const std::array<int, 1> label{3};
  auto loss = [&] { return nn::softmax_cross_entropy(m->forward(in), label).loss; };
  const auto params = m->parameters();
  nn::zero_grads(params);
  m->backward(nn::softmax_cross_entropy(m->forward(in), label).grad_logits);
  double worst = 0.0;
  for (auto* p : params) {
    if (!p->trainable) continue;
    const double err = testing::check_gradient(p->value, p->grad, loss);
    CAPTURE(p->name);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("single-frame model gradients") {
  for (auto kind : {ModelKind::fusionnet, ModelKind::hp_mlp}) {
    ModelConfig c = tiny_config(kind);
    auto m = make_model(c, 11);
    std::mt19937_64 rng(11);
    randomize_biases(*m, rng);
    const StreamInputs in = tiny_inputs(c, rng);
    const std::array<int, 1> label{1};
    auto loss = [&] { return nn::softmax_cross_entropy(m->forward(in), label).loss; };
    const auto params = m->parameters();
    nn::zero_grads(params);
    m->backward(nn::softmax_cross_entropy(m->forward(in), label).grad_logits);
    for (auto* p : params) {
      if (p->trainable) CHECK(testing::check_gradient(p->value, p->grad, loss) < 1e-4);
    }
  }
}

TEST_CASE("FusionNet on features") {
  ModelConfig c = tiny_config(ModelKind::fusionnet);
  auto m = make_model(c, 12);
  auto& f = dynamic_cast<FusionNet&>(*m);
  f.head().first().weight().value.fill(0.0);
  f.head().second().weight().value.fill(0.0);
  std::mt19937_64 rng(12);
  f.head().second().bias().value = random_matrix(1, c.n_actions, rng);
  CHECK(f.forward_features(Matrix(1, 5), Matrix(1, 4)) == f.head().second().bias().value);
  CHECK_THROWS_AS(f.forward_features(Matrix(1, 4), Matrix(1, 4)), DimensionError);
  const Matrix a = random_matrix(1, 5, rng);
  const Matrix b = random_matrix(1, 4, rng);
  CHECK(f.forward_features(a, b) == f.forward_features(a, b));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testing::temp_dir("checkpoint");
  for (auto kind : {ModelKind::mm_tmlp, ModelKind::rgb_seq, ModelKind::fusionnet, ModelKind::hp_mlp}) {
    ModelConfig c = tiny_config(kind);
    auto m = make_model(c, 13);
    std::mt19937_64 rng(13);
    randomize_biases(*m, rng);
    const std::string path = (dir / (std::string(to_string(kind)) + ".json")).string();
    save_checkpoint(path, *m, {{"note", "x"}});
    nlohmann::json meta;
    auto back = load_checkpoint(path, &meta);
    CHECK(meta.at("note") == "x");
    CHECK(back->kind() == kind);
    const StreamInputs in = tiny_inputs(c, rng);
    CHECK(back->forward(in) == m->forward(in));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), IoError);
}

namespace {

dataset::PreparedDataset small_prepared(dataset::SynthSpec spec = {}) {
  spec.n_takes = 4;
  spec.frames_per_take = 150;
  spec.feature_dim = 8;
  const auto data = dataset::synth_dataset(spec);
  return dataset::prepare_dataset(data, handpose::SkeletonTopology::hand_unit());
}

ModelConfig small_model(const dataset::PreparedDataset& p) {
  ModelConfig c;
  c.n_actions = p.n_actions;
  c.rgb_feature_dim = 8;
  c.hp_hidden = 16;
  c.hp_dim = 8;
  c.head_hidden = 16;
  c.temporal.depth = 1;
  return c;
}

}  // namespace

TEST_CASE("training: zero learning rate leaves parameters unchanged") {
  const auto prepared = small_prepared();
  sampling::RateConfig rates;
  rates.window_seconds = 1.0;
  rates.f_rgb = 10;
  dataset::WindowSplit split;
  split.train_takes = {0, 1};
  split.val_takes = {2};
  for (std::size_t e = 29; e < 150; e += 15) {
    split.train.push_back({0, e});
    split.val.push_back({2, e});
  }
  training::TrainOptions opts;
  opts.epochs = 3;
  opts.lr = 0.0;
  opts.batch_size = 4;
  const auto cfg = small_model(prepared);
  auto result = training::train(cfg, prepared, split, rates, opts);
  auto fresh = make_model(cfg.with_rates(rates), opts.seed);
  training::fit_input_scalers(*fresh, prepared, split.train_takes);
  const auto a = result.model->parameters();
  const auto b = fresh->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  REQUIRE(result.history.size() == 3);
  CHECK(result.history[0].val_loss == result.history[2].val_loss);
  CHECK(result.history[0].train_loss == doctest::Approx(result.history[2].train_loss).epsilon(1e-12));
}

TEST_CASE("training: a single window is memorized") {
  const auto prepared = small_prepared();
  sampling::RateConfig rates;
  rates.window_seconds = 1.0;
  rates.f_rgb = 10;
  rates.f_hp = 10;
  dataset::WindowSplit split;
  split.train_takes = {0};
  split.train = {{0, 100}};
  training::TrainOptions opts;
  opts.epochs = 200;
  opts.lr = 1e-2;
  opts.batch_size = 1;
  auto result = training::train(small_model(prepared), prepared, split, rates, opts);
  CHECK(result.history.back().train_loss < 0.01);
}

TEST_CASE("training is deterministic and validates its inputs") {
  const auto prepared = small_prepared();
  sampling::RateConfig rates;
  rates.window_seconds = 1.0;
  dataset::SplitOptions so;
  so.stride = 10;
  so.seed = 3;
  const auto data = dataset::synth_dataset([] {
    dataset::SynthSpec s;
    s.n_takes = 4;
    s.frames_per_take = 150;
    s.feature_dim = 8;
    return s;
  }());
  const auto split = dataset::split_and_window(data.takes, rates, so);
  training::TrainOptions opts;
  opts.epochs = 2;
  opts.augment.flip = true;
  opts.augment.jitter = 3;
  auto a = training::train(small_model(prepared), prepared, split, rates, opts);
  auto b = training::train(small_model(prepared), prepared, split, rates, opts);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_f1_action == b.history[i].val_f1_action);
  }

  ModelConfig too_small = small_model(prepared);
  too_small.n_actions = 2;
  CHECK_THROWS_AS(training::train(too_small, prepared, split, rates, opts), ConfigError);
  dataset::WindowSplit empty;
  CHECK_THROWS_AS(training::train(small_model(prepared), prepared, empty, rates, opts), DataError);
}

TEST_CASE("training: a non-finite loss is reported as divergence") {
  const auto prepared = small_prepared();
  sampling::RateConfig rates;
  rates.window_seconds = 1.0;
  dataset::WindowSplit split;
  split.train_takes = {0};
  split.train = {{0, 100}, {0, 120}};
  training::TrainOptions opts;
  opts.epochs = 3;
  opts.lr = 1e300;
  try {
    training::train(small_model(prepared), prepared, split, rates, opts);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
