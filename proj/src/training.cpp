#include "mmtmlp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "mmtmlp/bench.hpp"
#include "mmtmlp/error.hpp"

namespace mmtmlp::training {

namespace {

std::size_t argmax(const nn::Matrix& logits) {
  auto row = logits.row(0);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (epoch + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<nn::Matrix> snapshot(const nn::ParameterList& params) {
  std::vector<nn::Matrix> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const nn::ParameterList& params, const std::vector<nn::Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

Evaluation evaluate(model::Model& m, const dataset::PreparedDataset& data, std::span<const dataset::WindowRef> windows,
                    const sampling::RateConfig& rates) {
  Evaluation ev;
  if (windows.empty()) return ev;
  std::vector<int> verb_pred;
  std::vector<int> verb_true;
  for (const auto& ref : windows) {
    const auto w = dataset::make_window(data, ref, rates);
    const nn::Matrix logits = m.forward(w);
    const int label = w.label;
    const std::array<int, 1> lab{label};
    ev.loss += nn::softmax_cross_entropy(logits, lab).loss;
    const int pred = static_cast<int>(argmax(logits));
    ev.predictions.push_back(pred);
    ev.labels.push_back(label);
    verb_pred.push_back(data.action_to_verb.at(static_cast<std::size_t>(pred)));
    verb_true.push_back(w.verb);
  }
  ev.loss /= static_cast<double>(windows.size());
  ev.f1_action = bench::macro_f1(ev.predictions, ev.labels, data.n_actions);
  ev.f1_verb = bench::macro_f1(verb_pred, verb_true, std::max<std::size_t>(data.n_verbs, 1));
  return ev;
}

void fit_input_scalers(model::Model& m, const dataset::PreparedDataset& data, std::span<const std::size_t> takes) {
  if (auto* hp = m.hp_extractor()) {
    std::size_t rows = 0;
    for (std::size_t t : takes) rows += data.takes[t].hp.size();
    nn::Matrix all(rows, handpose::kFrameFeatures);
    std::size_t r = 0;
    for (std::size_t t : takes) {
      for (const auto& f : data.takes[t].hp) {
        const auto flat = handpose::flatten(f);
        std::copy(flat.begin(), flat.end(), all.row(r++).begin());
      }
    }
    hp->scaler().fit(all);
  }
  if (auto* rgb = m.rgb_extractor(); rgb != nullptr && rgb->backend() == model::RgbBackend::precomputed) {
    std::size_t rows = 0;
    std::size_t cols = 0;
    for (std::size_t t : takes) {
      rows += data.takes[t].rgb.rows();
      cols = data.takes[t].rgb.cols();
    }
    if (rows == 0) return;
    nn::Matrix all(rows, cols);
    std::size_t r = 0;
    for (std::size_t t : takes) {
      const auto& src = data.takes[t].rgb;
      for (std::size_t i = 0; i < src.rows(); ++i) {
        if (src.cols() != cols) throw DataError("RGB feature width differs between takes");
        std::copy(src.row(i).begin(), src.row(i).end(), all.row(r++).begin());
      }
    }
    rgb->scaler().fit(all);
  }
}

TrainResult train(const model::ModelConfig& cfg, const dataset::PreparedDataset& data,
                  const dataset::WindowSplit& split, const sampling::RateConfig& rates, const TrainOptions& opts,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (split.train.empty()) throw DataError("training split contains no windows");
  if (cfg.n_actions < data.n_actions) {
    throw ConfigError("model has " + std::to_string(cfg.n_actions) + " outputs but the dataset has " +
                      std::to_string(data.n_actions) + " action classes");
  }
  if (opts.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(opts.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");

  TrainResult result;
  result.model = model::make_model(cfg.with_rates(rates), opts.seed);
  model::Model& m = *result.model;
  if (opts.fit_input_scalers) fit_input_scalers(m, data, split.train_takes);
  if (m.rgb_extractor() == nullptr && opts.augment.feature_dropout > 0.0) {
    throw ConfigError("feature dropout requested for a model without an RGB stream");
  }

  const nn::ParameterList params = m.parameters();
  nn::Adam adam(params, nn::AdamOptions{.lr = opts.lr});
  dataset::AugmentContext ctx{&data, rates, {}};
  if (auto* rgb = m.rgb_extractor()) ctx.rgb_flip = [rgb](std::span<double> f) { rgb->flip(f); };

  const auto& selection = split.val.empty() ? split.train : split.val;
  double best_f1 = -1.0;
  std::vector<nn::Matrix> best = snapshot(params);
  std::vector<std::size_t> order(split.train.size());

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(opts.seed, epoch, 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opts.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      nn::zero_grads(params);
      for (std::size_t i = start; i < stop; ++i) {
        auto w = dataset::make_window(data, split.train[order[i]], rates);
        if (!opts.augment.empty()) w = dataset::augment(w, opts.augment, mix_seed(opts.seed, epoch, i + 1), ctx);
        const nn::Matrix logits = m.forward(w);
        const std::array<int, 1> label{w.label};
        auto ce = nn::softmax_cross_entropy(logits, label);
        if (!std::isfinite(ce.loss)) {
          throw DivergenceError(static_cast<int>(epoch), opts.lr,
                                "training diverged at epoch " + std::to_string(epoch) + " (lr " +
                                    std::to_string(opts.lr) + "): non-finite loss");
        }
        loss_sum += ce.loss;
        for (double& g : ce.grad_logits.data()) g *= scale;
        m.backward(ce.grad_logits);
      }
      adam.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const Evaluation ev = evaluate(m, data, selection, rates);
    if (!std::isfinite(ev.loss)) {
      throw DivergenceError(static_cast<int>(epoch), opts.lr,
                            "training diverged at epoch " + std::to_string(epoch) + " (lr " +
                                std::to_string(opts.lr) + "): non-finite validation loss");
    }
    rec.val_loss = ev.loss;
    rec.val_f1_action = ev.f1_action;
    rec.val_f1_verb = ev.f1_verb;
    result.history.push_back(rec);
    if (ev.f1_action > best_f1) {
      best_f1 = ev.f1_action;
      best = snapshot(params);
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  restore(params, best);
  return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history '" + path + "'");
  out << "epoch,train_loss,val_loss,val_f1_action,val_f1_verb\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_f1_action, r.val_f1_verb);
    out << buf;
  }
  if (!out) throw IoError("failed writing history '" + path + "'");
}

}  // namespace mmtmlp::training
