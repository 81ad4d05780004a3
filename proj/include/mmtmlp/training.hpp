#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmtmlp/dataset.hpp"
#include "mmtmlp/model.hpp"

namespace mmtmlp::training {

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  dataset::AugmentOps augment;
  /// Fit the fixed input standardization on the training split before the first epoch.
  bool fit_input_scalers = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1_action = 0.0;
  double val_f1_verb = 0.0;
};

struct TrainResult {
  std::unique_ptr<model::Model> model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

struct Evaluation {
  double loss = 0.0;
  double f1_action = 0.0;
  double f1_verb = 0.0;
  std::vector<int> predictions;
  std::vector<int> labels;
};

/// Argmax predictions and macro F1 (action, and verb through the action->verb map).
Evaluation evaluate(model::Model& m, const dataset::PreparedDataset& data, std::span<const dataset::WindowRef> windows,
                    const sampling::RateConfig& rates);

/// Fits each stream's input scaler on every native frame of the given takes.
void fit_input_scalers(model::Model& m, const dataset::PreparedDataset& data, std::span<const std::size_t> takes);

/// Mini-batch Adam on softmax cross-entropy. Selection uses validation action macro F1
/// (training windows when no validation split exists). Throws DivergenceError on a
/// non-finite loss.
TrainResult train(const model::ModelConfig& cfg, const dataset::PreparedDataset& data,
                  const dataset::WindowSplit& split, const sampling::RateConfig& rates, const TrainOptions& opts,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Writes the per-epoch history as CSV.
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace mmtmlp::training
