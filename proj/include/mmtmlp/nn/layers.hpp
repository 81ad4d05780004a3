#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mmtmlp/nn/matrix.hpp"

namespace mmtmlp::nn {

/// A named tensor with its gradient buffer. Shapes are fixed at construction.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::size_t rows, std::size_t cols, bool is_trainable = true)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), trainable(is_trainable) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParameterList = std::vector<Parameter*>;

void zero_grads(const ParameterList& params);

/// Prefix every parameter name with `prefix.` (used when composing modules).
std::string join_name(std::string_view prefix, std::string_view name);

enum class Activation { relu, gelu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
double gelu(double x);
double gelu_derivative(double x);

Matrix activation_forward(const Matrix& x, Activation kind);
/// d(loss)/dx given the forward input x and upstream dy.
Matrix activation_backward(const Matrix& x, const Matrix& dy, Activation kind);

/// Row-wise softmax, stabilized by max subtraction.
Matrix softmax(const Matrix& logits);

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean negative log-likelihood over rows and its gradient (softmax - onehot) / N.
CrossEntropyResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Fully connected layer, y = x W^T + b, with W stored [out x in].
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  /// uniform(-s, s) with s = sqrt(6 / (in + out)); bias set to zero.
  void init_uniform(std::mt19937_64& rng);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  std::size_t in_features() const noexcept { return weight_.value.cols(); }
  std::size_t out_features() const noexcept { return weight_.value.rows(); }
  std::uint64_t macs_per_row() const noexcept { return in_features() * out_features(); }

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  const Parameter& weight() const noexcept { return weight_; }
  const Parameter& bias() const noexcept { return bias_; }

  void collect(ParameterList& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
  Matrix input_;
  bool has_input_ = false;
};

/// Stateless linear map used by Linear; exposed for direct testing.
Matrix linear_forward(const Matrix& x, const Matrix& weight, const Matrix& bias);

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps);

/// Per-row normalization over the feature axis with learnable gain and shift.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t dim, double eps = 1e-5);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  Parameter& gamma() noexcept { return gamma_; }
  Parameter& beta() noexcept { return beta_; }

  void collect(ParameterList& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  Parameter gamma_;
  Parameter beta_;
  double eps_ = 1e-5;
  Matrix normalized_;
  std::vector<double> inv_std_;
  bool has_input_ = false;
};

class ActivationLayer {
 public:
  explicit ActivationLayer(Activation kind = Activation::gelu) : kind_(kind) {}

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);
  Activation kind() const noexcept { return kind_; }

 private:
  Activation kind_;
  Matrix input_;
  bool has_input_ = false;
};

/// Linear -> activation -> Linear.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(std::string name, std::size_t in, std::size_t hidden, std::size_t out, Activation act);

  void init_uniform(std::mt19937_64& rng);
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  Linear& first() noexcept { return fc1_; }
  Linear& second() noexcept { return fc2_; }
  const Linear& first() const noexcept { return fc1_; }
  const Linear& second() const noexcept { return fc2_; }
  std::uint64_t macs_per_row() const noexcept { return fc1_.macs_per_row() + fc2_.macs_per_row(); }

  void collect(ParameterList& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }

 private:
  Linear fc1_;
  ActivationLayer act_;
  Linear fc2_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Non-trainable entries are skipped.
class Adam {
 public:
  Adam(ParameterList params, AdamOptions options = {});

  void step();
  std::uint64_t step_count() const noexcept { return step_count_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  ParameterList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::uint64_t step_count_ = 0;
};

}  // namespace mmtmlp::nn
