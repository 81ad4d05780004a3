#include "mmtmlp/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmtmlp/error.hpp"

namespace mmtmlp::nn {

void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected relu or gelu)");
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

double gelu(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Matrix activation_forward(const Matrix& x, Activation kind) {
  Matrix out(x.rows(), x.cols());
  auto src = x.data();
  auto dst = out.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gelu(src[i]);
  }
  return out;
}

Matrix activation_backward(const Matrix& x, const Matrix& dy, Activation kind) {
  if (x.rows() != dy.rows() || x.cols() != dy.cols()) {
    throw DimensionError("activation backward shape mismatch: " + x.shape_string() + " vs " +
                         dy.shape_string());
  }
  Matrix dx(x.rows(), x.cols());
  auto xs = x.data();
  auto g = dy.data();
  auto out = dx.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > 0.0 ? g[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = g[i] * gelu_derivative(xs[i]);
  }
  return dx;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto dst = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      sum += dst[c];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

CrossEntropyResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape_string());
  }
  if (logits.rows() == 0 || logits.cols() == 0) throw DimensionError("cross entropy: empty logits");
  const auto n = static_cast<double>(logits.rows());
  CrossEntropyResult res;
  res.grad_logits = Matrix(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
      throw IndexError("cross entropy: label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(logits.cols()) + ")");
    }
    auto in = logits.row(r);
    auto g = res.grad_logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += std::exp(in[c] - mx);
    const double log_sum = std::log(sum) + mx;
    res.loss += (log_sum - in[static_cast<std::size_t>(label)]) / n;
    for (std::size_t c = 0; c < in.size(); ++c) g[c] = std::exp(in[c] - log_sum) / n;
    g[static_cast<std::size_t>(label)] -= 1.0 / n;
  }
  return res;
}

// ---------------------------------------------------------------------------

Matrix linear_forward(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  if (x.cols() != weight.cols()) {
    throw DimensionError("linear: input " + x.shape_string() + " incompatible with weight " +
                         weight.shape_string());
  }
  if (bias.size() != weight.rows()) {
    throw DimensionError("linear: bias " + bias.shape_string() + " incompatible with weight " +
                         weight.shape_string());
  }
  const std::size_t n = x.rows();
  const std::size_t in = weight.cols();
  const std::size_t out = weight.rows();
  Matrix y(n, out);
  const double* b = bias.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.row(i).data();
    double* yi = y.row(i).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = weight.row(o).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += wo[k] * xi[k];
      yi[o] = acc + b[o];
    }
  }
  return y;
}

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight_(join_name(name, "weight"), out, in), bias_(join_name(name, "bias"), 1, out) {}

void Linear::init_uniform(std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
  std::uniform_real_distribution<double> dist(-s, s);
  for (double& w : weight_.value.data()) w = dist(rng);
  bias_.value.fill(0.0);
}

Matrix Linear::forward(const Matrix& x) {
  Matrix y = linear_forward(x, weight_.value, bias_.value);
  input_ = x;
  has_input_ = true;
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  if (!has_input_) throw StateError("linear '" + weight_.name + "': backward called before forward");
  if (dy.rows() != input_.rows() || dy.cols() != out_features()) {
    throw DimensionError("linear backward: upstream " + dy.shape_string() + " vs expected " +
                         std::to_string(input_.rows()) + "x" + std::to_string(out_features()));
  }
  const std::size_t n = dy.rows();
  const std::size_t in = in_features();
  const std::size_t out = out_features();
  Matrix dx(n, in);
  double* gb = bias_.grad.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyi = dy.row(i).data();
    const double* xi = input_.row(i).data();
    double* dxi = dx.row(i).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyi[o];
      if (g == 0.0) continue;
      gb[o] += g;
      const double* wo = weight_.value.row(o).data();
      double* gwo = weight_.grad.row(o).data();
      for (std::size_t k = 0; k < in; ++k) {
        dxi[k] += g * wo[k];
        gwo[k] += g * xi[k];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

namespace {

void check_layer_norm_input(const Matrix& x, std::size_t dim) {
  if (x.cols() == 0) throw DimensionError("layer norm: empty input (D = 0)");
  if (x.cols() != dim) {
    throw DimensionError("layer norm: input " + x.shape_string() + " but gain has " +
                         std::to_string(dim) + " entries");
  }
}

/// Returns normalized rows; fills inv_std per row.
Matrix normalize_rows(const Matrix& x, double eps, std::vector<double>& inv_std) {
  const std::size_t d = x.cols();
  Matrix xhat(x.rows(), d);
  inv_std.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    auto out = xhat.row(r);
    for (std::size_t c = 0; c < d; ++c) out[c] = (in[c] - mean) * is;
  }
  return xhat;
}

}  // namespace

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
  check_layer_norm_input(x, gamma.size());
  if (beta.size() != gamma.size()) throw DimensionError("layer norm: gamma/beta size mismatch");
  if (!(eps > 0.0)) throw ConfigError("layer norm: eps must be positive");
  std::vector<double> inv_std;
  Matrix y = normalize_rows(x, eps, inv_std);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = gamma.data()[c] * row[c] + beta.data()[c];
  }
  return y;
}

LayerNorm::LayerNorm(std::string name, std::size_t dim, double eps)
    : gamma_(join_name(name, "gamma"), 1, dim), beta_(join_name(name, "beta"), 1, dim), eps_(eps) {
  if (dim == 0) throw DimensionError("layer norm '" + name + "': empty input (D = 0)");
  if (!(eps > 0.0)) throw ConfigError("layer norm '" + name + "': eps must be positive");
  gamma_.value.fill(1.0);
}

Matrix LayerNorm::forward(const Matrix& x) {
  check_layer_norm_input(x, gamma_.value.size());
  normalized_ = normalize_rows(x, eps_, inv_std_);
  has_input_ = true;
  Matrix y = normalized_;
  const double* g = gamma_.value.data().data();
  const double* b = beta_.value.data().data();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = g[c] * row[c] + b[c];
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy) {
  if (!has_input_) throw StateError("layer norm '" + gamma_.name + "': backward called before forward");
  if (dy.rows() != normalized_.rows() || dy.cols() != normalized_.cols()) {
    throw DimensionError("layer norm backward: upstream " + dy.shape_string() + " vs " +
                         normalized_.shape_string());
  }
  const std::size_t d = dy.cols();
  const auto dd = static_cast<double>(d);
  Matrix dx(dy.rows(), d);
  const double* g = gamma_.value.data().data();
  double* gg = gamma_.grad.data().data();
  double* gbeta = beta_.grad.data().data();
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto up = dy.row(r);
    auto xh = normalized_.row(r);
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      gg[c] += up[c] * xh[c];
      gbeta[c] += up[c];
      dxhat[c] = up[c] * g[c];
      sum_dxhat += dxhat[c];
      sum_dxhat_xhat += dxhat[c] * xh[c];
    }
    auto out = dx.row(r);
    const double scale = inv_std_[r] / dd;
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = scale * (dd * dxhat[c] - sum_dxhat - xh[c] * sum_dxhat_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Matrix ActivationLayer::forward(const Matrix& x) {
  input_ = x;
  has_input_ = true;
  return activation_forward(x, kind_);
}

Matrix ActivationLayer::backward(const Matrix& dy) {
  if (!has_input_) throw StateError("activation: backward called before forward");
  return activation_backward(input_, dy, kind_);
}

Mlp2::Mlp2(std::string name, std::size_t in, std::size_t hidden, std::size_t out, Activation act)
    : fc1_(join_name(name, "fc1"), in, hidden), act_(act), fc2_(join_name(name, "fc2"), hidden, out) {}

void Mlp2::init_uniform(std::mt19937_64& rng) {
  fc1_.init_uniform(rng);
  fc2_.init_uniform(rng);
}

Matrix Mlp2::forward(const Matrix& x) { return fc2_.forward(act_.forward(fc1_.forward(x))); }

Matrix Mlp2::backward(const Matrix& dy) { return fc1_.backward(act_.backward(fc2_.backward(dy))); }

// ---------------------------------------------------------------------------

Adam::Adam(ParameterList params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  first_moment_.reserve(params_.size());
  second_moment_.reserve(params_.size());
  for (const auto* p : params_) {
    first_moment_.emplace_back(p->value.size(), 0.0);
    second_moment_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace mmtmlp::nn
