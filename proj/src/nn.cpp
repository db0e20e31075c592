#include "postrisk/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "postrisk/rng.hpp"

namespace postrisk::nn {

template <typename T>
Tensor2D<T>::Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) throw ShapeError("tensor storage does not match its shape");
}

// ---------------------------------------------------------------- conv1d

template <typename T>
Tensor2D<T> conv1d_forward(MatrixView<T> x, const Conv1dParams<T>& p) {
  if (x.cols != p.in_channels) {
    throw ShapeError("conv1d: input has " + std::to_string(x.cols) + " channels, kernel expects " +
                     std::to_string(p.in_channels));
  }
  if (x.rows < p.width) {
    throw ShapeError("conv1d: sequence length " + std::to_string(x.rows) + " shorter than kernel width " +
                     std::to_string(p.width));
  }
  const std::size_t out_rows = x.rows - p.width + 1;
  const std::size_t co = p.out_channels;
  Tensor2D<T> out(out_rows, co);
  auto y = out.values();
  for (std::size_t t = 0; t < out_rows; ++t) std::copy(p.bias.begin(), p.bias.end(), y.begin() + t * co);

  // Scatter each non-zero input entry into the outputs it feeds. Post
  // embeddings and padding rows are mostly zeros, so this skips most work.
  for (std::size_t r = 0; r < x.rows; ++r) {
    const std::size_t i_lo = r >= out_rows ? r - out_rows + 1 : 0;
    const std::size_t i_hi = std::min(p.width - 1, r);
    for (std::size_t c = 0; c < x.cols; ++c) {
      const T xv = x(r, c);
      if (xv == T{0}) continue;
      for (std::size_t i = i_lo; i <= i_hi; ++i) {
        const T* k = &p.kernel[(i * p.in_channels + c) * co];
        T* yo = &y[(r - i) * co];
        for (std::size_t o = 0; o < co; ++o) yo[o] += xv * k[o];
      }
    }
  }
  return out;
}

template <typename T>
void conv1d_backward_into(MatrixView<T> x, const Conv1dParams<T>& p, const Tensor2D<T>& grad_out,
                          Conv1dParams<T>& grads, Tensor2D<T>* grad_x) {
  if (x.cols != p.in_channels || x.rows < p.width || grad_out.rows() != x.rows - p.width + 1 ||
      grad_out.cols() != p.out_channels) {
    throw ShapeError("conv1d_backward: shapes inconsistent with forward");
  }
  if (grads.kernel.size() != p.kernel.size() || grads.bias.size() != p.bias.size()) {
    throw ShapeError("conv1d_backward: gradient buffer has the wrong shape");
  }
  const std::size_t out_rows = grad_out.rows();
  const std::size_t co = p.out_channels;
  auto g = grad_out.values();

  for (std::size_t t = 0; t < out_rows; ++t) {
    for (std::size_t o = 0; o < co; ++o) grads.bias[o] += g[t * co + o];
  }

  for (std::size_t r = 0; r < x.rows; ++r) {
    const std::size_t i_lo = r >= out_rows ? r - out_rows + 1 : 0;
    const std::size_t i_hi = std::min(p.width - 1, r);
    for (std::size_t c = 0; c < x.cols; ++c) {
      const T xv = x(r, c);
      if (xv == T{0}) continue;
      for (std::size_t i = i_lo; i <= i_hi; ++i) {
        T* gk = &grads.kernel[(i * p.in_channels + c) * co];
        const T* go = &g[(r - i) * co];
        for (std::size_t o = 0; o < co; ++o) gk[o] += xv * go[o];
      }
    }
  }

  if (grad_x) {
    *grad_x = Tensor2D<T>(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const std::size_t i_lo = r >= out_rows ? r - out_rows + 1 : 0;
      const std::size_t i_hi = std::min(p.width - 1, r);
      for (std::size_t i = i_lo; i <= i_hi; ++i) {
        const T* go = &g[(r - i) * co];
        for (std::size_t c = 0; c < x.cols; ++c) {
          const T* k = &p.kernel[(i * p.in_channels + c) * co];
          T acc{0};
          for (std::size_t o = 0; o < co; ++o) acc += go[o] * k[o];
          (*grad_x)(r, c) += acc;
        }
      }
    }
  }
}

template <typename T>
Conv1dGrads<T> conv1d_backward(MatrixView<T> x, const Conv1dParams<T>& p, const Tensor2D<T>& grad_out,
                               bool want_grad_x) {
  Conv1dParams<T> grads(p.width, p.in_channels, p.out_channels);
  Conv1dGrads<T> out;
  conv1d_backward_into(x, p, grad_out, grads, want_grad_x ? &out.grad_x : nullptr);
  out.grad_kernel = std::move(grads.kernel);
  out.grad_bias = std::move(grads.bias);
  return out;
}

// ---------------------------------------------------------------- relu / pool / dropout

template <typename T>
Tensor2D<T> relu_forward(const Tensor2D<T>& x) {
  Tensor2D<T> out = x;
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
Tensor2D<T> relu_backward(const Tensor2D<T>& activated, const Tensor2D<T>& grad_out) {
  if (activated.rows() != grad_out.rows() || activated.cols() != grad_out.cols()) {
    throw ShapeError("relu_backward: shape mismatch");
  }
  Tensor2D<T> out = grad_out;
  auto a = activated.values();
  auto g = out.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(a[i] > T{0})) g[i] = T{0};
  }
  return out;
}

template <typename T>
PoolResult<T> maxpool_forward(const Tensor2D<T>& x, std::size_t size) {
  if (size == 0) throw ShapeError("maxpool: window size must be positive");
  PoolResult<T> result;
  result.input_rows = x.rows();
  const std::size_t out_rows = x.rows() / size;
  const std::size_t cols = x.cols();
  result.out = Tensor2D<T>(out_rows, cols);
  result.argmax.resize(out_rows * cols);
  for (std::size_t t = 0; t < out_rows; ++t) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = t * size;
      for (std::size_t r = t * size + 1; r < (t + 1) * size; ++r) {
        if (x(r, c) > x(best, c)) best = r;
      }
      result.out(t, c) = x(best, c);
      result.argmax[t * cols + c] = static_cast<std::uint32_t>(best);
    }
  }
  return result;
}

template <typename T>
Tensor2D<T> maxpool_backward(const PoolResult<T>& pool, const Tensor2D<T>& grad_out) {
  if (grad_out.rows() != pool.out.rows() || grad_out.cols() != pool.out.cols()) {
    throw ShapeError("maxpool_backward: shape mismatch");
  }
  const std::size_t cols = grad_out.cols();
  Tensor2D<T> grad_in(pool.input_rows, cols);
  for (std::size_t t = 0; t < grad_out.rows(); ++t) {
    for (std::size_t c = 0; c < cols; ++c) grad_in(pool.argmax[t * cols + c], c) += grad_out(t, c);
  }
  return grad_in;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor2D<T>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  DropoutResult<T> result{x, {}};
  if (!training || rate == 0.0) return result;
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  result.scale.resize(x.size());
  auto y = result.out.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    result.scale[i] = rng.bernoulli(rate) ? T{0} : keep_scale;
    y[i] *= result.scale[i];
  }
  return result;
}

template <typename T>
Tensor2D<T> dropout_backward(const DropoutResult<T>& dropout, const Tensor2D<T>& grad_out) {
  if (grad_out.rows() != dropout.out.rows() || grad_out.cols() != dropout.out.cols()) {
    throw ShapeError("dropout_backward: shape mismatch");
  }
  Tensor2D<T> out = grad_out;
  if (dropout.scale.empty()) return out;
  auto g = out.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= dropout.scale[i];
  return out;
}

// ---------------------------------------------------------------- dense / loss

template <typename T>
Tensor2D<T> dense_forward(const Tensor2D<T>& x, const DenseParams<T>& p) {
  if (x.size() != p.in) {
    throw ShapeError("dense: input length " + std::to_string(x.size()) + " does not match " + std::to_string(p.in));
  }
  Tensor2D<T> out(1, p.out, T{0});
  auto y = out.values();
  std::copy(p.bias.begin(), p.bias.end(), y.begin());
  auto xv = x.values();
  for (std::size_t i = 0; i < p.in; ++i) {
    const T a = xv[i];
    if (a == T{0}) continue;
    const T* w = &p.weights[i * p.out];
    for (std::size_t o = 0; o < p.out; ++o) y[o] += a * w[o];
  }
  return out;
}

template <typename T>
void dense_backward_into(const Tensor2D<T>& x, const DenseParams<T>& p, const Tensor2D<T>& grad_out,
                         DenseParams<T>& grads, Tensor2D<T>* grad_x) {
  if (x.size() != p.in || grad_out.size() != p.out || grads.weights.size() != p.weights.size()) {
    throw ShapeError("dense_backward: shape mismatch");
  }
  auto xv = x.values();
  auto g = grad_out.values();
  for (std::size_t o = 0; o < p.out; ++o) grads.bias[o] += g[o];
  for (std::size_t i = 0; i < p.in; ++i) {
    const T a = xv[i];
    if (a == T{0}) continue;
    T* gw = &grads.weights[i * p.out];
    for (std::size_t o = 0; o < p.out; ++o) gw[o] += a * g[o];
  }
  if (grad_x) {
    *grad_x = Tensor2D<T>(x.rows(), x.cols());
    auto gx = grad_x->values();
    for (std::size_t i = 0; i < p.in; ++i) {
      const T* w = &p.weights[i * p.out];
      T acc{0};
      for (std::size_t o = 0; o < p.out; ++o) acc += w[o] * g[o];
      gx[i] = acc;
    }
  }
}

template <typename T>
XentResult<T> softmax_xent(std::span<const T> logits, std::size_t label) {
  if (logits.empty() || label >= logits.size()) throw std::invalid_argument("softmax_xent: label out of range");
  for (T l : logits) {
    if (!std::isfinite(l)) throw std::domain_error("softmax_xent: non-finite logit");
  }
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  for (T l : logits) sum += std::exp(l - peak);
  const T lse = peak + std::log(sum);

  XentResult<T> r;
  r.loss = lse - logits[label];
  r.probs.resize(logits.size());
  r.grad_logits.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    r.probs[k] = std::exp(logits[k] - lse);
    r.grad_logits[k] = r.probs[k] - (k == label ? T{1} : T{0});
  }
  return r;
}

// ---------------------------------------------------------------- shapes

std::string ShapeLadder::describe() const {
  std::ostringstream s;
  s << "(" << input_rows << "," << input_cols << ")->conv(" << conv1_rows << "," << conv1_cols << ")->pool("
    << pool1_rows << "," << conv1_cols << ")->conv(" << conv2_rows << "," << conv2_cols << ")->pool(" << pool2_rows
    << "," << conv2_cols << ")->flatten " << flatten << "->" << hidden << "->" << outputs;
  return s.str();
}

std::size_t minimum_sequence_length(const Architecture& a) {
  if (a.conv1_width == 0 || a.conv2_width == 0 || a.pool_size == 0) {
    throw ShapeError("kernel widths and pool size must be positive");
  }
  // pool2 >= 1 needs conv2 >= p, so pool1 >= k2 + p - 1, so conv1 >= p*(k2 + p - 1).
  return a.pool_size * (a.conv2_width + a.pool_size - 1) + a.conv1_width - 1;
}

ShapeLadder shape_ladder(const Architecture& a) {
  if (a.dim == 0 || a.conv1_filters == 0 || a.conv2_filters == 0 || a.hidden_units == 0 || a.classes < 2) {
    throw ShapeError("architecture has an empty layer");
  }
  const std::size_t minimum = minimum_sequence_length(a);
  if (a.n_posts < minimum) {
    throw ShapeError("sequence too short: n=" + std::to_string(a.n_posts) + " but every layer needs n >= " +
                     std::to_string(minimum));
  }
  ShapeLadder s;
  s.input_rows = a.n_posts;
  s.input_cols = a.dim;
  s.conv1_rows = a.n_posts - a.conv1_width + 1;
  s.conv1_cols = a.conv1_filters;
  s.pool1_rows = s.conv1_rows / a.pool_size;
  s.conv2_rows = s.pool1_rows - a.conv2_width + 1;
  s.conv2_cols = a.conv2_filters;
  s.pool2_rows = s.conv2_rows / a.pool_size;
  s.flatten = s.pool2_rows * s.conv2_cols;
  s.hidden = a.hidden_units;
  s.outputs = a.classes;
  return s;
}

std::size_t parameter_count(const Architecture& a) {
  const ShapeLadder s = shape_ladder(a);
  return (a.conv1_width * a.dim * a.conv1_filters + a.conv1_filters) +
         (a.conv2_width * a.conv1_filters * a.conv2_filters + a.conv2_filters) +
         (s.flatten * a.hidden_units + a.hidden_units) + (a.hidden_units * a.classes + a.classes);
}

// ---------------------------------------------------------------- params

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const Architecture& a) {
  const ShapeLadder s = shape_ladder(a);
  ModelParams p;
  p.conv1 = Conv1dParams<T>(a.conv1_width, a.dim, a.conv1_filters);
  p.conv2 = Conv1dParams<T>(a.conv2_width, a.conv1_filters, a.conv2_filters);
  p.hidden = DenseParams<T>(s.flatten, a.hidden_units);
  p.output = DenseParams<T>(a.hidden_units, a.classes);
  return p;
}

template <typename T>
std::array<std::span<T>, 8> ModelParams<T>::tensors() {
  return {conv1.kernel, conv1.bias, conv2.kernel, conv2.bias, hidden.weights, hidden.bias, output.weights, output.bias};
}

template <typename T>
std::array<std::span<const T>, 8> ModelParams<T>::tensors() const {
  return {conv1.kernel, conv1.bias, conv2.kernel, conv2.bias, hidden.weights, hidden.bias, output.weights, output.bias};
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

template <typename T>
void ModelParams<T>::fill(T value) {
  for (auto t : tensors()) std::fill(t.begin(), t.end(), value);
}

template <typename T>
void ModelParams<T>::add(const ModelParams& other) {
  auto dst = tensors();
  auto src = other.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].size() != src[k].size()) throw ShapeError("ModelParams::add: shape mismatch");
    for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] += src[k][i];
  }
}

template <typename T>
void ModelParams<T>::scale(T factor) {
  for (auto t : tensors()) {
    for (T& v : t) v *= factor;
  }
}

template <typename T>
Model<T> build_model(const Architecture& arch, const Hyperparams& hp, std::uint64_t seed) {
  if (!(hp.dropout_rate >= 0.0 && hp.dropout_rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Model<T> model{arch, hp, ModelParams<T>::zeros(arch)};
  auto glorot = [](std::vector<T>& w, double fan_in, double fan_out, std::uint64_t stream) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(stream);
    for (T& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
  };
  auto& p = model.params;
  glorot(p.conv1.kernel, double(arch.conv1_width * arch.dim), double(arch.conv1_width * arch.conv1_filters),
         derive_seed(seed, 1));
  glorot(p.conv2.kernel, double(arch.conv2_width * arch.conv1_filters),
         double(arch.conv2_width * arch.conv2_filters), derive_seed(seed, 2));
  glorot(p.hidden.weights, double(p.hidden.in), double(p.hidden.out), derive_seed(seed, 3));
  glorot(p.output.weights, double(p.output.in), double(p.output.out), derive_seed(seed, 4));
  return model;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
  Model<To> out{model.arch, model.hp, ModelParams<To>::zeros(model.arch)};
  auto dst = out.params.tensors();
  auto src = model.params.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] = static_cast<To>(src[k][i]);
  }
  return out;
}

// ---------------------------------------------------------------- forward / backward

template <typename T>
ForwardPass<T> forward(const Model<T>& model, MatrixView<T> x, Mode mode, std::uint64_t seed) {
  const Architecture& a = model.arch;
  if (x.rows != a.n_posts || x.cols != a.dim) {
    throw ShapeError("forward: input is (" + std::to_string(x.rows) + "," + std::to_string(x.cols) +
                     "), model expects (" + std::to_string(a.n_posts) + "," + std::to_string(a.dim) + ")");
  }
  const bool training = mode == Mode::Train;
  const auto& p = model.params;
  ForwardPass<T> pass;
  auto& c = pass.cache;
  c.input = x;
  c.act1 = relu_forward(conv1d_forward(x, p.conv1));
  c.pool1 = maxpool_forward(c.act1, a.pool_size);
  c.drop1 = dropout_forward(c.pool1.out, model.hp.dropout_rate, training, derive_seed(seed, 1));
  c.act2 = relu_forward(conv1d_forward(c.drop1.out.view(), p.conv2));
  c.pool2 = maxpool_forward(c.act2, a.pool_size);
  c.drop2 = dropout_forward(c.pool2.out, model.hp.dropout_rate, training, derive_seed(seed, 2));
  c.flat = c.drop2.out.flattened();
  c.hidden = relu_forward(dense_forward(c.flat, p.hidden));
  Tensor2D<T> logits = dense_forward(c.hidden, p.output);
  pass.logits.assign(logits.values().begin(), logits.values().end());
  return pass;
}

template <typename T>
void backward_into(const Model<T>& model, const ForwardCache<T>& c, std::span<const T> grad_logits,
                   ModelParams<T>& grads) {
  const auto& p = model.params;
  if (grad_logits.size() != p.output.out) throw ShapeError("backward: gradient has the wrong number of logits");
  Tensor2D<T> g_logits(1, grad_logits.size(), std::vector<T>(grad_logits.begin(), grad_logits.end()));

  Tensor2D<T> g_hidden;
  dense_backward_into(c.hidden, p.output, g_logits, grads.output, &g_hidden);
  g_hidden = relu_backward(c.hidden, g_hidden);

  Tensor2D<T> g_flat;
  dense_backward_into(c.flat, p.hidden, g_hidden, grads.hidden, &g_flat);
  Tensor2D<T> g_drop2(c.drop2.out.rows(), c.drop2.out.cols(),
                      std::vector<T>(g_flat.values().begin(), g_flat.values().end()));

  Tensor2D<T> g_act2 = relu_backward(c.act2, maxpool_backward(c.pool2, dropout_backward(c.drop2, g_drop2)));
  Tensor2D<T> g_drop1;
  conv1d_backward_into(c.drop1.out.view(), p.conv2, g_act2, grads.conv2, &g_drop1);

  Tensor2D<T> g_act1 = relu_backward(c.act1, maxpool_backward(c.pool1, dropout_backward(c.drop1, g_drop1)));
  conv1d_backward_into<T>(c.input, p.conv1, g_act1, grads.conv1, nullptr);
}

template <typename T>
ModelParams<T> backward(const Model<T>& model, const ForwardCache<T>& cache, std::span<const T> grad_logits) {
  ModelParams<T> grads = ModelParams<T>::zeros(model.arch);
  backward_into(model, cache, grad_logits, grads);
  return grads;
}

// ---------------------------------------------------------------- adam

template <typename T>
AdamState<T> make_adam_state(const Architecture& arch, const AdamConfig& config) {
  return {config, ModelParams<T>::zeros(arch), ModelParams<T>::zeros(arch), 0};
}

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].size() != p[k].size() || m[k].size() != p[k].size() || v[k].size() != p[k].size()) {
      throw ShapeError("adam_step: parameter, gradient and moment shapes differ");
    }
    for (T x : g[k]) {
      if (!std::isfinite(x)) throw std::domain_error("adam_step: non-finite gradient");
    }
  }

  const AdamConfig& cfg = state.config;
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const T gi = g[k][i];
      m[k][i] = b1 * m[k][i] + (T{1} - b1) * gi;
      v[k][i] = b2 * v[k][i] + (T{1} - b2) * gi * gi;
      const double m_hat = static_cast<double>(m[k][i]) / correction1;
      const double v_hat = static_cast<double>(v[k][i]) / correction2;
      p[k][i] -= static_cast<T>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------- checkpoint

namespace {

template <typename T>
void put_params(detail::ByteWriter& w, const ModelParams<T>& params) {
  for (auto t : params.tensors()) {
    w.put(static_cast<std::uint64_t>(t.size()));
    w.put_reals(t);
  }
}

template <typename Stored, typename T>
void get_params(detail::ByteReader& r, ModelParams<T>& params) {
  for (auto t : params.tensors()) {
    const auto n = r.get<std::uint64_t>("tensor length");
    if (n != t.size()) {
      r.fail(FormatErrorKind::Corrupt,
             "tensor length " + std::to_string(n) + " does not match the architecture (" + std::to_string(t.size()) + ")");
    }
    r.require(n * sizeof(Stored), "tensor values");
    std::vector<Stored> raw(n);
    r.get_reals(std::span<Stored>(raw), "tensor values");
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(raw[i]);
  }
}

std::vector<std::size_t> ladder_fields(const ShapeLadder& s) {
  return {s.input_rows, s.input_cols, s.conv1_rows, s.conv1_cols, s.pool1_rows, s.conv2_rows,
          s.conv2_cols, s.pool2_rows, s.flatten,    s.hidden,     s.outputs};
}

template <typename Stored, typename T>
Checkpoint<T> read_body(detail::ByteReader& r) {
  Architecture a;
  for (std::size_t* f : {&a.n_posts, &a.dim, &a.conv1_width, &a.conv1_filters, &a.conv2_width, &a.conv2_filters,
                         &a.hidden_units, &a.classes, &a.pool_size}) {
    *f = r.get<std::uint32_t>("architecture");
  }
  Hyperparams hp;
  hp.dropout_rate = r.get_f64("dropout rate");

  ShapeLadder ladder;
  try {
    ladder = shape_ladder(a);
  } catch (const ShapeError& e) {
    r.fail(FormatErrorKind::Corrupt, std::string("invalid architecture: ") + e.what());
  }
  const auto expected = ladder_fields(ladder);
  const auto stored_len = r.get<std::uint32_t>("shape ladder length");
  if (stored_len != expected.size()) r.fail(FormatErrorKind::Corrupt, "shape ladder has the wrong length");
  for (std::size_t e : expected) {
    if (r.get<std::uint32_t>("shape ladder") != e) {
      r.fail(FormatErrorKind::Corrupt, "stored shape ladder disagrees with the architecture");
    }
  }

  Checkpoint<T> ck{Model<T>{a, hp, ModelParams<T>::zeros(a)}, make_adam_state<T>(a)};
  get_params<Stored>(r, ck.model.params);
  ck.adam.t = r.get<std::uint64_t>("adam step");
  ck.adam.config.lr = r.get_f64("adam lr");
  ck.adam.config.beta1 = r.get_f64("adam beta1");
  ck.adam.config.beta2 = r.get_f64("adam beta2");
  ck.adam.config.eps = r.get_f64("adam eps");
  get_params<Stored>(r, ck.adam.m);
  get_params<Stored>(r, ck.adam.v);
  if (r.remaining() != 0) r.fail(FormatErrorKind::Corrupt, "trailing bytes after checkpoint");
  return ck;
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Model<T>& model, const AdamState<T>& adam) {
  const Architecture& a = model.arch;
  detail::ByteWriter w;
  w.put_raw("SBNN");
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint16_t>(sizeof(T)));
  for (std::size_t f : {a.n_posts, a.dim, a.conv1_width, a.conv1_filters, a.conv2_width, a.conv2_filters,
                        a.hidden_units, a.classes, a.pool_size}) {
    w.put(static_cast<std::uint32_t>(f));
  }
  w.put_f64(model.hp.dropout_rate);
  const auto ladder = ladder_fields(shape_ladder(a));
  w.put(static_cast<std::uint32_t>(ladder.size()));
  for (std::size_t e : ladder) w.put(static_cast<std::uint32_t>(e));
  put_params(w, model.params);
  w.put(adam.t);
  w.put_f64(adam.config.lr);
  w.put_f64(adam.config.beta1);
  w.put_f64(adam.config.beta2);
  w.put_f64(adam.config.eps);
  put_params(w, adam.m);
  put_params(w, adam.v);
  return w.bytes();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string bytes, const std::string& source) {
  detail::ByteReader r(std::move(bytes), source);
  if (r.remaining() < 4 || r.get_raw(4, "magic") != "SBNN") {
    throw FormatError(FormatErrorKind::BadMagic, source, 0, "bad magic, expected \"SBNN\"");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    r.fail(FormatErrorKind::UnsupportedVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto width = r.get<std::uint16_t>("scalar width");
  if (width == 4) return read_body<float, T>(r);
  if (width == 8) return read_body<double, T>(r);
  r.fail(FormatErrorKind::Corrupt, "scalar width must be 4 or 8, got " + std::to_string(width));
}

template <typename T>
void write_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>& adam) {
  detail::write_file_bytes(path, serialize_checkpoint(model, adam));
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  return deserialize_checkpoint<T>(detail::read_file_bytes(path), path);
}

// ---------------------------------------------------------------- instantiations

#define POSTRISK_NN_INSTANTIATE(T)                                                                           \
  template class Tensor2D<T>;                                                                                \
  template Tensor2D<T> conv1d_forward(MatrixView<T>, const Conv1dParams<T>&);                                \
  template Conv1dGrads<T> conv1d_backward(MatrixView<T>, const Conv1dParams<T>&, const Tensor2D<T>&, bool);  \
  template void conv1d_backward_into(MatrixView<T>, const Conv1dParams<T>&, const Tensor2D<T>&,              \
                                     Conv1dParams<T>&, Tensor2D<T>*);                                        \
  template Tensor2D<T> relu_forward(const Tensor2D<T>&);                                                     \
  template Tensor2D<T> relu_backward(const Tensor2D<T>&, const Tensor2D<T>&);                                \
  template PoolResult<T> maxpool_forward(const Tensor2D<T>&, std::size_t);                                   \
  template Tensor2D<T> maxpool_backward(const PoolResult<T>&, const Tensor2D<T>&);                           \
  template DropoutResult<T> dropout_forward(const Tensor2D<T>&, double, bool, std::uint64_t);                \
  template Tensor2D<T> dropout_backward(const DropoutResult<T>&, const Tensor2D<T>&);                        \
  template Tensor2D<T> dense_forward(const Tensor2D<T>&, const DenseParams<T>&);                             \
  template void dense_backward_into(const Tensor2D<T>&, const DenseParams<T>&, const Tensor2D<T>&,           \
                                    DenseParams<T>&, Tensor2D<T>*);                                          \
  template XentResult<T> softmax_xent(std::span<const T>, std::size_t);                                      \
  template struct ModelParams<T>;                                                                            \
  template Model<T> build_model(const Architecture&, const Hyperparams&, std::uint64_t);                     \
  template ForwardPass<T> forward(const Model<T>&, MatrixView<T>, Mode, std::uint64_t);                      \
  template void backward_into(const Model<T>&, const ForwardCache<T>&, std::span<const T>, ModelParams<T>&); \
  template ModelParams<T> backward(const Model<T>&, const ForwardCache<T>&, std::span<const T>);             \
  template AdamState<T> make_adam_state(const Architecture&, const AdamConfig&);                             \
  template void adam_step(ModelParams<T>&, const ModelParams<T>&, AdamState<T>&);                            \
  template std::string serialize_checkpoint(const Model<T>&, const AdamState<T>&);                           \
  template Checkpoint<T> deserialize_checkpoint(std::string, const std::string&);                            \
  template void write_checkpoint(const std::string&, const Model<T>&, const AdamState<T>&);                  \
  template Checkpoint<T> read_checkpoint(const std::string&);

POSTRISK_NN_INSTANTIATE(float)
POSTRISK_NN_INSTANTIATE(double)

#undef POSTRISK_NN_INSTANTIATE

template Model<float> cast_model(const Model<double>&);
template Model<double> cast_model(const Model<float>&);
template Model<float> cast_model(const Model<float>&);
template Model<double> cast_model(const Model<double>&);

}  // namespace postrisk::nn
