#pragma once

// From-scratch layers for the two-block 1D CNN: valid convolution, ReLU, max
// pooling, inverted dropout, dense layers, softmax cross-entropy and Adam.
// Everything is templated on the scalar type; float and double are
// instantiated. Training runs in float, the gradient checks in double.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace postrisk::nn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-owning row-major (rows x cols) view.
template <typename T>
struct MatrixView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const T> values;

  T operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Owning row-major (L x C) tensor: rows run along the post sequence, columns are channels.
template <typename T>
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, T fill = T{0}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  MatrixView<T> view() const noexcept { return {rows_, cols_, data_}; }

  /// Row-major flatten to (1, rows*cols).
  Tensor2D<T> flattened() const { return Tensor2D<T>(1, data_.size(), data_); }

  bool operator==(const Tensor2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// kernel[(i * in + c) * out + o] for tap i, input channel c, filter o.
template <typename T>
struct Conv1dParams {
  std::size_t width = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<T> kernel;
  std::vector<T> bias;

  Conv1dParams() = default;
  Conv1dParams(std::size_t width, std::size_t in, std::size_t out)
      : width(width), in_channels(in), out_channels(out), kernel(width * in * out, T{0}), bias(out, T{0}) {}

  T& at(std::size_t i, std::size_t c, std::size_t o) { return kernel[(i * in_channels + c) * out_channels + o]; }
  T at(std::size_t i, std::size_t c, std::size_t o) const { return kernel[(i * in_channels + c) * out_channels + o]; }
  bool operator==(const Conv1dParams&) const = default;
};

/// weights[i * out + o].
template <typename T>
struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  DenseParams() = default;
  DenseParams(std::size_t in, std::size_t out) : in(in), out(out), weights(in * out, T{0}), bias(out, T{0}) {}
  bool operator==(const DenseParams&) const = default;
};

// ---------------------------------------------------------------- layers

template <typename T>
Tensor2D<T> conv1d_forward(MatrixView<T> x, const Conv1dParams<T>& p);

template <typename T>
struct Conv1dGrads {
  Tensor2D<T> grad_x;  // empty when not requested
  std::vector<T> grad_kernel;
  std::vector<T> grad_bias;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(MatrixView<T> x, const Conv1dParams<T>& p, const Tensor2D<T>& grad_out,
                               bool want_grad_x = true);

/// Accumulating form: adds into grads, writes grad_x when non-null.
template <typename T>
void conv1d_backward_into(MatrixView<T> x, const Conv1dParams<T>& p, const Tensor2D<T>& grad_out,
                          Conv1dParams<T>& grads, Tensor2D<T>* grad_x);

template <typename T>
Tensor2D<T> relu_forward(const Tensor2D<T>& x);

/// Subgradient 0 at 0; `activated` may be the input or the output of relu_forward.
template <typename T>
Tensor2D<T> relu_backward(const Tensor2D<T>& activated, const Tensor2D<T>& grad_out);

template <typename T>
struct PoolResult {
  Tensor2D<T> out;
  std::vector<std::uint32_t> argmax;  // input row chosen for each (t, c)
  std::size_t input_rows = 0;
};

/// Non-overlapping windows; floor(L / size) output rows, ties go to the first index.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor2D<T>& x, std::size_t size = 2);

template <typename T>
Tensor2D<T> maxpool_backward(const PoolResult<T>& pool, const Tensor2D<T>& grad_out);

template <typename T>
struct DropoutResult {
  Tensor2D<T> out;
  std::vector<T> scale;  // 0 or 1/(1-rate) per entry; empty means identity
};

/// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor2D<T>& x, double rate, bool training, std::uint64_t seed);

template <typename T>
Tensor2D<T> dropout_backward(const DropoutResult<T>& dropout, const Tensor2D<T>& grad_out);

/// x is (1, in); returns (1, out).
template <typename T>
Tensor2D<T> dense_forward(const Tensor2D<T>& x, const DenseParams<T>& p);

template <typename T>
void dense_backward_into(const Tensor2D<T>& x, const DenseParams<T>& p, const Tensor2D<T>& grad_out,
                         DenseParams<T>& grads, Tensor2D<T>* grad_x);

template <typename T>
struct XentResult {
  T loss{};
  std::vector<T> probs;
  std::vector<T> grad_logits;
};

/// -log softmax(logits)[label] via log-sum-exp; grad = softmax - onehot.
template <typename T>
XentResult<T> softmax_xent(std::span<const T> logits, std::size_t label);

// ---------------------------------------------------------------- model

struct Architecture {
  std::size_t n_posts = 0;  // N
  std::size_t dim = 384;
  std::size_t conv1_width = 20;
  std::size_t conv1_filters = 16;
  std::size_t conv2_width = 20;
  std::size_t conv2_filters = 8;
  std::size_t hidden_units = 32;
  std::size_t classes = 2;
  std::size_t pool_size = 2;

  static Architecture standard(std::size_t n_posts, std::size_t dim = 384) {
    Architecture a;
    a.n_posts = n_posts;
    a.dim = dim;
    return a;
  }
  bool operator==(const Architecture&) const = default;
};

struct Hyperparams {
  double dropout_rate = 0.20;
};

struct ShapeLadder {
  std::size_t input_rows = 0, input_cols = 0;
  std::size_t conv1_rows = 0, conv1_cols = 0;
  std::size_t pool1_rows = 0;
  std::size_t conv2_rows = 0, conv2_cols = 0;
  std::size_t pool2_rows = 0;
  std::size_t flatten = 0;
  std::size_t hidden = 0;
  std::size_t outputs = 0;

  /// "(525,384)->conv(506,16)->pool(253,16)->..." form.
  std::string describe() const;
};

/// Smallest n for which every stage has positive length.
std::size_t minimum_sequence_length(const Architecture& arch);

/// Throws ShapeError("sequence too short ...") when a stage would be empty.
ShapeLadder shape_ladder(const Architecture& arch);

std::size_t parameter_count(const Architecture& arch);

template <typename T>
struct ModelParams {
  Conv1dParams<T> conv1;
  Conv1dParams<T> conv2;
  DenseParams<T> hidden;
  DenseParams<T> output;

  static ModelParams zeros(const Architecture& arch);

  /// Every parameter tensor in a fixed order (weights before biases, layer order).
  std::array<std::span<T>, 8> tensors();
  std::array<std::span<const T>, 8> tensors() const;
  std::size_t count() const;
  void fill(T value);
  void add(const ModelParams& other);
  void scale(T factor);
  bool operator==(const ModelParams&) const = default;
};

template <typename T>
struct Model {
  Architecture arch;
  Hyperparams hp;
  ModelParams<T> params;
};

/// Glorot-uniform weights, zero biases.
template <typename T>
Model<T> build_model(const Architecture& arch, const Hyperparams& hp, std::uint64_t seed);

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);

enum class Mode { Train, Infer };

template <typename T>
struct ForwardCache {
  MatrixView<T> input;  // not owned; must outlive backward()
  Tensor2D<T> act1;     // relu(conv1)
  PoolResult<T> pool1;
  DropoutResult<T> drop1;
  Tensor2D<T> act2;  // relu(conv2)
  PoolResult<T> pool2;
  DropoutResult<T> drop2;
  Tensor2D<T> flat;
  Tensor2D<T> hidden;  // relu(dense hidden)
};

template <typename T>
struct ForwardPass {
  std::vector<T> logits;
  ForwardCache<T> cache;
};

/// conv1 -> relu -> pool -> dropout -> conv2 -> relu -> pool -> dropout ->
/// flatten -> dense -> relu -> dense. The dropout masks derive from `seed`.
template <typename T>
ForwardPass<T> forward(const Model<T>& model, MatrixView<T> x, Mode mode, std::uint64_t seed = 0);

/// Adds d(loss)/d(params) into grads.
template <typename T>
void backward_into(const Model<T>& model, const ForwardCache<T>& cache, std::span<const T> grad_logits,
                   ModelParams<T>& grads);

template <typename T>
ModelParams<T> backward(const Model<T>& model, const ForwardCache<T>& cache, std::span<const T> grad_logits);

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(const Architecture& arch, const AdamConfig& config = {});

/// One bias-corrected Adam update. Throws before touching anything if a gradient is non-finite.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state);

// ---------------------------------------------------------------- checkpoint

// SBNN v1: "SBNN", u16 version, u16 scalar bytes (4|8), architecture fields,
// dropout rate, the shape ladder, parameters, then Adam t/config/m/v.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  AdamState<T> adam;
};

template <typename T>
std::string serialize_checkpoint(const Model<T>& model, const AdamState<T>& adam);

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string bytes, const std::string& source = "<memory>");

template <typename T>
void write_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>& adam);

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path);

}  // namespace postrisk::nn
