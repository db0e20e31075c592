#include "gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <span>

#include "oracles.hpp"
#include "postrisk/nn.hpp"
#include "postrisk/rng.hpp"

namespace gradcheck {
namespace {

namespace nn = postrisk::nn;
constexpr double kStep = 1e-5;

struct Probe {
  double loss = 0.0;
  std::vector<std::uint32_t> signature;  // ReLU on/off pattern and pooling argmaxes
};

/// Perturbs every entry of x by +-kStep, compares against `analytic`, and folds
/// the worst relative error into `result`.
void probe_all(CheckResult& result, std::span<double> x, std::span<const double> analytic,
               const std::function<Probe()>& probe) {
  const Probe base = probe();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kStep;
    const Probe up = probe();
    x[i] = saved - kStep;
    const Probe down = probe();
    x[i] = saved;
    ++result.coordinates;
    if (up.signature != base.signature || down.signature != base.signature) {
      ++result.skipped_at_kinks;
      continue;
    }
    const double numeric = (up.loss - down.loss) / (2.0 * kStep);
    result.max_rel_error = std::max(result.max_rel_error, oracle::rel_error(analytic[i], numeric));
  }
}

double project(std::span<const double> y, std::span<const double> r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

template <typename U>
void append_pattern(std::vector<std::uint32_t>& sig, const U& values) {
  for (double v : values) sig.push_back(v > 0.0 ? 1u : 0u);
}

void check_conv(CheckResult& res, std::uint64_t seed) {
  const std::size_t rows = 9, in = 3, out = 4, width = 3;
  auto x = oracle::random_values(rows * in, postrisk::derive_seed(seed, 1));
  std::fill(x.begin() + 6 * in, x.end(), 0.0);  // trailing padding rows take the sparse path
  x[4] = 0.0;
  nn::Conv1dParams<double> p(width, in, out);
  p.kernel = oracle::random_values(p.kernel.size(), postrisk::derive_seed(seed, 2));
  p.bias = oracle::random_values(out, postrisk::derive_seed(seed, 3));
  const auto r = oracle::random_values((rows - width + 1) * out, postrisk::derive_seed(seed, 4));

  const nn::Tensor2D<double> grad_out(rows - width + 1, out, r);
  const auto grads = nn::conv1d_backward<double>({rows, in, x}, p, grad_out, true);
  auto loss = [&] { return Probe{project(oracle::conv1d(x, rows, in, p.kernel, p.bias, width, out), r), {}}; };
  probe_all(res, x, grads.grad_x.values(), loss);
  probe_all(res, p.kernel, grads.grad_kernel, loss);
  probe_all(res, p.bias, grads.grad_bias, loss);
}

void check_dense(CheckResult& res, std::uint64_t seed) {
  const std::size_t in = 7, out = 5;
  auto x = oracle::random_values(in, postrisk::derive_seed(seed, 1));
  nn::DenseParams<double> p(in, out);
  p.weights = oracle::random_values(in * out, postrisk::derive_seed(seed, 2));
  p.bias = oracle::random_values(out, postrisk::derive_seed(seed, 3));
  const auto r = oracle::random_values(out, postrisk::derive_seed(seed, 4));

  nn::DenseParams<double> grads(in, out);
  nn::Tensor2D<double> grad_x;
  nn::dense_backward_into(nn::Tensor2D<double>(1, in, x), p, nn::Tensor2D<double>(1, out, r), grads, &grad_x);
  auto loss = [&] { return Probe{project(oracle::dense(x, p.weights, p.bias), r), {}}; };
  probe_all(res, x, grad_x.values(), loss);
  probe_all(res, p.weights, grads.weights, loss);
  probe_all(res, p.bias, grads.bias, loss);
}

void check_relu(CheckResult& res, std::uint64_t seed) {
  const std::size_t rows = 6, cols = 5;
  auto x = oracle::random_values(rows * cols, postrisk::derive_seed(seed, 1));
  const auto r = oracle::random_values(rows * cols, postrisk::derive_seed(seed, 2));
  const nn::Tensor2D<double> y = nn::relu_forward(nn::Tensor2D<double>(rows, cols, x));
  const auto grad = nn::relu_backward(y, nn::Tensor2D<double>(rows, cols, r));
  probe_all(res, x, grad.values(), [&] {
    Probe p;
    for (std::size_t i = 0; i < x.size(); ++i) p.loss += std::max(0.0, x[i]) * r[i];
    append_pattern(p.signature, x);
    return p;
  });
}

void check_pool(CheckResult& res, std::uint64_t seed) {
  const std::size_t rows = 9, cols = 4, size = 2;  // odd length: the last row is dropped
  auto x = oracle::random_values(rows * cols, postrisk::derive_seed(seed, 1));
  const std::size_t out_rows = rows / size;
  const auto r = oracle::random_values(out_rows * cols, postrisk::derive_seed(seed, 2));
  const auto pool = nn::maxpool_forward(nn::Tensor2D<double>(rows, cols, x), size);
  const auto grad = nn::maxpool_backward(pool, nn::Tensor2D<double>(out_rows, cols, r));
  probe_all(res, x, grad.values(), [&] {
    Probe p;
    for (std::size_t t = 0; t < out_rows; ++t) {
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t best = t * size;
        for (std::size_t k = 1; k < size; ++k) {
          if (x[(t * size + k) * cols + c] > x[best * cols + c]) best = t * size + k;
        }
        p.loss += x[best * cols + c] * r[t * cols + c];
        p.signature.push_back(static_cast<std::uint32_t>(best));
      }
    }
    return p;
  });
}

void check_dropout(CheckResult& res, std::uint64_t seed) {
  const std::size_t rows = 5, cols = 6;
  auto x = oracle::random_values(rows * cols, postrisk::derive_seed(seed, 1));
  const auto r = oracle::random_values(rows * cols, postrisk::derive_seed(seed, 2));
  const std::uint64_t mask_seed = postrisk::derive_seed(seed, 3);
  const auto drop = nn::dropout_forward(nn::Tensor2D<double>(rows, cols, x), 0.3, true, mask_seed);
  const auto grad = nn::dropout_backward(drop, nn::Tensor2D<double>(rows, cols, r));
  probe_all(res, x, grad.values(), [&] {
    const auto y = nn::dropout_forward(nn::Tensor2D<double>(rows, cols, x), 0.3, true, mask_seed);
    return Probe{project(y.out.values(), r), {}};
  });
}

void check_xent(CheckResult& res, std::uint64_t seed) {
  auto logits = oracle::random_values(4, postrisk::derive_seed(seed, 1), -3.0, 3.0);
  const std::size_t label = seed % 4;
  const auto result = nn::softmax_xent<double>(logits, label);
  probe_all(res, logits, result.grad_logits, [&] { return Probe{oracle::xent(logits, label), {}}; });
}

void check_network(CheckResult& res, const nn::Architecture& arch, std::uint64_t seed) {
  auto model = nn::build_model<double>(arch, nn::Hyperparams{0.2}, postrisk::derive_seed(seed, 1));
  // Zero biases would put every padding-row pre-activation exactly on the ReLU kink.
  for (auto* bias : {&model.params.conv1.bias, &model.params.conv2.bias, &model.params.hidden.bias}) {
    *bias = oracle::random_values(bias->size(), postrisk::derive_seed(seed, 2, bias->size()), -0.1, 0.1);
  }
  auto x = oracle::random_values(arch.n_posts * arch.dim, postrisk::derive_seed(seed, 3));
  const std::size_t real_rows = arch.n_posts - arch.n_posts / 4;
  std::fill(x.begin() + real_rows * arch.dim, x.end(), 0.0);
  const std::size_t label = seed % 2;
  const std::uint64_t dropout_seed = postrisk::derive_seed(seed, 4);
  const nn::MatrixView<double> view{arch.n_posts, arch.dim, x};

  const auto pass = nn::forward(model, view, nn::Mode::Train, dropout_seed);
  const auto xent = nn::softmax_xent<double>(pass.logits, label);
  const auto grads = nn::backward<double>(model, pass.cache, xent.grad_logits);

  auto probe = [&] {
    const auto f = nn::forward(model, view, nn::Mode::Train, dropout_seed);
    Probe p{oracle::xent(f.logits, label), {}};
    append_pattern(p.signature, f.cache.act1.values());
    p.signature.insert(p.signature.end(), f.cache.pool1.argmax.begin(), f.cache.pool1.argmax.end());
    append_pattern(p.signature, f.cache.act2.values());
    p.signature.insert(p.signature.end(), f.cache.pool2.argmax.begin(), f.cache.pool2.argmax.end());
    append_pattern(p.signature, f.cache.hidden.values());
    return p;
  };
  auto params = model.params.tensors();
  const auto analytic = grads.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) probe_all(res, params[k], analytic[k], probe);
}

}  // namespace

std::vector<CheckResult> run_suite(std::size_t seeds, std::uint64_t base_seed) {
  nn::Architecture tiny;
  tiny.n_posts = 16;
  tiny.dim = 5;
  tiny.conv1_width = 3;
  tiny.conv1_filters = 4;
  tiny.conv2_width = 3;
  tiny.conv2_filters = 3;
  tiny.hidden_units = 6;
  const nn::Architecture full_width = nn::Architecture::standard(nn::minimum_sequence_length(nn::Architecture{}), 4);

  std::vector<CheckResult> results{{"conv1d"},  {"dense"},   {"relu"},         {"maxpool"},
                                   {"dropout"}, {"softmax_xent"}, {"network_tiny"}, {"network_full_kernels"}};
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    check_conv(results[0], seed);
    check_dense(results[1], seed);
    check_relu(results[2], seed);
    check_pool(results[3], seed);
    check_dropout(results[4], seed);
    check_xent(results[5], seed);
    check_network(results[6], tiny, seed);
    check_network(results[7], full_width, seed);
  }
  return results;
}

}  // namespace gradcheck
