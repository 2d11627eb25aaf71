#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>

#include "structkit/errors.hpp"
#include "structkit/numkit.hpp"

namespace structkit::numkit {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (auto s : shape_) n *= s;
  data_.assign(n, fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Param& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  Param p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter named " + name);
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter named " + name);
  return params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  assert(b.rows() == k);
  if (c.rows() != m || c.cols() != n) {
    c = Tensor::matrix(m, n);
  } else if (!accumulate) {
    c.fill(0.0);
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_bt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  assert(b.cols() == k);
  if (c.rows() != m || c.cols() != n) {
    c = Tensor::matrix(m, n);
  } else if (!accumulate) {
    c.fill(0.0);
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      // four partial sums so the compiler can keep independent chains in flight
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      pc[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

void matmul_at(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  assert(b.rows() == k);
  if (c.rows() != m || c.cols() != n) {
    c = Tensor::matrix(m, n);
  } else if (!accumulate) {
    c.fill(0.0);
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void masked_softmax_inplace(Tensor& scores) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = scores.data() + r * cols;
    double mx = kNegInf;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    if (mx == kNegInf) throw AllMaskedRow(r);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = row[c] == kNegInf ? 0.0 : std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

Tensor masked_softmax(const Tensor& scores) {
  Tensor out = scores;
  masked_softmax_inplace(out);
  return out;
}

Tensor masked_softmax_backward(const Tensor& probs, const Tensor& dprobs) {
  const std::size_t rows = probs.rows(), cols = probs.cols();
  Tensor ds = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = probs.data() + r * cols;
    const double* dp = dprobs.data() + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += p[c] * dp[c];
    double* out = ds.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] = p[c] == 0.0 ? 0.0 : p[c] * (dp[c] - dot);
  }
  return ds;
}

double cross_entropy(std::span<const double> logits, int target, std::span<double> grad) {
  double mx = kNegInf;
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double log_z = mx + std::log(sum);
  if (!grad.empty()) {
    for (std::size_t c = 0; c < logits.size(); ++c) grad[c] = std::exp(logits[c] - log_z);
    grad[static_cast<std::size_t>(target)] -= 1.0;
  }
  return log_z - logits[static_cast<std::size_t>(target)];
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double binary_cross_entropy_logit(double z, double y, double* grad) {
  // log(1 + e^z) - y z, written to avoid overflow
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  if (grad) *grad = sigmoid(z) - y;
  return softplus - y * z;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormCache* cache, double eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  Tensor y = Tensor::matrix(rows, d);
  if (cache) {
    cache->xhat = Tensor::matrix(rows, d);
    cache->inv_std.assign(rows, 0.0);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * inv;
      if (cache) cache->xhat(r, c) = xh;
      y(r, c) = xh * gain[c] + bias[c];
    }
    if (cache) cache->inv_std[r] = inv;
  }
  return y;
}

Tensor layer_norm_backward(const Tensor& dy, const Tensor& gain, const LayerNormCache& cache, Tensor& dgain,
                           Tensor& dbias) {
  const std::size_t rows = dy.rows(), d = dy.cols();
  Tensor dx = Tensor::matrix(rows, d);
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = dy(r, c);
      dgain[c] += g * cache.xhat(r, c);
      dbias[c] += g;
      dxhat[c] = g * gain[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * cache.xhat(r, c);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) = cache.inv_std[r] * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
    }
  }
  return dx;
}

}  // namespace structkit::numkit
