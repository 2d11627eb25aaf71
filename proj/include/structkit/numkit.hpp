#pragma once

// Minimal dense numeric kernel in double precision: tensors, the handful of
// ops the model needs with explicit backward passes, AdamW, a central
// finite-difference gradient checker and a JSON checkpoint format.

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace structkit::numkit {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns parameters; references stay valid as parameters are added.
class ParamStore {
 public:
  Param& add(const std::string& name, std::vector<std::size_t> shape);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grad();
  std::size_t count() const;  // total scalar count
  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Dense ops. Shapes: a is (m x k), b is (k x n) unless stated.

/// c = a b (or c += a b)
void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);
/// c = a b^T with b (n x k)
void matmul_bt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);
/// c = a^T b with a (k x m), b (k x n)
void matmul_at(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);

/// Row-wise softmax; -inf entries come out exactly 0. Throws AllMaskedRow.
Tensor masked_softmax(const Tensor& scores);
void masked_softmax_inplace(Tensor& scores);

/// Gradient w.r.t. the scores given the softmax output and the gradient
/// w.r.t. the output. Masked positions receive exactly 0.
Tensor masked_softmax_backward(const Tensor& probs, const Tensor& dprobs);

/// -log softmax(logits)[target]; writes softmax(logits) - onehot(target) into grad if non-empty.
double cross_entropy(std::span<const double> logits, int target, std::span<double> grad = {});

double sigmoid(double x);
/// -(y log sigmoid(z) + (1-y) log(1-sigmoid(z))), stable in z. grad = sigmoid(z) - y.
double binary_cross_entropy_logit(double z, double y, double* grad = nullptr);

double gelu(double x);
double gelu_grad(double x);

/// Row-wise layer normalization with gain and bias.
struct LayerNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormCache* cache,
                  double eps = 1e-6);
/// Returns dx; accumulates into dgain, dbias.
Tensor layer_norm_backward(const Tensor& dy, const Tensor& gain, const LayerNormCache& cache, Tensor& dgain,
                           Tensor& dbias);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled weight decay Adam. Moments live here, one slot per parameter in store order.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& params);
  long steps() const { return t_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double h = 1e-3;
  double tolerance = 1e-4;
  std::size_t max_coords_per_param = 64;  // 0 = check every coordinate
  std::uint64_t seed = 0;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error() const;
  const ParamGradError* worst() const;
};

double relative_error(double analytic, double numeric);

/// Compares each param's populated grad against (L(θ+h) - L(θ-h)) / 2h on a
/// sampled subset of coordinates. Parameter values are restored afterwards.
GradCheckReport measure_gradients(const std::function<double()>& loss, std::span<Param* const> params,
                                  const GradCheckOptions& opts = {});

/// measure_gradients, throwing GradCheckFailure for the worst parameter over tolerance.
GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<Param* const> params,
                                  const GradCheckOptions& opts = {});

// ---------------------------------------------------------------------------
// Checkpoints: JSON {"format", "version", "meta", "params": [{name, shape, values}]}

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_json(const ParamStore& params, const nlohmann::json& meta);
void save_checkpoint(const std::string& path, const ParamStore& params, const nlohmann::json& meta);
nlohmann::json read_checkpoint(const std::string& path);
/// Copies values into `params`; every param must be present with a matching shape.
void restore_params(const nlohmann::json& checkpoint, ParamStore& params);

}  // namespace structkit::numkit
