#pragma once

#include "dgp/common.hpp"

#include <memory>
#include <random>
#include <span>
#include <vector>

namespace dgp::nn {

enum class Mode { train, eval };

/// Per-call activation storage. Backward reads the cache written by the
/// matching forward, so concurrent inference is safe as long as every caller
/// owns its tape (training, which also touches batch-norm running statistics,
/// is single-threaded by contract).
struct LayerCache {
  std::vector<MatrixXd> m;
  std::vector<LayerCache> children;
};

struct Tape {
  Mode mode = Mode::eval;
  std::vector<LayerCache> layers;
};

enum class LayerKind : std::uint32_t {
  dense = 1,
  leaky_relu = 2,
  relu = 3,
  sigmoid = 4,
  batch_norm = 5,
  fixed_affine = 6,
  rev_block = 7,
};

struct LayerDesc {
  LayerKind kind{};
  std::vector<std::int64_t> ints;
  std::vector<double> doubles;
};

/// Data layout everywhere: features x batch, f64.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const = 0;
  /// Returns the gradient w.r.t. the layer input. `param_grad`, when nonempty,
  /// receives the accumulated gradient of the layer's trainable parameters
  /// (same order as write_params).
  virtual MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                            std::span<double> param_grad) const = 0;

  virtual int in_width() const = 0;
  virtual int out_width() const = 0;
  virtual Eigen::Index param_size() const { return 0; }
  virtual Eigen::Index state_size() const { return 0; }  // non-trainable, serialized
  virtual void write_params(std::span<double>) const {}
  virtual void read_params(std::span<const double>) {}
  virtual void write_state(std::span<double>) const {}
  virtual void read_state(std::span<const double>) {}
  virtual LayerDesc descriptor() const = 0;
};

class Dense final : public Layer {
 public:
  Dense(int in, int out);                        // zero weights
  Dense(int in, int out, std::mt19937_64& rng);  // Kaiming-uniform weights, zero bias

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return static_cast<int>(w_.cols()); }
  int out_width() const override { return static_cast<int>(w_.rows()); }
  Eigen::Index param_size() const override { return w_.size() + b_.size(); }
  void write_params(std::span<double> out) const override;
  void read_params(std::span<const double> in) override;
  LayerDesc descriptor() const override;

  MatrixXd& weights() { return w_; }
  VectorXd& bias() { return b_; }

 private:
  MatrixXd w_;
  VectorXd b_;
};

class LeakyRelu final : public Layer {
 public:
  explicit LeakyRelu(int width, double slope = 0.01);

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return width_; }
  int out_width() const override { return width_; }
  LayerDesc descriptor() const override;
  double slope() const { return slope_; }

 private:
  int width_;
  double slope_;
};

class Relu final : public Layer {
 public:
  explicit Relu(int width) : width_(width) {}

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return width_; }
  int out_width() const override { return width_; }
  LayerDesc descriptor() const override;

 private:
  int width_;
};

class Sigmoid final : public Layer {
 public:
  explicit Sigmoid(int width) : width_(width) {}

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return width_; }
  int out_width() const override { return width_; }
  LayerDesc descriptor() const override;

 private:
  int width_;
};

/// Per-feature batch normalization. Train mode normalizes with batch
/// statistics and refreshes the (mutable) running estimates; eval mode is a
/// fixed affine map using the running statistics only.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(int width, double eps = 1e-5, double momentum = 0.1);

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return width_; }
  int out_width() const override { return width_; }
  Eigen::Index param_size() const override { return 2 * width_; }
  Eigen::Index state_size() const override { return 2 * width_; }
  void write_params(std::span<double> out) const override;
  void read_params(std::span<const double> in) override;
  void write_state(std::span<double> out) const override;
  void read_state(std::span<const double> in) override;
  LayerDesc descriptor() const override;

 private:
  int width_;
  double eps_;
  double momentum_;
  VectorXd gamma_, beta_;
  mutable VectorXd run_mean_, run_var_;
};

/// Constant per-feature map y = a .* x + b; carries input/output
/// normalization so callers always see physical units. Not trainable.
class FixedAffine final : public Layer {
 public:
  FixedAffine(VectorXd a, VectorXd b);

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return static_cast<int>(a_.size()); }
  int out_width() const override { return static_cast<int>(a_.size()); }
  LayerDesc descriptor() const override;

 private:
  VectorXd a_, b_;
};

class Network;

namespace detail {
MatrixXd run_forward(const std::vector<std::unique_ptr<Layer>>& layers, const MatrixXd& x,
                     Mode mode, std::span<LayerCache> caches);
MatrixXd run_backward(const std::vector<std::unique_ptr<Layer>>& layers, const MatrixXd& gout,
                      std::span<const LayerCache> caches, std::span<double> param_grad);
}  // namespace detail

/// Split-channel additive coupling block: y1 = x1 + F(x2), y2 = x2 + G(y1),
/// with F and G each dense -> batch-norm -> relu -> dense on half the width.
class RevBlock final : public Layer {
 public:
  explicit RevBlock(int width);                        // zero weights
  RevBlock(int width, std::mt19937_64& rng);

  MatrixXd forward(const MatrixXd& x, Mode mode, LayerCache& cache) const override;
  MatrixXd backward(const MatrixXd& grad_out, const LayerCache& cache,
                    std::span<double> param_grad) const override;
  int in_width() const override { return width_; }
  int out_width() const override { return width_; }
  Eigen::Index param_size() const override;
  Eigen::Index state_size() const override;
  void write_params(std::span<double> out) const override;
  void read_params(std::span<const double> in) override;
  void write_state(std::span<double> out) const override;
  void read_state(std::span<const double> in) override;
  LayerDesc descriptor() const override;

 private:
  std::vector<std::unique_ptr<Layer>> make_subnet(int half, std::mt19937_64* rng);

  int width_;
  std::vector<std::unique_ptr<Layer>> f_, g_;
};

std::unique_ptr<Layer> make_layer(const LayerDesc& desc);

/// A plain stack of layers. Forward records per-layer caches into the tape;
/// backward replays them, returning the input gradient and (optionally)
/// accumulating the flat parameter gradient.
class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  void add(std::unique_ptr<Layer> layer);

  MatrixXd forward(const MatrixXd& x, Mode mode, Tape* tape = nullptr) const;
  MatrixXd backward(const MatrixXd& grad_out, const Tape& tape,
                    std::span<double> param_grad = {}) const;

  Eigen::Index param_size() const;
  Eigen::Index state_size() const;
  VectorXd get_params() const;
  void set_params(const VectorXd& p);
  VectorXd get_state() const;
  void set_state(const VectorXd& s);

  int in_width() const;
  int out_width() const;
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  std::vector<LayerDesc> descriptors() const;
  static Network from_descriptors(const std::vector<LayerDesc>& descs);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard bias-corrected Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index n, AdamConfig cfg = {});

  void step(VectorXd& params, const VectorXd& grads);
  AdamConfig& config() { return cfg_; }
  long step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace dgp::nn
