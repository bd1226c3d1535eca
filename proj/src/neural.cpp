#include "dgp/neural.hpp"

#include <cmath>
#include <limits>

namespace dgp::nn {

namespace {

void check_width(const MatrixXd& x, int width, const char* who) {
  if (x.rows() != width) {
    raise(Errc::shape_mismatch, std::string(who) + ": input width " + std::to_string(x.rows()) +
                                    ", expected " + std::to_string(width));
  }
}

const MatrixXd& cached(const LayerCache& cache, std::size_t i, const char* who) {
  if (cache.m.size() <= i) {
    raise(Errc::no_cached_forward, std::string(who) + ": backward without a matching forward");
  }
  return cache.m[i];
}

double stable_sigmoid(double x) {
  const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  // Keep the output strictly inside (0, 1) even for saturating inputs.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(y, lo, hi);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(int in, int out) : w_(MatrixXd::Zero(out, in)), b_(VectorXd::Zero(out)) {}

Dense::Dense(int in, int out, std::mt19937_64& rng) : w_(out, in), b_(VectorXd::Zero(out)) {
  const double limit = std::sqrt(6.0 / in);
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index j = 0; j < w_.cols(); ++j) {
    for (Eigen::Index i = 0; i < w_.rows(); ++i) w_(i, j) = u(rng);
  }
}

MatrixXd Dense::forward(const MatrixXd& x, Mode, LayerCache& cache) const {
  check_width(x, in_width(), "dense");
  cache.m.assign(1, x);
  return (w_ * x).colwise() + b_;
}

MatrixXd Dense::backward(const MatrixXd& grad_out, const LayerCache& cache,
                         std::span<double> param_grad) const {
  const MatrixXd& x = cached(cache, 0, "dense");
  check_width(grad_out, out_width(), "dense backward");
  if (!param_grad.empty()) {
    if (static_cast<Eigen::Index>(param_grad.size()) != param_size()) {
      raise(Errc::shape_mismatch, "dense backward: parameter gradient slice size");
    }
    Eigen::Map<MatrixXd> gw(param_grad.data(), w_.rows(), w_.cols());
    Eigen::Map<VectorXd> gb(param_grad.data() + w_.size(), b_.size());
    gw.noalias() += grad_out * x.transpose();
    gb.noalias() += grad_out.rowwise().sum();
  }
  return w_.transpose() * grad_out;
}

void Dense::write_params(std::span<double> out) const {
  Eigen::Map<VectorXd>(out.data(), w_.size()) = Eigen::Map<const VectorXd>(w_.data(), w_.size());
  Eigen::Map<VectorXd>(out.data() + w_.size(), b_.size()) = b_;
}

void Dense::read_params(std::span<const double> in) {
  Eigen::Map<VectorXd>(w_.data(), w_.size()) = Eigen::Map<const VectorXd>(in.data(), w_.size());
  b_ = Eigen::Map<const VectorXd>(in.data() + w_.size(), b_.size());
}

LayerDesc Dense::descriptor() const {
  return {LayerKind::dense, {in_width(), out_width()}, {}};
}

// ---------------------------------------------------------------------------
// Activations

LeakyRelu::LeakyRelu(int width, double slope) : width_(width), slope_(slope) {
  if (slope <= 0.0 || slope >= 1.0) raise(Errc::config_error, "leaky-relu slope must be in (0,1)");
}

MatrixXd LeakyRelu::forward(const MatrixXd& x, Mode, LayerCache& cache) const {
  check_width(x, width_, "leaky_relu");
  cache.m.assign(1, x);
  return x.unaryExpr([s = slope_](double v) { return v > 0.0 ? v : s * v; });
}

MatrixXd LeakyRelu::backward(const MatrixXd& grad_out, const LayerCache& cache,
                             std::span<double>) const {
  const MatrixXd& x = cached(cache, 0, "leaky_relu");
  return grad_out.cwiseProduct(
      x.unaryExpr([s = slope_](double v) { return v > 0.0 ? 1.0 : s; }));
}

LayerDesc LeakyRelu::descriptor() const { return {LayerKind::leaky_relu, {width_}, {slope_}}; }

MatrixXd Relu::forward(const MatrixXd& x, Mode, LayerCache& cache) const {
  check_width(x, width_, "relu");
  cache.m.assign(1, x);
  return x.cwiseMax(0.0);
}

MatrixXd Relu::backward(const MatrixXd& grad_out, const LayerCache& cache,
                        std::span<double>) const {
  const MatrixXd& x = cached(cache, 0, "relu");
  return grad_out.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
}

LayerDesc Relu::descriptor() const { return {LayerKind::relu, {width_}, {}}; }

MatrixXd Sigmoid::forward(const MatrixXd& x, Mode, LayerCache& cache) const {
  check_width(x, width_, "sigmoid");
  MatrixXd y = x.unaryExpr([](double v) { return stable_sigmoid(v); });
  cache.m.assign(1, y);
  return y;
}

MatrixXd Sigmoid::backward(const MatrixXd& grad_out, const LayerCache& cache,
                           std::span<double>) const {
  const MatrixXd& y = cached(cache, 0, "sigmoid");
  return grad_out.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
}

LayerDesc Sigmoid::descriptor() const { return {LayerKind::sigmoid, {width_}, {}}; }

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(int width, double eps, double momentum)
    : width_(width),
      eps_(eps),
      momentum_(momentum),
      gamma_(VectorXd::Ones(width)),
      beta_(VectorXd::Zero(width)),
      run_mean_(VectorXd::Zero(width)),
      run_var_(VectorXd::Ones(width)) {}

MatrixXd BatchNorm::forward(const MatrixXd& x, Mode mode, LayerCache& cache) const {
  check_width(x, width_, "batch_norm");
  if (mode == Mode::eval) {
    cache.m.clear();
    cache.m.emplace_back();  // empty marker: eval-mode cache
    const VectorXd inv_std = (run_var_.array() + eps_).rsqrt();
    return (((x.colwise() - run_mean_).array().colwise() *
             (gamma_.array() * inv_std.array()))
                .colwise() +
            beta_.array())
        .matrix();
  }
  const VectorXd mu = x.rowwise().mean();
  MatrixXd centered = x.colwise() - mu;
  const VectorXd var = centered.array().square().rowwise().mean();
  const VectorXd inv_std = (var.array() + eps_).rsqrt();
  MatrixXd xhat = (centered.array().colwise() * inv_std.array()).matrix();

  run_mean_ = (1.0 - momentum_) * run_mean_ + momentum_ * mu;
  run_var_ = (1.0 - momentum_) * run_var_ + momentum_ * var;

  cache.m.clear();
  cache.m.push_back(xhat);
  cache.m.emplace_back(inv_std);
  return ((xhat.array().colwise() * gamma_.array()).colwise() + beta_.array()).matrix();
}

MatrixXd BatchNorm::backward(const MatrixXd& grad_out, const LayerCache& cache,
                             std::span<double> param_grad) const {
  if (cache.m.empty()) raise(Errc::no_cached_forward, "batch_norm: backward before forward");
  const bool eval_mode = cache.m.size() == 1;

  if (eval_mode) {
    if (!param_grad.empty()) {
      // Eval-mode caches keep no input, so parameter gradients cannot be
      // formed here; reject instead of silently mis-accumulating.
      raise(Errc::no_cached_forward, "batch_norm: parameter gradients need a train-mode forward");
    }
    const VectorXd scale = gamma_.array() * (run_var_.array() + eps_).rsqrt();
    return (grad_out.array().colwise() * scale.array()).matrix();
  }

  const MatrixXd& xhat = cache.m[0];
  const VectorXd inv_std = cache.m[1].col(0);
  const auto n = static_cast<double>(grad_out.cols());

  const VectorXd g_beta = grad_out.rowwise().sum();
  const VectorXd g_gamma = grad_out.cwiseProduct(xhat).rowwise().sum();
  if (!param_grad.empty()) {
    if (static_cast<Eigen::Index>(param_grad.size()) != param_size()) {
      raise(Errc::shape_mismatch, "batch_norm backward: parameter gradient slice size");
    }
    Eigen::Map<VectorXd>(param_grad.data(), width_) += g_gamma;
    Eigen::Map<VectorXd>(param_grad.data() + width_, width_) += g_beta;
  }

  // d/dx of batch-statistics normalization.
  MatrixXd gx = n * grad_out;
  gx.colwise() -= g_beta;
  gx -= (xhat.array().colwise() * g_gamma.array()).matrix();
  gx.array().colwise() *= (gamma_.array() * inv_std.array()) / n;
  return gx;
}

void BatchNorm::write_params(std::span<double> out) const {
  Eigen::Map<VectorXd>(out.data(), width_) = gamma_;
  Eigen::Map<VectorXd>(out.data() + width_, width_) = beta_;
}

void BatchNorm::read_params(std::span<const double> in) {
  gamma_ = Eigen::Map<const VectorXd>(in.data(), width_);
  beta_ = Eigen::Map<const VectorXd>(in.data() + width_, width_);
}

void BatchNorm::write_state(std::span<double> out) const {
  Eigen::Map<VectorXd>(out.data(), width_) = run_mean_;
  Eigen::Map<VectorXd>(out.data() + width_, width_) = run_var_;
}

void BatchNorm::read_state(std::span<const double> in) {
  run_mean_ = Eigen::Map<const VectorXd>(in.data(), width_);
  run_var_ = Eigen::Map<const VectorXd>(in.data() + width_, width_);
}

LayerDesc BatchNorm::descriptor() const {
  return {LayerKind::batch_norm, {width_}, {eps_, momentum_}};
}

// ---------------------------------------------------------------------------
// FixedAffine

FixedAffine::FixedAffine(VectorXd a, VectorXd b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.size() != b_.size()) raise(Errc::shape_mismatch, "fixed_affine: scale/offset sizes");
}

MatrixXd FixedAffine::forward(const MatrixXd& x, Mode, LayerCache& cache) const {
  check_width(x, in_width(), "fixed_affine");
  cache.m.clear();
  return (x.array().colwise() * a_.array()).colwise() + b_.array();
}

MatrixXd FixedAffine::backward(const MatrixXd& grad_out, const LayerCache&,
                               std::span<double>) const {
  return grad_out.array().colwise() * a_.array();
}

LayerDesc FixedAffine::descriptor() const {
  LayerDesc d{LayerKind::fixed_affine, {a_.size()}, {}};
  d.doubles.reserve(2 * a_.size());
  for (Eigen::Index i = 0; i < a_.size(); ++i) d.doubles.push_back(a_[i]);
  for (Eigen::Index i = 0; i < b_.size(); ++i) d.doubles.push_back(b_[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Layer-sequence helpers shared by Network and RevBlock

namespace detail {

MatrixXd run_forward(const std::vector<std::unique_ptr<Layer>>& layers, const MatrixXd& x,
                     Mode mode, std::span<LayerCache> caches) {
  MatrixXd h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i]->forward(h, mode, caches[i]);
  }
  return h;
}

MatrixXd run_backward(const std::vector<std::unique_ptr<Layer>>& layers, const MatrixXd& gout,
                      std::span<const LayerCache> caches, std::span<double> param_grad) {
  MatrixXd g = gout;
  Eigen::Index offset = static_cast<Eigen::Index>(param_grad.size());
  for (std::size_t k = layers.size(); k-- > 0;) {
    std::span<double> slice;
    if (!param_grad.empty()) {
      offset -= layers[k]->param_size();
      slice = param_grad.subspan(offset, layers[k]->param_size());
    }
    g = layers[k]->backward(g, caches[k], slice);
  }
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RevBlock

std::vector<std::unique_ptr<Layer>> RevBlock::make_subnet(int half, std::mt19937_64* rng) {
  std::vector<std::unique_ptr<Layer>> net;
  net.push_back(rng ? std::make_unique<Dense>(half, half, *rng) : std::make_unique<Dense>(half, half));
  net.push_back(std::make_unique<BatchNorm>(half));
  net.push_back(std::make_unique<Relu>(half));
  net.push_back(rng ? std::make_unique<Dense>(half, half, *rng) : std::make_unique<Dense>(half, half));
  return net;
}

RevBlock::RevBlock(int width) : width_(width) {
  if (width % 2 != 0) raise(Errc::config_error, "rev_block width must be even");
  f_ = make_subnet(width / 2, nullptr);
  g_ = make_subnet(width / 2, nullptr);
}

RevBlock::RevBlock(int width, std::mt19937_64& rng) : width_(width) {
  if (width % 2 != 0) raise(Errc::config_error, "rev_block width must be even");
  f_ = make_subnet(width / 2, &rng);
  g_ = make_subnet(width / 2, &rng);
}

MatrixXd RevBlock::forward(const MatrixXd& x, Mode mode, LayerCache& cache) const {
  check_width(x, width_, "rev_block");
  const int h = width_ / 2;
  cache.children.assign(f_.size() + g_.size(), LayerCache{});
  const MatrixXd x1 = x.topRows(h);
  const MatrixXd x2 = x.bottomRows(h);

  std::span<LayerCache> fc(cache.children.data(), f_.size());
  std::span<LayerCache> gc(cache.children.data() + f_.size(), g_.size());
  const MatrixXd y1 = x1 + detail::run_forward(f_, x2, mode, fc);
  const MatrixXd y2 = x2 + detail::run_forward(g_, y1, mode, gc);

  cache.m.clear();
  MatrixXd out(width_, x.cols());
  out.topRows(h) = y1;
  out.bottomRows(h) = y2;
  return out;
}

MatrixXd RevBlock::backward(const MatrixXd& grad_out, const LayerCache& cache,
                            std::span<double> param_grad) const {
  if (cache.children.size() != f_.size() + g_.size()) {
    raise(Errc::no_cached_forward, "rev_block: backward before forward");
  }
  const int h = width_ / 2;
  check_width(grad_out, width_, "rev_block backward");

  Eigen::Index nf = 0;
  for (const auto& l : f_) nf += l->param_size();
  std::span<double> fg, gg;
  if (!param_grad.empty()) {
    fg = param_grad.subspan(0, nf);
    gg = param_grad.subspan(nf);
  }
  std::span<const LayerCache> fc(cache.children.data(), f_.size());
  std::span<const LayerCache> gc(cache.children.data() + f_.size(), g_.size());

  const MatrixXd u1 = grad_out.topRows(h);
  const MatrixXd u2 = grad_out.bottomRows(h);
  // y2 = x2 + G(y1): pull u2 through G into y1; y1 = x1 + F(x2).
  const MatrixXd v1 = u1 + detail::run_backward(g_, u2, gc, gg);
  const MatrixXd gx2 = u2 + detail::run_backward(f_, v1, fc, fg);

  MatrixXd gx(width_, grad_out.cols());
  gx.topRows(h) = v1;
  gx.bottomRows(h) = gx2;
  return gx;
}

Eigen::Index RevBlock::param_size() const {
  Eigen::Index n = 0;
  for (const auto& l : f_) n += l->param_size();
  for (const auto& l : g_) n += l->param_size();
  return n;
}

Eigen::Index RevBlock::state_size() const {
  Eigen::Index n = 0;
  for (const auto& l : f_) n += l->state_size();
  for (const auto& l : g_) n += l->state_size();
  return n;
}

void RevBlock::write_params(std::span<double> out) const {
  Eigen::Index off = 0;
  for (const auto* net : {&f_, &g_}) {
    for (const auto& l : *net) {
      l->write_params(out.subspan(off, l->param_size()));
      off += l->param_size();
    }
  }
}

void RevBlock::read_params(std::span<const double> in) {
  Eigen::Index off = 0;
  for (auto* net : {&f_, &g_}) {
    for (auto& l : *net) {
      l->read_params(in.subspan(off, l->param_size()));
      off += l->param_size();
    }
  }
}

void RevBlock::write_state(std::span<double> out) const {
  Eigen::Index off = 0;
  for (const auto* net : {&f_, &g_}) {
    for (const auto& l : *net) {
      l->write_state(out.subspan(off, l->state_size()));
      off += l->state_size();
    }
  }
}

void RevBlock::read_state(std::span<const double> in) {
  Eigen::Index off = 0;
  for (auto* net : {&f_, &g_}) {
    for (auto& l : *net) {
      l->read_state(in.subspan(off, l->state_size()));
      off += l->state_size();
    }
  }
}

LayerDesc RevBlock::descriptor() const { return {LayerKind::rev_block, {width_}, {}}; }

// ---------------------------------------------------------------------------
// Factory

std::unique_ptr<Layer> make_layer(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::dense:
      return std::make_unique<Dense>(static_cast<int>(d.ints.at(0)),
                                     static_cast<int>(d.ints.at(1)));
    case LayerKind::leaky_relu:
      return std::make_unique<LeakyRelu>(static_cast<int>(d.ints.at(0)), d.doubles.at(0));
    case LayerKind::relu:
      return std::make_unique<Relu>(static_cast<int>(d.ints.at(0)));
    case LayerKind::sigmoid:
      return std::make_unique<Sigmoid>(static_cast<int>(d.ints.at(0)));
    case LayerKind::batch_norm:
      return std::make_unique<BatchNorm>(static_cast<int>(d.ints.at(0)), d.doubles.at(0),
                                         d.doubles.at(1));
    case LayerKind::fixed_affine: {
      const auto w = static_cast<Eigen::Index>(d.ints.at(0));
      if (static_cast<Eigen::Index>(d.doubles.size()) != 2 * w) {
        raise(Errc::io_error, "fixed_affine descriptor size");
      }
      VectorXd a = Eigen::Map<const VectorXd>(d.doubles.data(), w);
      VectorXd b = Eigen::Map<const VectorXd>(d.doubles.data() + w, w);
      return std::make_unique<FixedAffine>(std::move(a), std::move(b));
    }
    case LayerKind::rev_block:
      return std::make_unique<RevBlock>(static_cast<int>(d.ints.at(0)));
  }
  raise(Errc::io_error, "unknown layer kind");
}

// ---------------------------------------------------------------------------
// Network

void Network::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty() && layers_.back()->out_width() != layer->in_width()) {
    raise(Errc::shape_mismatch, "network: layer widths do not chain");
  }
  layers_.push_back(std::move(layer));
}

MatrixXd Network::forward(const MatrixXd& x, Mode mode, Tape* tape) const {
  if (layers_.empty()) raise(Errc::shape_mismatch, "network: empty");
  check_width(x, in_width(), "network");
  if (tape == nullptr) {
    Tape scratch;
    scratch.layers.assign(layers_.size(), LayerCache{});
    return detail::run_forward(layers_, x, mode, scratch.layers);
  }
  tape->mode = mode;
  tape->layers.assign(layers_.size(), LayerCache{});
  return detail::run_forward(layers_, x, mode, tape->layers);
}

MatrixXd Network::backward(const MatrixXd& grad_out, const Tape& tape,
                           std::span<double> param_grad) const {
  if (tape.layers.size() != layers_.size()) {
    raise(Errc::no_cached_forward, "network: backward without a matching forward tape");
  }
  if (!param_grad.empty() &&
      static_cast<Eigen::Index>(param_grad.size()) != param_size()) {
    raise(Errc::shape_mismatch, "network backward: parameter gradient size");
  }
  return detail::run_backward(layers_, grad_out, tape.layers, param_grad);
}

Eigen::Index Network::param_size() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l->param_size();
  return n;
}

Eigen::Index Network::state_size() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l->state_size();
  return n;
}

VectorXd Network::get_params() const {
  VectorXd p(param_size());
  Eigen::Index off = 0;
  for (const auto& l : layers_) {
    l->write_params({p.data() + off, static_cast<std::size_t>(l->param_size())});
    off += l->param_size();
  }
  return p;
}

void Network::set_params(const VectorXd& p) {
  if (p.size() != param_size()) raise(Errc::shape_mismatch, "network: parameter vector size");
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    l->read_params({p.data() + off, static_cast<std::size_t>(l->param_size())});
    off += l->param_size();
  }
}

VectorXd Network::get_state() const {
  VectorXd s(state_size());
  Eigen::Index off = 0;
  for (const auto& l : layers_) {
    l->write_state({s.data() + off, static_cast<std::size_t>(l->state_size())});
    off += l->state_size();
  }
  return s;
}

void Network::set_state(const VectorXd& s) {
  if (s.size() != state_size()) raise(Errc::shape_mismatch, "network: state vector size");
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    l->read_state({s.data() + off, static_cast<std::size_t>(l->state_size())});
    off += l->state_size();
  }
}

int Network::in_width() const { return layers_.front()->in_width(); }
int Network::out_width() const { return layers_.back()->out_width(); }

std::vector<LayerDesc> Network::descriptors() const {
  std::vector<LayerDesc> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l->descriptor());
  return out;
}

Network Network::from_descriptors(const std::vector<LayerDesc>& descs) {
  Network net;
  for (const auto& d : descs) net.add(make_layer(d));
  return net;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(Eigen::Index n, AdamConfig cfg)
    : cfg_(cfg), m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)) {}

void Adam::step(VectorXd& params, const VectorXd& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    raise(Errc::shape_mismatch, "adam: parameter/gradient size");
  }
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -=
      cfg_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
}

}  // namespace dgp::nn
