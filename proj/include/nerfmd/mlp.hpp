#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nerfmd/rng.hpp"

namespace nerfmd {

inline int encoding_dim(int levels) { return 3 * (2 * levels + 1); }

// Sinusoidal frequency encoding: [x, sin(2^0 pi x), cos(2^0 pi x), ...,
// sin(2^{L-1} pi x), cos(2^{L-1} pi x)] per component.
template <class T, class Derived, class OutDerived>
void encode_batch(const Eigen::MatrixBase<Derived>& x, int levels,
                  Eigen::MatrixBase<OutDerived> const& out_) {
  auto& out = const_cast<Eigen::MatrixBase<OutDerived>&>(out_);
  const auto n = x.rows();
  out.derived().resize(n, encoding_dim(levels));
  out.template leftCols<3>() = x;
  T freq = T(M_PI);
  for (int l = 0; l < levels; ++l) {
    for (int c = 0; c < 3; ++c) {
      out.col(3 + 6 * l + c) = (x.col(c) * freq).array().sin();
      out.col(3 + 6 * l + 3 + c) = (x.col(c) * freq).array().cos();
    }
    freq *= T(2);
  }
}

// Derivative of the encoding with respect to input component c, given the
// gradient w.r.t. the encoded features. dx += sum_f dfeat_f * dfeat_f/dx_c.
template <class T, class DerivedX, class DerivedG, class OutDerived>
void encode_backward(const Eigen::MatrixBase<DerivedX>& x, int levels,
                     const Eigen::MatrixBase<DerivedG>& dfeat,
                     Eigen::MatrixBase<OutDerived> const& dx_) {
  auto& dx = const_cast<Eigen::MatrixBase<OutDerived>&>(dx_);
  dx.derived().resize(x.rows(), 3);
  dx = dfeat.template leftCols<3>();
  T freq = T(M_PI);
  for (int l = 0; l < levels; ++l) {
    for (int c = 0; c < 3; ++c) {
      dx.col(c).array() +=
          freq * ((x.col(c) * freq).array().cos() *
                      dfeat.col(3 + 6 * l + c).array() -
                  (x.col(c) * freq).array().sin() *
                      dfeat.col(3 + 6 * l + 3 + c).array());
    }
    freq *= T(2);
  }
}

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

// Density activation scale: sigma = kDensityScale * softplus(z). Opaque
// surfaces need sigma in the hundreds; without the scale the pre-activation
// would have to grow far beyond what a step-size-limited optimizer reaches
// in a short training budget.
inline constexpr double kDensityScale = 30.0;

struct MlpConfig {
  int pos_levels = 6;
  int dir_levels = 2;
  int hidden = 64;
  int depth = 4;          // trunk hidden layers
  int color_hidden = 32;

  int pos_dim() const { return encoding_dim(pos_levels); }
  int dir_dim() const { return encoding_dim(dir_levels); }

  bool operator==(const MlpConfig&) const = default;
};

// NeRF-style MLP: trunk on encoded position -> density head (softplus) and a
// view-conditioned color branch (sigmoid). Parameters live in one flat vector
// so the optimizer and checkpoints can treat them uniformly.
template <class T>
class Mlp {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MapW = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
  using CMapW = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;

  struct Layer {
    int in = 0, out = 0;
    ptrdiff_t w_off = 0, b_off = 0;
  };

  struct Cache {
    Mat xpos, xdir;                 // encoded inputs
    std::vector<Mat> trunk_z;       // pre-activations
    std::vector<Mat> trunk_a;       // activations
    Vec sigma_z;
    Mat color_in, color_z, color_h, rgb_z, rgb;
  };

  Mlp() = default;
  explicit Mlp(const MlpConfig& cfg) : cfg_(cfg) {
    ptrdiff_t off = 0;
    auto add = [&](int in, int out) {
      layers_.push_back({in, out, off, off + ptrdiff_t(in) * out});
      off += ptrdiff_t(in) * out + out;
    };
    add(cfg.pos_dim(), cfg.hidden);
    for (int i = 1; i < cfg.depth; ++i) add(cfg.hidden, cfg.hidden);
    add(cfg.hidden, 1);                                  // sigma head
    add(cfg.hidden + cfg.dir_dim(), cfg.color_hidden);   // color branch
    add(cfg.color_hidden, 3);
    params_ = Vec::Zero(off);
  }

  const MlpConfig& config() const { return cfg_; }
  ptrdiff_t param_count() const { return params_.size(); }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  void init(Rng& rng) {
    for (const Layer& l : layers_) {
      double scale = std::sqrt(6.0 / (l.in + l.out));
      for (ptrdiff_t i = 0; i < ptrdiff_t(l.in) * l.out; ++i)
        params_[l.w_off + i] = T(rng.uniform(-scale, scale));
      for (int i = 0; i < l.out; ++i) params_[l.b_off + i] = T(0);
    }
    // Start nearly transparent: a strongly negative density bias avoids the
    // foggy local minimum where floaters form in front of every camera.
    params_[layers_[cfg_.depth].b_off] = T(-6.0);
  }

  // x: n x 3 positions, d: n x 3 unit view directions.
  void forward(const Mat& x, const Mat& d, Cache& c) const {
    check_finite();
    encode_batch<T>(x, cfg_.pos_levels, c.xpos);
    encode_batch<T>(d, cfg_.dir_levels, c.xdir);
    forward_encoded(c);
  }

  void forward_encoded(Cache& c) const {
    const auto n = c.xpos.rows();
    c.trunk_z.resize(cfg_.depth);
    c.trunk_a.resize(cfg_.depth);
    const Mat* in = &c.xpos;
    for (int i = 0; i < cfg_.depth; ++i) {
      affine(layers_[i], *in, c.trunk_z[i]);
      c.trunk_a[i] = softplus_arr(c.trunk_z[i]);
      in = &c.trunk_a[i];
    }
    Mat sig_z;
    affine(layers_[cfg_.depth], *in, sig_z);
    c.sigma_z = sig_z.col(0);

    c.color_in.resize(n, cfg_.hidden + cfg_.dir_dim());
    c.color_in.leftCols(cfg_.hidden) = *in;
    c.color_in.rightCols(cfg_.dir_dim()) = c.xdir;
    affine(layers_[cfg_.depth + 1], c.color_in, c.color_z);
    c.color_h = softplus_arr(c.color_z);
    affine(layers_[cfg_.depth + 2], c.color_h, c.rgb_z);
    c.rgb = (T(1) / (T(1) + (-c.rgb_z.array()).exp())).matrix();
  }

  Vec sigma(const Cache& c) const {
    return (T(kDensityScale) * (c.sigma_z.array().max(T(0)) +
                                (-c.sigma_z.array().abs()).exp().log1p()))
        .matrix();
  }
  const Mat& rgb(const Cache& c) const { return c.rgb; }

  // Accumulates parameter gradients for upstream gradients dsigma (w.r.t. the
  // activated density) and drgb (w.r.t. the activated color). When dx is
  // non-null it also receives the gradient w.r.t. the input positions.
  void backward(const Cache& c, const Vec& dsigma, const Mat& drgb, Vec& grad,
                Mat* dx = nullptr) const {
    if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());

    // color head
    Mat drgb_z = drgb.array() * (c.rgb.array() * (T(1) - c.rgb.array()));
    Mat dcolor_h;
    affine_backward(layers_[cfg_.depth + 2], c.color_h, drgb_z, grad, &dcolor_h);
    Mat dcolor_z = dcolor_h.array() * sigmoid_arr(c.color_z);
    Mat dcolor_in;
    affine_backward(layers_[cfg_.depth + 1], c.color_in, dcolor_z, grad, &dcolor_in);

    // sigma head
    Mat dsig_z =
        (dsigma.array() * T(kDensityScale) * sigmoid_vec(c.sigma_z)).matrix();
    const Mat& a_last = c.trunk_a[cfg_.depth - 1];
    Mat da_last;
    affine_backward(layers_[cfg_.depth], a_last, dsig_z, grad, &da_last);
    da_last += dcolor_in.leftCols(cfg_.hidden);

    // trunk
    Mat da = std::move(da_last);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      Mat dz = da.array() * sigmoid_arr(c.trunk_z[i]);
      const Mat& in = (i == 0) ? c.xpos : c.trunk_a[i - 1];
      Mat* din = (i > 0 || dx != nullptr) ? &da : nullptr;
      affine_backward(layers_[i], in, dz, grad, din);
    }
    if (dx != nullptr) {
      // da now holds the gradient w.r.t. the encoded positions
      encode_backward<T>(Mat(c.xpos.template leftCols<3>()), cfg_.pos_levels,
                         da, *dx);
    }
  }

  void check_finite() const {
    if (!params_.allFinite())
      throw std::runtime_error("radiance field parameters are not finite");
  }

 private:
  // Vectorized, numerically-stable softplus: max(x,0) + log1p(exp(-|x|)).
  static Mat softplus_arr(const Mat& z) {
    return (z.array().max(T(0)) + (-z.array().abs()).exp().log1p()).matrix();
  }
  auto sigmoid_arr(const Mat& z) const {
    return T(1) / (T(1) + (-z.array()).exp());
  }
  auto sigmoid_vec(const Vec& z) const {
    return T(1) / (T(1) + (-z.array()).exp());
  }

  void affine(const Layer& l, const Mat& in, Mat& out) const {
    CMapW W(params_.data() + l.w_off, l.out, l.in);
    Eigen::Map<const Vec> b(params_.data() + l.b_off, l.out);
    out.noalias() = in * W.transpose();
    out.rowwise() += b.transpose();
  }

  void affine_backward(const Layer& l, const Mat& in, const Mat& dout,
                       Vec& grad, Mat* din) const {
    MapW dW(grad.data() + l.w_off, l.out, l.in);
    Eigen::Map<Vec> db(grad.data() + l.b_off, l.out);
    dW.noalias() += dout.transpose() * in;
    db += dout.colwise().sum().transpose();
    if (din != nullptr) {
      CMapW W(params_.data() + l.w_off, l.out, l.in);
      din->noalias() = dout * W;
    }
  }

  MlpConfig cfg_;
  std::vector<Layer> layers_;
  Vec params_;
};

// Adam with exponential learning-rate decay.
template <class T>
class Adam {
 public:
  Adam(ptrdiff_t n, double lr_init, double lr_final, int total_steps)
      : lr_init_(lr_init), lr_final_(lr_final), total_steps_(total_steps) {
    m_.setZero(n);
    v_.setZero(n);
  }

  double learning_rate() const {
    double f = total_steps_ > 1
                   ? double(std::min(step_, total_steps_)) / (total_steps_ - 1)
                   : 0.0;
    return lr_init_ * std::pow(lr_final_ / lr_init_, f) * lr_scale_;
  }

  template <class VecA, class VecB>
  void update(VecA&& params, const VecB& grad) {
    ++step_;
    double lr = learning_rate();
    m_ = T(beta1_) * m_ + T(1 - beta1_) * grad;
    v_ = (T(beta2_) * v_.array() + T(1 - beta2_) * grad.array().square()).matrix();
    double bc1 = 1.0 - std::pow(beta1_, step_);
    double bc2 = 1.0 - std::pow(beta2_, step_);
    params.array() -= T(lr / bc1) * m_.array() /
                      ((v_.array() / T(bc2)).sqrt() + T(eps_));
  }

  void halve_learning_rate() { lr_scale_ *= 0.5; }

 private:
  Eigen::Matrix<T, Eigen::Dynamic, 1> m_, v_;
  double lr_init_, lr_final_;
  int total_steps_;
  int step_ = 0;
  double lr_scale_ = 1.0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

}  // namespace nerfmd
