#ifndef SUPDRIVE_NN_HPP_
#define SUPDRIVE_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "supdrive/common.hpp"

namespace supdrive {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { kTanh, kRelu };

// Feed-forward network; all weights live in one flat vector so optimizers,
// checkpoints and target-network averaging work on a single buffer.
// Batches are column-major: one sample per column.
class Mlp {
 public:
  struct Cache {
    std::vector<Mat> acts;  // acts[0] is the input, acts.back() the output
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation act) : sizes_(std::move(sizes)), act_(act) {
    if (sizes_.size() < 2) throw ConfigError("network needs at least input and output");
    for (int s : sizes_)
      if (s < 1) throw ConfigError("layer width must be >= 1");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    params_ = Vec::Zero(static_cast<Eigen::Index>(n));
  }

  // Scaled uniform init; the last layer is shrunk by `out_scale`.
  void init(Rng& rng, double out_scale = 1.0) {
    for (int l = 0; l < layers(); ++l) {
      const double bound = std::sqrt(1.0 / sizes_[l]) * (l + 1 == layers() ? out_scale : 1.0);
      auto w = weight(l);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
      bias(l).setZero();
    }
  }

  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return act_; }
  Eigen::Index num_params() const { return params_.size(); }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<Mat> weight(int l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Mat> weight(int l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vec> bias(int l) {
    return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }
  Eigen::Map<const Vec> bias(int l) const {
    return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }

  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    if (x.rows() != in_dim()) throw ContractViolation("network input has wrong size");
    Mat h = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(x);
    }
    for (int l = 0; l < layers(); ++l) {
      Mat z = weight(l) * h;
      z.colwise() += bias(l);
      if (l + 1 < layers()) {
        if (act_ == Activation::kTanh) z = z.array().tanh().matrix();
        else z = z.cwiseMax(0.0);
      }
      h = std::move(z);
      if (cache) cache->acts.push_back(h);
    }
    return h;
  }

  Vec forward1(const Vec& x) const { return forward(Mat(x)).col(0); }

  // Accumulates parameter gradients into `grad` and returns dL/dinput.
  Mat backward(const Cache& cache, const Mat& d_out, Vec& grad) const {
    if (grad.size() != num_params()) grad = Vec::Zero(num_params());
    Mat d = d_out;
    for (int l = layers() - 1; l >= 0; --l) {
      if (l + 1 < layers()) {
        const Mat& a = cache.acts[l + 1];
        if (act_ == Activation::kTanh) d = d.cwiseProduct((1.0 - a.array().square()).matrix());
        else d = d.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
      }
      const Mat& in = cache.acts[l];
      Eigen::Map<Mat> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
      Eigen::Map<Vec> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
      gw.noalias() += d * in.transpose();
      gb += d.rowwise().sum();
      d = weight(l).transpose() * d;
    }
    return d;
  }

 private:
  std::vector<int> sizes_;
  Activation act_ = Activation::kTanh;
  std::vector<std::size_t> offsets_;
  Vec params_;
};

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {
    if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
  }

  void step(Vec& params, const Vec& grad) {
    if (grad.size() != params.size() || params.size() != m_.size())
      throw ContractViolation("optimizer size mismatch");
    ++t_;
    m_ = b1_ * m_ + (1 - b1_) * grad;
    v_ = b2_ * v_ + (1 - b2_) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  double lr() const { return lr_; }
  long t() const { return t_; }

 private:
  double lr_ = 1e-4;
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Vec m_, v_;
};

inline void clip_grad_norm(Vec& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm && n > 0) g *= max_norm / n;
}

// target <- (1 - tau) target + tau source
inline void polyak_update(Vec& target, const Vec& source, double tau) {
  target = (1.0 - tau) * target + tau * source;
}

// Running observation statistics (parallel-variance merge).
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim)
      : mean_(Vec::Zero(dim)), var_(Vec::Ones(dim)), count_(1e-4) {}

  void update(const Mat& batch) {
    const double n = static_cast<double>(batch.cols());
    if (n == 0) return;
    const Vec bm = batch.rowwise().mean();
    const Vec bv = (batch.colwise() - bm).array().square().rowwise().sum() / n;
    const double tot = count_ + n;
    const Vec delta = bm - mean_;
    mean_ += delta * (n / tot);
    var_ = (var_ * count_ + bv * n + delta.cwiseAbs2() * (count_ * n / tot)) / tot;
    count_ = tot;
  }
  void update(const Vec& x) { update(Mat(x)); }

  Mat apply(const Mat& x) const {
    const Vec inv = (var_.array() + 1e-8).rsqrt();
    return ((x.colwise() - mean_).array().colwise() * inv.array()).cwiseMax(-kClip).cwiseMin(kClip);
  }
  Vec apply(const Vec& x) const { return apply(Mat(x)).col(0); }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vec& mean() const { return mean_; }
  const Vec& var() const { return var_; }
  double count() const { return count_; }
  void set(Vec mean, Vec var, double count) {
    mean_ = std::move(mean);
    var_ = std::move(var);
    count_ = count;
  }

  static constexpr double kClip = 10.0;

 private:
  Vec mean_, var_;
  double count_ = 0.0;
};

}  // namespace supdrive

#endif  // SUPDRIVE_NN_HPP_
