#ifndef SUPDRIVE_SAC_HPP_
#define SUPDRIVE_SAC_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/nn.hpp"

namespace supdrive {

struct SacConfig {
  std::vector<int> hidden{64, 64};
  double learning_rate = 1e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  long replay_capacity = 1'000'000;
  long learning_starts = 5000;
  int train_freq = 1;
  int gradient_steps = 1;
  double init_alpha = 1.0;
  bool auto_alpha = true;
  double target_entropy = -2.0;  // -dim(action)

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("sac.learning_rate must be > 0");
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("sac.gamma must lie in [0, 1]");
    if (!(tau > 0 && tau <= 1)) throw ConfigError("sac.tau must lie in (0, 1]");
    if (batch_size < 1 || replay_capacity < batch_size)
      throw ConfigError("sac batch size / replay capacity invalid");
    if (train_freq < 1 || gradient_steps < 0) throw ConfigError("sac update cadence invalid");
    if (!(init_alpha > 0)) throw ConfigError("sac.init_alpha must be > 0");
    if (hidden.empty()) throw ConfigError("sac.hidden must not be empty");
  }
};

class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int act_dim, long capacity)
      : obs_(obs_dim, capacity), next_(obs_dim, capacity), act_(act_dim, capacity),
        rew_(capacity), done_(capacity), cap_(capacity) {}

  void add(const Vec& o, const Vec& a, double r, const Vec& o2, bool terminal) {
    obs_.col(pos_) = o;
    act_.col(pos_) = a;
    rew_(pos_) = r;
    next_.col(pos_) = o2;
    done_(pos_) = terminal ? 1.0 : 0.0;
    pos_ = (pos_ + 1) % cap_;
    size_ = std::min(size_ + 1, cap_);
  }

  struct Batch {
    Mat obs, act, next;
    Vec rew, done;
  };

  Batch sample(int n, Rng& rng) const {
    if (size_ == 0) throw StateError("sampling from an empty replay buffer");
    Batch b{Mat(obs_.rows(), n), Mat(act_.rows(), n), Mat(obs_.rows(), n), Vec(n), Vec(n)};
    for (int i = 0; i < n; ++i) {
      const long k = rng.uniform_int(0, static_cast<int>(size_ - 1));
      b.obs.col(i) = obs_.col(k);
      b.act.col(i) = act_.col(k);
      b.next.col(i) = next_.col(k);
      b.rew(i) = rew_(k);
      b.done(i) = done_(k);
    }
    return b;
  }

  long size() const { return size_; }

 private:
  Mat obs_, next_, act_;
  Vec rew_, done_;
  long cap_;
  long pos_ = 0;
  long size_ = 0;
};

struct SacUpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

// Soft actor-critic on a tanh-squashed diagonal Gaussian; actions in [-1, 1].
class Sac {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  Sac() = default;
  Sac(int obs_dim, int act_dim, SacConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), obs_dim_(obs_dim), act_dim_(act_dim) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x534143));  // "SAC"
    std::vector<int> a{obs_dim};
    a.insert(a.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    a.push_back(2 * act_dim);
    actor_ = Mlp(a, Activation::kRelu);
    actor_.init(rng, 0.01);
    std::vector<int> q{obs_dim + act_dim};
    q.insert(q.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    q.push_back(1);
    for (int i = 0; i < 2; ++i) {
      q_[i] = Mlp(q, Activation::kRelu);
      q_[i].init(rng);
      qt_[i] = q_[i];
      q_opt_[i] = Adam(q_[i].num_params(), cfg_.learning_rate);
    }
    actor_opt_ = Adam(actor_.num_params(), cfg_.learning_rate);
    log_alpha_ = std::log(cfg_.init_alpha);
    alpha_opt_ = Adam(1, cfg_.learning_rate);
  }

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_); }

  Vec act(const Vec& obs, bool deterministic, Rng& rng) const {
    const Vec out = actor_.forward1(obs);
    Vec a(act_dim_);
    for (int j = 0; j < act_dim_; ++j) {
      double u = out(j);
      if (!deterministic) {
        const double ls = std::clamp(out(act_dim_ + j), kLogStdMin, kLogStdMax);
        u += std::exp(ls) * rng.normal();
      }
      a(j) = std::tanh(u);
    }
    return a;
  }

  std::array<double, 2> q_values(const Vec& obs, const Vec& action) const {
    Vec x(obs_dim_ + act_dim_);
    x << obs, action;
    return {q_[0].forward1(x)(0), q_[1].forward1(x)(0)};
  }

  // Minimum of the twin critics at the deterministic action.
  double value(const Vec& obs) const {
    Rng unused(0);
    const auto q = q_values(obs, act(obs, true, unused));
    return std::min(q[0], q[1]);
  }

  SacUpdateStats update(const ReplayBuffer& buf, Rng& rng) {
    const int n = cfg_.batch_size;
    const auto b = buf.sample(n, rng);
    SacUpdateStats st;
    const double alpha = std::exp(log_alpha_);

    // Critic targets.
    Mat eps_next = normal_matrix(act_dim_, n, rng);
    const Sample nx = sample_actions(b.next, eps_next, nullptr);
    const Mat xin_next = concat(b.next, nx.a);
    const Mat qn = qt_[0].forward(xin_next).cwiseMin(qt_[1].forward(xin_next));
    Vec y(n);
    for (int i = 0; i < n; ++i)
      y(i) = b.rew(i) + cfg_.gamma * (1.0 - b.done(i)) * (qn(0, i) - alpha * nx.logp(i));

    const Mat xin = concat(b.obs, b.act);
    for (int k = 0; k < 2; ++k) {
      Mlp::Cache c;
      const Mat qv = q_[k].forward(xin, &c);
      Mat d(1, n);
      for (int i = 0; i < n; ++i) {
        const double e = qv(0, i) - y(i);
        d(0, i) = e / n;
        st.critic_loss += 0.5 * e * e / n;
      }
      Vec g = Vec::Zero(q_[k].num_params());
      q_[k].backward(c, d, g);
      q_opt_[k].step(q_[k].params(), g);
    }

    // Actor through the updated critics.
    Mat eps = normal_matrix(act_dim_, n, rng);
    Mlp::Cache ac;
    const Sample s = sample_actions(b.obs, eps, &ac);
    const Mat xa = concat(b.obs, s.a);
    Mlp::Cache c0, c1;
    const Mat q0 = q_[0].forward(xa, &c0);
    const Mat q1 = q_[1].forward(xa, &c1);
    Mat d0 = Mat::Zero(1, n), d1 = Mat::Zero(1, n);
    for (int i = 0; i < n; ++i) {
      if (q0(0, i) <= q1(0, i)) d0(0, i) = 1.0;
      else d1(0, i) = 1.0;
      st.actor_loss += (alpha * s.logp(i) - std::min(q0(0, i), q1(0, i))) / n;
    }
    Vec scratch = Vec::Zero(q_[0].num_params());
    const Mat dx0 = q_[0].backward(c0, d0, scratch);
    scratch.setZero();
    const Mat dx1 = q_[1].backward(c1, d1, scratch);
    const Mat dqda = (dx0 + dx1).bottomRows(act_dim_);

    Mat dout(2 * act_dim_, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < act_dim_; ++j) {
        const double a = s.a(j, i);
        const double sq = 1.0 - a * a;
        const double se = s.std(j, i) * eps(j, i);
        dout(j, i) = (alpha * 2.0 * a - dqda(j, i) * sq) / n;
        const double dls = (alpha * (-1.0 + 2.0 * a * se) - dqda(j, i) * sq * se) / n;
        dout(act_dim_ + j, i) = s.clamped(j, i) ? 0.0 : dls;
      }
    }
    Vec ga = Vec::Zero(actor_.num_params());
    actor_.backward(ac, dout, ga);
    actor_opt_.step(actor_.params(), ga);

    const double mean_logp = s.logp.mean();
    st.entropy = -mean_logp;
    if (cfg_.auto_alpha) {
      Vec la(1);
      la << log_alpha_;
      Vec gl(1);
      gl << -(mean_logp + cfg_.target_entropy);
      alpha_opt_.step(la, gl);
      log_alpha_ = la(0);
    }
    st.alpha = std::exp(log_alpha_);
    for (int k = 0; k < 2; ++k) polyak_update(qt_[k].params(), q_[k].params(), cfg_.tau);
    ++updates_;
    return st;
  }

  long updates() const { return updates_; }

  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& critic(int k) { return q_[k]; }
  const Mlp& critic(int k) const { return q_[k]; }
  Mlp& target(int k) { return qt_[k]; }
  double& log_alpha() { return log_alpha_; }

 private:
  struct Sample {
    Mat a, std;
    Vec logp;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;
  };

  static Mat normal_matrix(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  }

  static Mat concat(const Mat& a, const Mat& b) {
    Mat x(a.rows() + b.rows(), a.cols());
    x << a, b;
    return x;
  }

  Sample sample_actions(const Mat& obs, const Mat& eps, Mlp::Cache* cache) const {
    const Mat out = actor_.forward(obs, cache);
    const Eigen::Index n = obs.cols();
    Sample s{Mat(act_dim_, n), Mat(act_dim_, n), Vec::Zero(n),
             Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>(act_dim_, n)};
    constexpr double kHalfLog2Pi = 0.91893853320467274178;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < act_dim_; ++j) {
        const double raw = out(act_dim_ + j, i);
        const double ls = std::clamp(raw, kLogStdMin, kLogStdMax);
        s.clamped(j, i) = raw < kLogStdMin || raw > kLogStdMax;
        const double sd = std::exp(ls);
        const double u = out(j, i) + sd * eps(j, i);
        s.a(j, i) = std::tanh(u);
        s.std(j, i) = sd;
        // log(1 - tanh(u)^2) in a stable form.
        const double x = -2.0 * u;
        const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        const double log_jac = 2.0 * (std::log(2.0) - u - softplus);
        s.logp(i) += -0.5 * eps(j, i) * eps(j, i) - ls - kHalfLog2Pi - log_jac;
      }
    }
    return s;
  }

  SacConfig cfg_;
  int obs_dim_ = 0;
  int act_dim_ = 0;
  Mlp actor_;
  Mlp q_[2];
  Mlp qt_[2];
  Adam actor_opt_;
  Adam q_opt_[2];
  Adam alpha_opt_;
  double log_alpha_ = 0.0;
  long updates_ = 0;
};

inline void to_json(nlohmann::json& j, const SacConfig& c) {
  j = {{"hidden", c.hidden},
       {"learning_rate", c.learning_rate},
       {"gamma", c.gamma},
       {"tau", c.tau},
       {"batch_size", c.batch_size},
       {"replay_capacity", c.replay_capacity},
       {"learning_starts", c.learning_starts},
       {"train_freq", c.train_freq},
       {"gradient_steps", c.gradient_steps},
       {"init_alpha", c.init_alpha},
       {"auto_alpha", c.auto_alpha},
       {"target_entropy", c.target_entropy}};
}
inline void from_json(const nlohmann::json& j, SacConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.learning_starts = j.value("learning_starts", c.learning_starts);
  c.train_freq = j.value("train_freq", c.train_freq);
  c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
  c.init_alpha = j.value("init_alpha", c.init_alpha);
  c.auto_alpha = j.value("auto_alpha", c.auto_alpha);
  c.target_entropy = j.value("target_entropy", c.target_entropy);
}

}  // namespace supdrive

#endif  // SUPDRIVE_SAC_HPP_
