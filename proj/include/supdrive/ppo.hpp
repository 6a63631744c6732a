#ifndef SUPDRIVE_PPO_HPP_
#define SUPDRIVE_PPO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/nn.hpp"

namespace supdrive {

struct PpoConfig {
  std::vector<int> hidden{64, 64};
  double learning_rate = 1e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_range = 0.2;
  int epochs = 10;
  int n_steps = 2048;
  int minibatch_size = 64;
  double ent_coef = 0.0;
  double vf_coef = 0.5;
  double max_grad_norm = 0.5;
  bool normalize_advantage = true;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("ppo.learning_rate must be > 0");
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("ppo.gamma must lie in [0, 1]");
    if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ConfigError("ppo.gae_lambda in [0, 1]");
    if (!(clip_range > 0)) throw ConfigError("ppo.clip_range must be > 0");
    if (epochs < 1 || n_steps < 1 || minibatch_size < 1)
      throw ConfigError("ppo epochs / n_steps / minibatch must be >= 1");
    if (hidden.empty()) throw ConfigError("ppo.hidden must not be empty");
  }
};

struct RolloutBuffer {
  std::vector<Vec> obs;
  std::vector<std::vector<bool>> masks;
  std::vector<int> actions;
  std::vector<double> logps, values, rewards;
  std::vector<bool> dones;  // episode ended after this transition
  double last_value = 0.0;  // bootstrap for the unfinished tail
  std::vector<double> advantages, returns;

  std::size_t size() const { return obs.size(); }
  void clear() { *this = RolloutBuffer{}; }

  void add(Vec o, std::vector<bool> m, int a, double logp, double v, double r, bool done) {
    obs.push_back(std::move(o));
    masks.push_back(std::move(m));
    actions.push_back(a);
    logps.push_back(logp);
    values.push_back(v);
    rewards.push_back(r);
    dones.push_back(done);
  }

  void compute_gae(double gamma, double lambda) {
    const std::size_t n = size();
    advantages.assign(n, 0.0);
    returns.assign(n, 0.0);
    double gae = 0.0;
    for (std::size_t i = n; i-- > 0;) {
      const double next_v = dones[i] ? 0.0 : (i + 1 < n ? values[i + 1] : last_value);
      const double delta = rewards[i] + gamma * next_v - values[i];
      gae = delta + (dones[i] ? 0.0 : gamma * lambda * gae);
      advantages[i] = gae;
      returns[i] = gae + values[i];
    }
  }
};

struct PpoUpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

inline constexpr double kMaskedLogit = -1e9;

// Clipped-surrogate policy gradient with separate policy and value networks
// and invalid-action masking.
class Ppo {
 public:
  Ppo() = default;
  Ppo(int obs_dim, int n_actions, PpoConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), obs_dim_(obs_dim), n_actions_(n_actions) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x50504f));  // "PPO"
    std::vector<int> p{obs_dim};
    p.insert(p.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    std::vector<int> v = p;
    p.push_back(n_actions);
    v.push_back(1);
    pi_ = Mlp(p, Activation::kTanh);
    pi_.init(rng, 0.01);
    vf_ = Mlp(v, Activation::kTanh);
    vf_.init(rng, 1.0);
    pi_opt_ = Adam(pi_.num_params(), cfg_.learning_rate, 0.9, 0.999, 1e-5);
    vf_opt_ = Adam(vf_.num_params(), cfg_.learning_rate, 0.9, 0.999, 1e-5);
  }

  int obs_dim() const { return obs_dim_; }
  int n_actions() const { return n_actions_; }
  const PpoConfig& config() const { return cfg_; }

  Vec probabilities(const Vec& obs, const std::vector<bool>& mask) const {
    return softmax_masked(pi_.forward1(obs), mask);
  }

  int act(const Vec& obs, const std::vector<bool>& mask, bool deterministic, Rng& rng,
          double* logp = nullptr) const {
    const Vec p = probabilities(obs, mask);
    int a = 0;
    if (deterministic) {
      p.maxCoeff(&a);
    } else {
      double u = rng.uniform(0.0, 1.0);
      a = -1;
      for (int k = 0; k < n_actions_; ++k) {
        if (!mask[k]) continue;
        a = k;
        u -= p(k);
        if (u < 0) break;
      }
      if (a < 0) throw ContractViolation("no valid action under mask");
    }
    if (logp) *logp = std::log(std::max(p(a), 1e-300));
    return a;
  }

  double value(const Vec& obs) const { return vf_.forward1(obs)(0); }

  PpoUpdateStats update(RolloutBuffer& buf, Rng& rng) {
    buf.compute_gae(cfg_.gamma, cfg_.gae_lambda);
    const int n = static_cast<int>(buf.size());
    if (n == 0) throw StateError("ppo update on an empty rollout");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    PpoUpdateStats st;
    int batches = 0;
    for (int e = 0; e < cfg_.epochs; ++e) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      for (int start = 0; start < n; start += cfg_.minibatch_size) {
        const int m = std::min(cfg_.minibatch_size, n - start);
        Mat x(obs_dim_, m);
        Vec adv(m), ret(m), old_logp(m);
        for (int i = 0; i < m; ++i) {
          const int k = idx[start + i];
          x.col(i) = buf.obs[k];
          adv(i) = buf.advantages[k];
          ret(i) = buf.returns[k];
          old_logp(i) = buf.logps[k];
        }
        if (cfg_.normalize_advantage && m > 1) {
          const double mu = adv.mean();
          const double sd = std::sqrt((adv.array() - mu).square().sum() / (m - 1));
          adv = (adv.array() - mu) / (sd + 1e-8);
        }

        Mlp::Cache pc;
        const Mat logits = pi_.forward(x, &pc);
        Mat dlogits = Mat::Zero(n_actions_, m);
        for (int i = 0; i < m; ++i) {
          const int k = idx[start + i];
          const Vec p = softmax_masked(logits.col(i), buf.masks[k]);
          const int a = buf.actions[k];
          const double logp = std::log(std::max(p(a), 1e-300));
          const double ratio = std::exp(logp - old_logp(i));
          const double s1 = ratio * adv(i);
          const double s2 = std::clamp(ratio, 1 - cfg_.clip_range, 1 + cfg_.clip_range) * adv(i);
          st.policy_loss += -std::min(s1, s2);
          st.approx_kl += (ratio - 1) - (logp - old_logp(i));
          const bool clipped = s2 < s1;
          if (clipped) st.clip_fraction += 1.0;
          double ent = 0.0;
          for (int j = 0; j < n_actions_; ++j)
            if (p(j) > 0) ent -= p(j) * std::log(p(j));
          st.entropy += ent;
          const double dsurr = clipped ? 0.0 : ratio * adv(i);  // d surrogate / d logp
          for (int j = 0; j < n_actions_; ++j) {
            if (!buf.masks[k][j]) continue;
            const double dlogp = (j == a ? 1.0 : 0.0) - p(j);
            const double dent = p(j) > 0 ? -p(j) * (std::log(p(j)) + ent) : 0.0;
            dlogits(j, i) = (-dsurr * dlogp - cfg_.ent_coef * dent) / m;
          }
        }
        Vec gp = Vec::Zero(pi_.num_params());
        pi_.backward(pc, dlogits, gp);
        clip_grad_norm(gp, cfg_.max_grad_norm);
        pi_opt_.step(pi_.params(), gp);

        Mlp::Cache vc;
        const Mat v = vf_.forward(x, &vc);
        Mat dv(1, m);
        for (int i = 0; i < m; ++i) {
          const double e = v(0, i) - ret(i);
          st.value_loss += e * e;
          dv(0, i) = cfg_.vf_coef * 2.0 * e / m;
        }
        Vec gv = Vec::Zero(vf_.num_params());
        vf_.backward(vc, dv, gv);
        clip_grad_norm(gv, cfg_.max_grad_norm);
        vf_opt_.step(vf_.params(), gv);
        ++batches;
      }
    }
    const double total = static_cast<double>(cfg_.epochs) * n;
    st.policy_loss /= total;
    st.value_loss /= total;
    st.entropy /= total;
    st.clip_fraction /= total;
    st.approx_kl /= total;
    ++updates_;
    return st;
  }

  static Vec softmax_masked(const Vec& logits, const std::vector<bool>& mask) {
    if (static_cast<Eigen::Index>(mask.size()) != logits.size())
      throw ContractViolation("action mask size mismatch");
    Vec z = logits;
    bool any = false;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (!mask[j]) z(j) = kMaskedLogit;
      else any = true;
    }
    if (!any) throw ContractViolation("action mask has no valid entries");
    const double mx = z.maxCoeff();
    Vec p = (z.array() - mx).exp();
    for (Eigen::Index j = 0; j < z.size(); ++j)
      if (!mask[j]) p(j) = 0.0;
    return p / p.sum();
  }

  Mlp& policy_net() { return pi_; }
  const Mlp& policy_net() const { return pi_; }
  Mlp& value_net() { return vf_; }
  const Mlp& value_net() const { return vf_; }
  long updates() const { return updates_; }

 private:
  PpoConfig cfg_;
  int obs_dim_ = 0;
  int n_actions_ = 0;
  Mlp pi_, vf_;
  Adam pi_opt_, vf_opt_;
  long updates_ = 0;
};

inline void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = {{"hidden", c.hidden},
       {"learning_rate", c.learning_rate},
       {"gamma", c.gamma},
       {"gae_lambda", c.gae_lambda},
       {"clip_range", c.clip_range},
       {"epochs", c.epochs},
       {"n_steps", c.n_steps},
       {"minibatch_size", c.minibatch_size},
       {"ent_coef", c.ent_coef},
       {"vf_coef", c.vf_coef},
       {"max_grad_norm", c.max_grad_norm},
       {"normalize_advantage", c.normalize_advantage}};
}
inline void from_json(const nlohmann::json& j, PpoConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.gamma = j.value("gamma", c.gamma);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.clip_range = j.value("clip_range", c.clip_range);
  c.epochs = j.value("epochs", c.epochs);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
  c.ent_coef = j.value("ent_coef", c.ent_coef);
  c.vf_coef = j.value("vf_coef", c.vf_coef);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.normalize_advantage = j.value("normalize_advantage", c.normalize_advantage);
}

}  // namespace supdrive

#endif  // SUPDRIVE_PPO_HPP_
