#ifndef SUPDRIVE_AGENTS_HPP_
#define SUPDRIVE_AGENTS_HPP_

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/checkpoint.hpp"
#include "supdrive/common.hpp"
#include "supdrive/driving_env.hpp"
#include "supdrive/ppo.hpp"
#include "supdrive/sac.hpp"
#include "supdrive/search_env.hpp"
#include "supdrive/supervisor_env.hpp"

namespace supdrive {

// Network input for the driving agent. Absolute position and heading are
// dropped (they say nothing about the lane without a map); the rest is
// scaled to order one.
inline constexpr int kDrivingFeatureDim = 11;

inline Vec driving_features(const DrivingObservation& o) {
  auto clip = [](double x) { return std::clamp(x, -5.0, 5.0); };
  Vec f(kDrivingFeatureDim);
  f << o[kObsSpeed] / kMaxSpeed, o[kObsSteering] / kMaxSteering,
      clip(o[kObsProbeAhead] / 50.0), clip(o[kObsProbeLeft04] / 5.0),
      clip(o[kObsProbeRight04] / 5.0), clip(o[kObsProbeLeft157] / 2.0),
      clip(o[kObsProbeRight157] / 2.0), std::log1p(std::max(0.0, o[kObsSigmaPos])),
      o[kObsLca], o[kObsSpeedLimit] / kMaxSpeed, o[kObsAttended];
  return f;
}

inline ControlInput driving_control(const Vec& a) {
  return {kMaxSteering * a(0), kMaxAcceleration * a(1)};
}

class DrivingAgent : public DrivingController {
 public:
  DrivingAgent() = default;
  explicit DrivingAgent(Sac sac) : sac_(std::move(sac)) {}

  ControlInput act(const DrivingObservation& obs, Rng& rng) const override {
    return driving_control(sac_.act(driving_features(obs), deterministic_, rng));
  }
  double value(const DrivingObservation& obs) const override {
    return sac_.value(driving_features(obs));
  }
  std::array<double, 2> critics(const DrivingObservation& obs) const {
    const Vec f = driving_features(obs);
    Rng unused(0);
    return sac_.q_values(f, sac_.act(f, true, unused));
  }

  void set_deterministic(bool d) { deterministic_ = d; }
  Sac& sac() { return sac_; }
  const Sac& sac() const { return sac_; }

  Checkpoint to_checkpoint(nlohmann::json meta) const {
    Checkpoint c;
    c.kind = "driving";
    c.tensors["actor"] = sac_.actor().params();
    c.tensors["critic1"] = sac_.critic(0).params();
    c.tensors["critic2"] = sac_.critic(1).params();
    c.meta = std::move(meta);
    c.meta["sac"] = sac_.config();
    c.meta["feature_dim"] = kDrivingFeatureDim;
    c.meta["action_dim"] = 2;
    c.meta["log_alpha"] = std::log(sac_.alpha());
    return c;
  }

  static DrivingAgent from_checkpoint(const Checkpoint& c) {
    if (c.kind != "driving")
      throw CheckpointError("expected a driving checkpoint, got '" + c.kind + "'");
    if (c.meta.value("feature_dim", -1) != kDrivingFeatureDim)
      throw CheckpointError("driving checkpoint feature layout mismatch");
    const SacConfig cfg = c.meta.at("sac").get<SacConfig>();
    Sac sac(kDrivingFeatureDim, 2, cfg, 0);
    assign(sac.actor(), c.tensor("actor"), "actor");
    assign(sac.critic(0), c.tensor("critic1"), "critic1");
    assign(sac.critic(1), c.tensor("critic2"), "critic2");
    sac.target(0).params() = sac.critic(0).params();
    sac.target(1).params() = sac.critic(1).params();
    sac.log_alpha() = c.meta.value("log_alpha", 0.0);
    return DrivingAgent(std::move(sac));
  }

  static void assign(Mlp& net, const Vec& p, const std::string& name) {
    if (p.size() != net.num_params())
      throw CheckpointError("tensor '" + name + "' has " + std::to_string(p.size()) +
                            " values, network expects " + std::to_string(net.num_params()));
    net.params() = p;
  }

 private:
  Sac sac_;
  bool deterministic_ = true;
};

class SearchAgent : public SearchController {
 public:
  SearchAgent() = default;
  SearchAgent(Ppo ppo, SearchEnvConfig layout) : ppo_(std::move(ppo)), layout_(layout) {}

  int act(const std::vector<double>& obs, const std::vector<bool>& mask,
          Rng& rng) const override {
    return ppo_.act(to_vec(obs), mask, deterministic_, rng);
  }
  double value(const std::vector<double>& obs) const override {
    return ppo_.value(to_vec(obs));
  }

  static Vec to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void set_deterministic(bool d) { deterministic_ = d; }
  Ppo& ppo() { return ppo_; }
  const Ppo& ppo() const { return ppo_; }
  const SearchEnvConfig& layout() const { return layout_; }

  Checkpoint to_checkpoint(nlohmann::json meta) const {
    Checkpoint c;
    c.kind = "search";
    c.tensors["policy"] = ppo_.policy_net().params();
    c.tensors["value"] = ppo_.value_net().params();
    c.meta = std::move(meta);
    c.meta["ppo"] = ppo_.config();
    c.meta["max_rows"] = layout_.max_rows;
    c.meta["max_cols"] = layout_.max_cols;
    return c;
  }

  static SearchAgent from_checkpoint(const Checkpoint& c) {
    if (c.kind != "search")
      throw CheckpointError("expected a search checkpoint, got '" + c.kind + "'");
    SearchEnvConfig layout;
    layout.max_rows = c.meta.value("max_rows", layout.max_rows);
    layout.max_cols = c.meta.value("max_cols", layout.max_cols);
    Ppo ppo(layout.observation_dim(), layout.max_elements(), c.meta.at("ppo").get<PpoConfig>(), 0);
    DrivingAgent::assign(ppo.policy_net(), c.tensor("policy"), "policy");
    DrivingAgent::assign(ppo.value_net(), c.tensor("value"), "value");
    return SearchAgent(std::move(ppo), layout);
  }

 private:
  Ppo ppo_;
  SearchEnvConfig layout_;
  bool deterministic_ = true;
};

inline constexpr int kSupervisorObsDim = 3;

class SupervisorAgent {
 public:
  SupervisorAgent() = default;
  SupervisorAgent(Ppo ppo, std::shared_ptr<ValueNormalizer> norm)
      : ppo_(std::move(ppo)), norm_(std::move(norm)) {}

  Locus act(const SupervisorObservation& o, const std::vector<bool>& mask, bool deterministic,
            Rng& rng, double* logp = nullptr) const {
    return static_cast<Locus>(ppo_.act(features(o), mask, deterministic, rng, logp));
  }
  double value(const SupervisorObservation& o) const { return ppo_.value(features(o)); }

  static Vec features(const SupervisorObservation& o) {
    const auto a = o.as_array();
    return Eigen::Map<const Vec>(a.data(), kSupervisorObsDim);
  }

  Ppo& ppo() { return ppo_; }
  const Ppo& ppo() const { return ppo_; }
  const std::shared_ptr<ValueNormalizer>& normalizer() const { return norm_; }

  Checkpoint to_checkpoint(nlohmann::json meta) const {
    Checkpoint c;
    c.kind = "supervisor";
    c.tensors["policy"] = ppo_.policy_net().params();
    c.tensors["value"] = ppo_.value_net().params();
    Vec n(6);
    n << norm_->drive.count, norm_->drive.mean, norm_->drive.m2, norm_->search.count,
        norm_->search.mean, norm_->search.m2;
    c.tensors["value_normalizer"] = n;
    c.meta = std::move(meta);
    c.meta["ppo"] = ppo_.config();
    return c;
  }

  static SupervisorAgent from_checkpoint(const Checkpoint& c) {
    if (c.kind != "supervisor")
      throw CheckpointError("expected a supervisor checkpoint, got '" + c.kind + "'");
    Ppo ppo(kSupervisorObsDim, 2, c.meta.at("ppo").get<PpoConfig>(), 0);
    DrivingAgent::assign(ppo.policy_net(), c.tensor("policy"), "policy");
    DrivingAgent::assign(ppo.value_net(), c.tensor("value"), "value");
    const Vec& n = c.tensor("value_normalizer");
    if (n.size() != 6) throw CheckpointError("value normalizer tensor has wrong size");
    auto norm = std::make_shared<ValueNormalizer>();
    norm->drive = {n(0), n(1), n(2)};
    norm->search = {n(3), n(4), n(5)};
    norm->frozen = true;
    return SupervisorAgent(std::move(ppo), std::move(norm));
  }

 private:
  Ppo ppo_;
  std::shared_ptr<ValueNormalizer> norm_ = std::make_shared<ValueNormalizer>();
};

}  // namespace supdrive

#endif  // SUPDRIVE_AGENTS_HPP_
