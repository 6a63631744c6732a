#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "supdrive/agents.hpp"
#include "supdrive/training.hpp"

using namespace supdrive;
namespace fs = std::filesystem;

namespace {

// 0.5 * ||f(x) - y||^2 summed over the batch.
double mse(const Mlp& net, const Mat& x, const Mat& y) {
  return 0.5 * (net.forward(x) - y).squaredNorm();
}

double max_rel_grad_error(Activation act, std::uint64_t seed) {
  Rng rng(seed);
  Mlp net({4, 7, 5, 2}, act);
  net.init(rng);
  for (Eigen::Index i = 0; i < net.num_params(); ++i) net.params()(i) += 0.01 * rng.normal();
  Mat x(4, 6), y(2, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  Mlp::Cache c;
  const Mat out = net.forward(x, &c);
  Vec g = Vec::Zero(net.num_params());
  net.backward(c, out - y, g);
  double worst = 0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.num_params(); ++i) {
    const double p = net.params()(i);
    net.params()(i) = p + h;
    const double up = mse(net, x, y);
    net.params()(i) = p - h;
    const double dn = mse(net, x, y);
    net.params()(i) = p;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - g(i)) / std::max({std::abs(fd), std::abs(g(i)), 1e-4}));
  }
  return worst;
}

SacConfig tiny_sac() {
  SacConfig c;
  c.hidden = {16, 16};
  c.batch_size = 32;
  c.learning_starts = 0;
  return c;
}

// A battery of observations drawn from real driving rollouts.
std::vector<DrivingObservation> probe_battery() {
  std::vector<DrivingObservation> out;
  DrivingEnvConfig c;
  c.inattention.enabled = true;
  DrivingEnv env(c);
  Rng rng(2);
  for (int ep = 0; ep < 4; ++ep) {
    out.push_back(env.reset(ep));
    for (int i = 0; i < 25 && !env.done(); ++i)
      out.push_back(env.step({rng.uniform(-0.02, 0.02), rng.uniform(-1, 1)}, i % 4 != 0)
                        .observation);
  }
  return out;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("supdrive_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Gradients, TanhNetworkMatchesFiniteDifferences) {
  for (std::uint64_t s = 1; s <= 5; ++s) EXPECT_LT(max_rel_grad_error(Activation::kTanh, s), 1e-3);
}

TEST(Gradients, ReluNetworkMatchesFiniteDifferences) {
  for (std::uint64_t s = 1; s <= 5; ++s) EXPECT_LT(max_rel_grad_error(Activation::kRelu, s), 1e-3);
}

TEST(Gradients, InputGradientMatchesFiniteDifferences) {
  Rng rng(3);
  Mlp net({3, 8, 1}, Activation::kTanh);
  net.init(rng);
  Vec x(3);
  x << 0.3, -0.7, 1.1;
  Mlp::Cache c;
  net.forward(Mat(x), &c);
  Vec g;
  const Mat dx = net.backward(c, Mat::Ones(1, 1), g);
  for (int j = 0; j < 3; ++j) {
    Vec a = x, b = x;
    a(j) += 1e-6;
    b(j) -= 1e-6;
    const double fd = (net.forward1(a)(0) - net.forward1(b)(0)) / 2e-6;
    EXPECT_NEAR(dx(j, 0), fd, 1e-6);
  }
}

TEST(Optimizer, FirstAdamStepMovesByLearningRate) {
  Adam opt(3, 0.01);
  Vec p = Vec::Zero(3), g(3);
  g << 5.0, -0.2, 0.0;
  opt.step(p, g);
  EXPECT_NEAR(p(0), -0.01, 1e-9);
  EXPECT_NEAR(p(1), 0.01, 1e-9);
  EXPECT_EQ(p(2), 0.0);
  EXPECT_THROW(Adam(3, 0.0), ConfigError);
}

TEST(TwinCritics, ValueIsMinimumOfCriticsAtEveryProbe) {
  Sac sac(kDrivingFeatureDim, 2, tiny_sac(), 4);
  // Spread the critics apart so the minimum is not trivially the first one.
  Rng rng(1);
  sac.critic(1).init(rng);
  const DrivingAgent agent(sac);
  int first = 0, second = 0;
  for (const auto& o : probe_battery()) {
    const auto q = agent.critics(o);
    ASSERT_EQ(agent.value(o), std::min(q[0], q[1]));
    (q[0] <= q[1] ? first : second)++;
  }
  EXPECT_GT(first + second, 50);
}

TEST(MaskedSoftmax, MaskedEntriesGetZeroProbability) {
  Vec logits(4);
  logits << 1.0, 50.0, -2.0, 0.5;
  const Vec p = Ppo::softmax_masked(logits, {true, false, true, true});
  EXPECT_EQ(p(1), 0.0);
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  const double z = std::exp(1.0) + std::exp(-2.0) + std::exp(0.5);
  EXPECT_NEAR(p(0), std::exp(1.0) / z, 1e-15);
}

TEST(MaskedSoftmax, ExtremeLogitsStayFinite) {
  Vec logits(3);
  logits << 1e6, -1e6, 0.0;
  const Vec p = Ppo::softmax_masked(logits, {true, true, true});
  EXPECT_EQ(p(0), 1.0);
  EXPECT_TRUE(p.allFinite());
}

TEST(MaskedSoftmax, BadMasksAreContractViolations) {
  Vec logits = Vec::Zero(3);
  EXPECT_THROW(Ppo::softmax_masked(logits, {false, false, false}), ContractViolation);
  EXPECT_THROW(Ppo::softmax_masked(logits, {true, true}), ContractViolation);
}

TEST(MaskedSoftmax, SampledActionsRespectMask) {
  Ppo ppo(5, 4, PpoConfig{}, 2);
  Rng rng(3);
  const std::vector<bool> mask{false, true, false, true};
  for (int i = 0; i < 2000; ++i) {
    const int a = ppo.act(Vec::Random(5), mask, false, rng);
    ASSERT_TRUE(mask[a]);
  }
}

// Hand-evaluated: gamma 0.5, lambda 1, three unit rewards with zero values.
TEST(Gae, TerminalEpisode) {
  RolloutBuffer b;
  for (int i = 0; i < 3; ++i) b.add(Vec::Zero(1), {true}, 0, 0.0, 0.0, 1.0, i == 2);
  b.last_value = 100.0;  // ignored after a terminal step
  b.compute_gae(0.5, 1.0);
  EXPECT_NEAR(b.advantages[0], 1.75, 1e-15);
  EXPECT_NEAR(b.advantages[1], 1.5, 1e-15);
  EXPECT_NEAR(b.advantages[2], 1.0, 1e-15);
}

TEST(Gae, BootstrapsUnfinishedTail) {
  RolloutBuffer b;
  for (int i = 0; i < 3; ++i) b.add(Vec::Zero(1), {true}, 0, 0.0, 0.0, 1.0, false);
  b.last_value = 2.0;
  b.compute_gae(0.5, 1.0);
  for (double a : b.advantages) EXPECT_NEAR(a, 2.0, 1e-15);
}

TEST(Gae, EpisodeBoundaryCutsCredit) {
  RolloutBuffer b;
  b.add(Vec::Zero(1), {true}, 0, 0.0, 0.5, 1.0, true);
  b.add(Vec::Zero(1), {true}, 0, 0.0, 0.0, 10.0, false);
  b.last_value = 0.0;
  b.compute_gae(0.9, 0.95);
  EXPECT_NEAR(b.advantages[0], 0.5, 1e-15);
  EXPECT_NEAR(b.returns[0], 1.0, 1e-15);
  EXPECT_NEAR(b.advantages[1], 10.0, 1e-15);
}

// One-step continuous bandit: the deterministic action should find the peak.
TEST(SacLearning, SolvesOneStepBandit) {
  SacConfig cfg = tiny_sac();
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 64;
  Sac sac(1, 2, cfg, 9);
  ReplayBuffer buf(1, 2, 10000);
  Rng rng(5);
  const Vec obs = Vec::Ones(1);
  for (int t = 0; t < 3000; ++t) {
    const Vec a = sac.act(obs, false, rng);
    const double r = -(a(0) - 0.5) * (a(0) - 0.5) - (a(1) + 0.3) * (a(1) + 0.3);
    buf.add(obs, a, r, obs, true);
    if (t >= 64) sac.update(buf, rng);
  }
  const Vec a = sac.act(obs, true, rng);
  EXPECT_NEAR(a(0), 0.5, 0.1);
  EXPECT_NEAR(a(1), -0.3, 0.1);
  // The twin critics learn the peak value.
  EXPECT_NEAR(sac.value(obs), 0.0, 0.05);
}

TEST(SacLearning, UpdatesAreSeedDeterministic) {
  auto run = [] {
    Sac sac(3, 2, tiny_sac(), 1);
    ReplayBuffer buf(3, 2, 500);
    Rng rng(2);
    for (int i = 0; i < 200; ++i)
      buf.add(Vec::Random(3), Vec::Random(2), rng.normal(), Vec::Random(3), i % 17 == 0);
    for (int i = 0; i < 30; ++i) sac.update(buf, rng);
    return sac.actor().params();
  };
  std::srand(1);
  const Vec a = run();
  std::srand(1);
  EXPECT_EQ(a, run());
}

TEST(PpoLearning, SearchTrainingReproducibleBitForBit) {
  SearchTrainConfig cfg;
  cfg.total_steps = 4096;
  cfg.ppo.n_steps = 1024;
  cfg.eval_episodes = 5;
  const auto a = train_search(cfg, SearchEnvConfig{});
  const auto b = train_search(cfg, SearchEnvConfig{});
  EXPECT_EQ(a.checkpoint.tensor("policy"), b.checkpoint.tensor("policy"));
  EXPECT_EQ(a.checkpoint.tensor("value"), b.checkpoint.tensor("value"));
  EXPECT_EQ(a.checkpoint.meta["learning_curve"], b.checkpoint.meta["learning_curve"]);
  EXPECT_EQ(a.converged, b.converged);
  EXPECT_FALSE(a.diagnostics.empty());
}

TEST(PpoLearning, InvalidConfigsRejected) {
  PpoConfig p;
  p.clip_range = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.gamma = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  SacConfig s;
  s.learning_rate = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(CheckpointRoundTrip, DrivingValueBatteryBitwise) {
  const DrivingAgent agent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)};
  const fs::path dir = temp_dir("drive");
  save_checkpoint(agent.to_checkpoint({{"converged", true}}), dir / "d.ckpt");
  const DrivingAgent back = DrivingAgent::from_checkpoint(load_checkpoint(dir / "d.ckpt"));
  Rng r1(1), r2(1);
  for (const auto& o : probe_battery()) {
    ASSERT_EQ(agent.value(o), back.value(o));
    ASSERT_EQ(agent.critics(o), back.critics(o));
    const auto a = agent.act(o, r1), b = back.act(o, r2);
    ASSERT_EQ(a.steering, b.steering);
  }
}

TEST(CheckpointRoundTrip, SearchAndSupervisorAgents) {
  const SearchEnvConfig layout;
  const SearchAgent s(Ppo(layout.observation_dim(), layout.max_elements(), PpoConfig{}, 3), layout);
  const fs::path dir = temp_dir("agents");
  save_checkpoint(s.to_checkpoint({}), dir / "s.ckpt");
  const SearchAgent s2 = SearchAgent::from_checkpoint(load_checkpoint(dir / "s.ckpt"));
  SearchEnv env(layout);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    env.reset(3, 3, i % 2, i);
    while (!env.done() && rng.bernoulli(0.8)) env.step(rng.uniform_int(0, 8));
    ASSERT_EQ(s.value(env.observation()), s2.value(env.observation()));
  }
  auto norm = std::make_shared<ValueNormalizer>();
  norm->drive.push(3.0);
  norm->drive.push(5.0);
  const SupervisorAgent sup(Ppo(kSupervisorObsDim, 2, PpoConfig{}, 4), norm);
  save_checkpoint(sup.to_checkpoint({}), dir / "v.ckpt");
  const SupervisorAgent sup2 = SupervisorAgent::from_checkpoint(load_checkpoint(dir / "v.ckpt"));
  EXPECT_EQ(sup2.normalizer()->drive.mean, 4.0);
  EXPECT_TRUE(sup2.normalizer()->frozen);
  const SupervisorObservation o{0.3, -1.2, Locus::kSearch};
  EXPECT_EQ(sup.value(o), sup2.value(o));
}

TEST(CheckpointErrors, TruncatedFileIsCorrupt) {
  const DrivingAgent agent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)};
  const std::string blob = serialize_checkpoint(agent.to_checkpoint({}));
  for (std::size_t keep : {std::size_t{0}, std::size_t{10}, blob.size() / 2, blob.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(blob.substr(0, keep)), CheckpointError) << keep;
}

TEST(CheckpointErrors, FlippedByteFailsChecksum) {
  const DrivingAgent agent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)};
  std::string blob = serialize_checkpoint(agent.to_checkpoint({}));
  blob[blob.size() / 2] ^= 0x20;
  EXPECT_THROW(deserialize_checkpoint(blob), CheckpointError);
  blob = serialize_checkpoint(agent.to_checkpoint({}));
  blob[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(blob), CheckpointError);
}

TEST(CheckpointErrors, SchemaBumpRefusedWithMessage) {
  Checkpoint c = DrivingAgent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)}.to_checkpoint({});
  c.schema_version = kCheckpointSchemaVersion + 1;
  try {
    deserialize_checkpoint(serialize_checkpoint(c));
    FAIL() << "schema bump accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("schema"), std::string::npos);
  }
}

TEST(CheckpointErrors, SidecarProblemsAreExplicit) {
  const fs::path dir = temp_dir("sidecar");
  const DrivingAgent agent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)};
  save_checkpoint(agent.to_checkpoint({}), dir / "a.ckpt");
  fs::remove(dir / "a.ckpt.json");
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), CheckpointError);
  save_checkpoint(agent.to_checkpoint({}), dir / "b.ckpt");
  std::ofstream(dir / "b.ckpt.json") << "{not json";
  EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(CheckpointErrors, WrongKindOrShapeRejected) {
  const Checkpoint d = DrivingAgent{Sac(kDrivingFeatureDim, 2, tiny_sac(), 7)}.to_checkpoint({});
  EXPECT_THROW(SearchAgent::from_checkpoint(d), CheckpointError);
  Checkpoint bad = d;
  bad.tensors["critic1"] = Vec::Zero(5);
  EXPECT_THROW(DrivingAgent::from_checkpoint(bad), CheckpointError);
  bad = d;
  bad.tensors.erase("actor");
  EXPECT_THROW(DrivingAgent::from_checkpoint(bad), CheckpointError);
}

TEST(TrainingPreconditions, UnconvergedSubtaskCheckpointRefused) {
  Checkpoint c;
  c.kind = "driving";
  c.meta["converged"] = false;
  EXPECT_THROW(require_converged(c), PreconditionError);
  c.meta["converged"] = true;
  EXPECT_NO_THROW(require_converged(c));
}

TEST(Convergence, PlateauNeedsTwoStableWindows) {
  ConvergenceTracker t{10, 0.02, {}};
  for (int i = 0; i < 19; ++i) t.push(-5.0);
  EXPECT_FALSE(t.plateaued());
  t.push(-5.0);
  EXPECT_TRUE(t.plateaued());
  for (int i = 0; i < 10; ++i) t.push(-4.0);
  EXPECT_FALSE(t.plateaued());
}
