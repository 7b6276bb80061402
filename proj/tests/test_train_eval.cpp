#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rspgrid/adam.hpp"
#include "rspgrid/config.hpp"
#include "rspgrid/dataset.hpp"
#include "rspgrid/gradcheck_suite.hpp"
#include "rspgrid/losses.hpp"
#include "rspgrid/metrics.hpp"
#include "rspgrid/trainer.hpp"
#include "rspgrid/viz.hpp"
#include "support.hpp"

namespace ag = rspgrid::ag;
namespace fs = std::filesystem;
namespace loss = rspgrid::loss;
namespace metrics = rspgrid::metrics;
namespace sim = rspgrid::sim;
using ag::Tensor;
using rspgrid::Rng;
using namespace testsupport;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rspgrid_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTinyConfig = R"(
grid.x = 16
grid.y = 16
model.arch = rsp
model.f = 3
model.m = 4
model.d_h = 3
model.head = 3
model.aspp_blocks = 1
sim.objects = 1
sim.static_obstacles = 0
sim.min_size = 1
sim.max_size = 2
sim.ego_clearance = 1
sim.frames = 4
train.seq_len = 4
train.epochs = 2
train.lr = 1e-3
seed = 5
)";

// Keys in `extra` override the tiny defaults.
rspgrid::cfg::ExperimentConfig tiny(const std::string& extra = "") {
  auto pairs = rspgrid::cfg::parse_pairs(kTinyConfig);
  for (const auto& [k, v] : rspgrid::cfg::parse_pairs(extra)) pairs[k] = v;
  std::string text;
  for (const auto& [k, v] : pairs) text += k + " = " + v + "\n";
  return rspgrid::cfg::parse_config(text);
}

sim::GridFrame random_frame(std::size_t n, Rng& rng) {
  sim::GridFrame f;
  f.x = f.y = n;
  f.s = 1;
  f.input.resize(n * n);
  f.gt_class.resize(n * n);
  f.gt_velocity.resize(2 * n * n);
  f.observability.resize(n * n);
  for (std::size_t c = 0; c < n * n; ++c) {
    f.observability[c] = rng.bernoulli(0.2) ? 0.0f : static_cast<float>(rng.uniform(0.1, 1.0));
    f.gt_class[c] = static_cast<sim::CellClass>(rng.below(4));
    if (rng.bernoulli(0.4)) {
      f.gt_velocity[2 * c] = static_cast<float>(rng.uniform(-8, 8));
      f.gt_velocity[2 * c + 1] = static_cast<float>(rng.uniform(-8, 8));
    }
    f.input[c] = rng.bernoulli(0.3) ? 1.0f : 0.0f;
  }
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(WeightedCe, ConfidentCorrectLogitsGiveNearZero) {
  std::vector<double> logits(9 * 4, -50.0);
  std::vector<int> labels(9);
  for (std::size_t c = 0; c < 9; ++c) {
    labels[c] = static_cast<int>(c % 4);
    logits[c * 4 + labels[c]] = 50.0;
  }
  const auto l = loss::weighted_ce_loss(Tensor<double>::from({3, 3, 4}, logits), labels, std::vector<double>(9, 1.0),
                                        {1, 1, 1, 1});
  EXPECT_LT(l.item(), 1e-12);
}

TEST(WeightedCe, UniformLogitsGiveLogFour) {
  const auto l = loss::weighted_ce_loss(Tensor<double>::zeros({3, 3, 4}), std::vector<int>(9, 2),
                                        std::vector<double>(9, 1.0), {1, 1, 1, 1});
  EXPECT_NEAR(l.item(), std::log(4.0), 1e-12);
}

TEST(WeightedCe, MatchesScalarOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto logits = random_tensor({3, 3, 4}, rng, -3, 3);
    std::vector<int> labels(9);
    std::vector<double> w(9), cw(4);
    for (auto& l : labels) l = static_cast<int>(rng.below(4));
    for (auto& v : w) v = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0, 1);
    for (auto& v : cw) v = rng.uniform(0.1, 2);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      if (w[c] <= 0) continue;
      ++n;
      double z = 0;
      for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits[c * 4 + k]);
      sum += -cw[labels[c]] * w[c] * (logits[c * 4 + labels[c]] - std::log(z));
    }
    const double ref = n ? sum / n : 0.0;
    EXPECT_NEAR(loss::weighted_ce_loss(logits, labels, w, cw).item(), ref, 1e-10);
  }
}

TEST(VelocityL2, ExamplesAndOracle) {
  Rng rng(2);
  const auto gt = random_tensor({3, 3, 2}, rng);
  EXPECT_EQ(loss::velocity_l2_loss(gt, gt, std::vector<double>(9, 1.0)).item(), 0.0);
  const auto one = loss::velocity_l2_loss(Tensor<double>::from({1, 1, 2}, {1.0, 1.0}), Tensor<double>::zeros({1, 1, 2}),
                                          std::vector<double>{1.0});
  EXPECT_EQ(one.item(), 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_tensor({3, 3, 2}, rng, -5, 5), g = random_tensor({3, 3, 2}, rng, -5, 5);
    std::vector<double> w(9);
    for (auto& v : w) v = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0, 3);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      if (w[c] <= 0) continue;
      ++n;
      sum += w[c] * (std::pow(p[2 * c] - g[2 * c], 2) + std::pow(p[2 * c + 1] - g[2 * c + 1], 2));
    }
    EXPECT_NEAR(loss::velocity_l2_loss(p, g, w).item(), n ? sum / n : 0.0, 1e-10);
  }
}

TEST(Heteroscedastic, UnitVarianceIsHalfMse) {
  Rng rng(3);
  const auto mu = random_tensor({3, 3, 2}, rng), gt = random_tensor({3, 3, 2}, rng);
  const std::vector<double> w(9, 1.0);
  const double mse = loss::velocity_l2_loss(mu, gt, w).item();
  EXPECT_NEAR(loss::heteroscedastic_loss(mu, Tensor<double>::zeros({3, 3, 1}), gt, w).item(), 0.5 * mse, 1e-10);
}

TEST(Heteroscedastic, ZeroResidualIsHalfLogVarianceClamped) {
  Rng rng(4);
  const auto mu = random_tensor({2, 2, 2}, rng);
  const std::vector<double> w(4, 1.0);
  EXPECT_NEAR(loss::heteroscedastic_loss(mu, Tensor<double>::full({2, 2, 1}, -2.0), mu, w).item(), -1.0, 1e-12);
  EXPECT_NEAR(loss::heteroscedastic_loss(mu, Tensor<double>::full({2, 2, 1}, -40.0), mu, w).item(),
              0.5 * loss::kLogVarMin, 1e-12);
}

TEST(Heteroscedastic, MatchesScalarOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mu = random_tensor({3, 3, 2}, rng, -2, 2), gt = random_tensor({3, 3, 2}, rng, -2, 2);
    const auto s = random_tensor({3, 3, 1}, rng, -8, 8);
    std::vector<double> w(9);
    for (auto& v : w) v = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0, 2);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      if (w[c] <= 0) continue;
      ++n;
      const double ls = std::clamp(s[c], -6.0, 6.0);
      const double sq = std::pow(gt[2 * c] - mu[2 * c], 2) + std::pow(gt[2 * c + 1] - mu[2 * c + 1], 2);
      sum += w[c] * (sq / (2 * std::exp(ls)) + 0.5 * ls);
    }
    EXPECT_NEAR(loss::heteroscedastic_loss(mu, s, gt, w).item(), n ? sum / n : 0.0, 1e-10);
  }
}

TEST(Losses, UnobservedCellsDoNotContribute) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto f = random_frame(4, rng);
    const std::size_t hidden = rng.below(16);
    f.observability[hidden] = 0.0f;
    rspgrid::cfg::TrainConfig tc;
    rspgrid::GridGeometry g;
    g.x = g.y = 4;
    const std::array<double, 4> cw{0.5, 1.0, 1.5, 2.0};
    auto make_out = [&](Rng& r) {
      rspgrid::zoo::NetworkOutput<double> o;
      o.class_logits = random_tensor({4, 4, 4}, r, -2, 2);
      o.v_initial = random_tensor({4, 4, 2}, r, -3, 3);
      o.v_refined = random_tensor({4, 4, 2}, r, -3, 3);
      return o;
    };
    Rng r1(trial), r2(trial);
    auto o1 = make_out(r1), o2 = make_out(r2);
    // Change the hidden cell's prediction and ground truth.
    auto perturb = [&](Tensor<double>& t, std::size_t width) {
      auto d = t.mutable_data();
      for (std::size_t k = 0; k < width; ++k) d[hidden * width + k] += 7.0;
    };
    perturb(o2.class_logits, 4);
    perturb(o2.v_initial, 2);
    perturb(o2.v_refined, 2);
    auto f2 = f;
    f2.gt_class[hidden] = static_cast<sim::CellClass>((static_cast<int>(f.gt_class[hidden]) + 1) % 4);
    f2.gt_velocity[2 * hidden] += 3.0f;
    // The velocity up-weighting counts nonzero cells, so keep nonzero-ness.
    if (f.gt_velocity[2 * hidden] == 0.0f && f.gt_velocity[2 * hidden + 1] == 0.0f) f2.gt_velocity[2 * hidden] = 0.0f;
    const auto a = rspgrid::train::sequence_loss<double>({o1}, {f}, tc, cw, g).item();
    const auto b = rspgrid::train::sequence_loss<double>({o2}, {f2}, tc, cw, g).item();
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(ClassWeights, InverseFrequencyMeanOneAndOrderFree) {
  Rng rng(7);
  std::vector<sim::GridFrame> frames;
  for (int i = 0; i < 6; ++i) frames.push_back(random_frame(5, rng));
  std::vector<const sim::GridFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const auto w = loss::class_weights(ptrs);
  std::array<double, 4> count{};
  for (const auto* f : ptrs)
    for (std::size_t c = 0; c < f->cells(); ++c)
      if (f->observability[c] > 0) count[static_cast<std::size_t>(f->gt_class[c])] += 1;
  EXPECT_NEAR((w[0] + w[1] + w[2] + w[3]) / 4, 1.0, 1e-12);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(w[a] * count[a], w[b] * count[b], 1e-9);
  std::reverse(ptrs.begin(), ptrs.end());
  EXPECT_EQ(loss::class_weights(ptrs), w);
}

TEST(ClassWeights, AbsentClassGetsZero) {
  Rng rng(8);
  auto f = random_frame(4, rng);
  for (auto& c : f.gt_class)
    if (c == sim::CellClass::unknown) c = sim::CellClass::free;
  const auto w = loss::class_weights({&f});
  EXPECT_EQ(w[1], 0.0);
  EXPECT_NEAR((w[0] + w[2] + w[3]) / 3, 1.0, 1e-12);
}

TEST(VelocityWeights, NonzeroCellsUpweightedWithCap) {
  sim::GridFrame f;
  f.x = f.y = 4;
  f.gt_velocity.assign(32, 0.0f);
  f.observability.assign(16, 1.0f);
  f.gt_velocity[0] = 3.0f;
  auto w = loss::velocity_weights(f, 100.0);
  EXPECT_EQ(w[0], 16.0);
  EXPECT_EQ(w[1], 1.0);
  w = loss::velocity_weights(f, 5.0);
  EXPECT_EQ(w[0], 5.0);
  f.observability[0] = 0.5f;
  EXPECT_EQ(loss::velocity_weights(f, 100.0)[0], 8.0);
}

TEST(Losses, GradcheckSuite) {
  for (const auto& r : rspgrid::gradcheck::run("train-eval-cli")) {
    EXPECT_TRUE(r.ok()) << r.name << " max_rel_err " << r.report.max_rel_error;
  }
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Iou, PerfectAndDisjoint) {
  const std::vector<int> gt{0, 2, 3, 0, 2, 3};
  const std::vector<float> obs(6, 1.0f);
  const auto perfect = metrics::iou_metrics(gt, gt, obs);
  EXPECT_EQ(*perfect.per_class[0], 1.0);
  EXPECT_EQ(*perfect.per_class[2], 1.0);
  EXPECT_FALSE(perfect.per_class[1]);
  EXPECT_EQ(*perfect.mean, 1.0);
  const auto disjoint = metrics::iou_metrics(std::vector<int>(6, 1), std::vector<int>(6, 0), obs);
  EXPECT_EQ(*disjoint.per_class[0], 0.0);
  EXPECT_EQ(*disjoint.per_class[1], 0.0);
  EXPECT_FALSE(disjoint.per_class[3]);
}

TEST(Iou, UnobservedCellsIgnoredAndEmptyIsAbsent) {
  const auto r = metrics::iou_metrics({3, 3}, {3, 3}, {0.0f, 0.0f});
  for (const auto& c : r.per_class) EXPECT_FALSE(c);
  EXPECT_FALSE(r.mean);
}

TEST(Iou, BruteForceOracleOnRandomLabelings) {
  Rng rng(9);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = trial % 2 ? 9 : 16;
    std::vector<int> pred(n), gt(n);
    std::vector<float> obs(n);
    for (std::size_t c = 0; c < n; ++c) {
      pred[c] = static_cast<int>(rng.below(4));
      gt[c] = static_cast<int>(rng.below(4));
      obs[c] = rng.bernoulli(0.2) ? 0.0f : 1.0f;
    }
    const auto r = metrics::iou_metrics(pred, gt, obs);
    double sum = 0;
    int present = 0;
    for (int k = 0; k < 4; ++k) {
      int inter = 0, uni = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (obs[c] <= 0) continue;
        inter += pred[c] == k && gt[c] == k;
        uni += pred[c] == k || gt[c] == k;
      }
      if (uni == 0) {
        ASSERT_FALSE(r.per_class[k]);
        continue;
      }
      const double iou = static_cast<double>(inter) / uni;
      ASSERT_TRUE(r.per_class[k]);
      ASSERT_EQ(*r.per_class[k], iou);
      sum += iou;
      ++present;
    }
    if (present) ASSERT_EQ(*r.mean, sum / present);
  }
}

TEST(VelocityMae, ExamplesAndOracle) {
  const std::vector<float> gt{2, 0, 0, 0};
  EXPECT_EQ(*metrics::velocity_mae(gt, gt, {1, 1}), 0.0);
  EXPECT_EQ(*metrics::velocity_mae({3, 3, 5, 5}, gt, {1, 1}), 2.0);
  EXPECT_FALSE(metrics::velocity_mae({1, 1}, {0, 0}, {1}));
  Rng rng(10);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<float> p(18), g(18), obs(9);
    for (std::size_t c = 0; c < 9; ++c) {
      obs[c] = rng.bernoulli(0.3) ? 0.0f : 1.0f;
      if (rng.bernoulli(0.5)) {
        g[2 * c] = static_cast<float>(rng.uniform(-9, 9));
        g[2 * c + 1] = static_cast<float>(rng.uniform(-9, 9));
      }
      p[2 * c] = static_cast<float>(rng.uniform(-9, 9));
      p[2 * c + 1] = static_cast<float>(rng.uniform(-9, 9));
    }
    const double min_speed = trial % 3 == 0 ? 5.0 : 0.0;
    double sum = 0;
    int n = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      const double s = std::hypot(static_cast<double>(g[2 * c]), static_cast<double>(g[2 * c + 1]));
      if (obs[c] <= 0 || !(s > 0) || !(s > min_speed)) continue;
      sum += std::abs(static_cast<double>(p[2 * c]) - g[2 * c]) + std::abs(static_cast<double>(p[2 * c + 1]) - g[2 * c + 1]);
      ++n;
    }
    const auto r = metrics::velocity_mae(p, g, obs, min_speed);
    if (n == 0) {
      ASSERT_FALSE(r);
    } else {
      ASSERT_TRUE(r);
      ASSERT_NEAR(*r, sum / (2 * n), 1e-12);
    }
  }
}

TEST(MetricsCsv, HeaderAndAbsentValues) {
  EXPECT_EQ(metrics::csv_header(), "epoch,miou,iou_free,iou_unknown,iou_occupied,iou_moving,mae_vel,mae_vel_fast,params,seconds");
  metrics::MetricsReport r;
  r.iou.per_class[0] = 0.5;
  r.iou.mean = 0.5;
  r.mae = 1.25;
  r.params = 42;
  r.seconds = 3.5;
  EXPECT_EQ(metrics::csv_row(3, r, true), "3,0.500000,0.500000,NA,NA,NA,1.250000,NA,42,3.500");
  EXPECT_EQ(metrics::csv_row(3, r, false), "3,0.500000,0.500000,NA,NA,NA,1.250000,NA,42,0.000");
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientKeepsParametersAndDecaysMoments) {
  rspgrid::nn::ParameterStore<double> store;
  Rng rng(11);
  auto p = store.add_uniform("p", {3}, 1, rng);
  rspgrid::optim::Adam<double> adam(store, {0.1, 0.9, 0.999, 1e-8});
  ag::backward(ag::sum(ag::mul(p, Tensor<double>::from({3}, {1.0, -2.0, 0.5}))));
  ASSERT_TRUE(adam.step());
  const auto before = values(p);
  const auto m1 = adam.first_moment("p");
  const auto v1 = adam.second_moment("p");
  store.zero_grad();
  for (auto& g : p.mutable_grad()) g = 0.0;
  ASSERT_TRUE(adam.step());
  const auto m2 = adam.first_moment("p");
  const auto v2 = adam.second_moment("p");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(m2[i], 0.9 * m1[i], 1e-15);
    EXPECT_NEAR(v2[i], 0.999 * v1[i], 1e-15);
  }
  // With zero gradient the update is driven by the decayed first moment only.
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NE(values(p)[i], before[i]);
  rspgrid::nn::ParameterStore<double> fresh;
  auto q = fresh.add_zeros("q", {2});
  rspgrid::optim::Adam<double> adam2(fresh, {});
  for (auto& g : q.mutable_grad()) g = 0.0;
  adam2.step();
  EXPECT_EQ(values(q), (std::vector<double>{0.0, 0.0}));
}

TEST(Adam, FirstStepIsSignTimesLr) {
  rspgrid::nn::ParameterStore<double> store;
  auto p = store.add_zeros("p", {4});
  rspgrid::optim::Adam<double> adam(store, {0.01, 0.9, 0.999, 1e-8});
  const std::vector<double> g{0.3, -2.0, 1e-3, -5e-2};
  for (std::size_t i = 0; i < 4; ++i) p.mutable_grad()[i] = g[i];
  adam.step();
  for (std::size_t i = 0; i < 4; ++i) {
    // m_hat = g, v_hat = g^2 after bias correction.
    EXPECT_NEAR(p[i], -0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
    EXPECT_NEAR(p[i], -0.01 * (g[i] > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, QuadraticConvergesWithinFiveHundredSteps) {
  rspgrid::nn::ParameterStore<double> store;
  auto x = store.add_zeros("x", {1});
  x.mutable_data()[0] = 5.0;
  rspgrid::optim::Adam<double> adam(store, {0.1, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 500; ++i) {
    store.zero_grad();
    ag::backward(ag::square(ag::add_scalar(x, -1.5)));
    adam.step();
  }
  EXPECT_NEAR(x[0], 1.5, 0.05);
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  rspgrid::nn::ParameterStore<double> store;
  auto x = store.add_zeros("x", {2});
  rspgrid::optim::Adam<double> adam(store, {});
  x.mutable_grad()[0] = std::nan("");
  EXPECT_FALSE(adam.step());
  EXPECT_EQ(adam.skipped(), 1u);
  EXPECT_EQ(adam.steps(), 0u);
  EXPECT_EQ(values(x), (std::vector<double>{0.0, 0.0}));
}

// ---------------------------------------------------------------------------
// Config and dataset

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = rspgrid::cfg::parse_config("grid.x = 32\ngrid.y = 32  # comment\nmodel.arch = gru\n");
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.beta1, 0.9);
  EXPECT_EQ(c.train.beta2, 0.999);
  EXPECT_EQ(c.train.epochs, 10u);
  EXPECT_EQ(c.train.seq_len, 12u);
  EXPECT_FALSE(c.train.heteroscedastic);
  EXPECT_EQ(c.model.geom.x, 32u);
  const auto again = rspgrid::cfg::parse_config(rspgrid::cfg::to_text(c));
  EXPECT_EQ(rspgrid::cfg::to_text(again), rspgrid::cfg::to_text(c));
}

TEST(Config, Errors) {
  using rspgrid::cfg::ConfigError;
  using rspgrid::cfg::parse_config;
  EXPECT_THROW(parse_config("grid.z = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("grid.x = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("grid.x\n"), ConfigError);
  EXPECT_THROW(parse_config("grid.x = 3\ngrid.x = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("model.arch = lstm\n"), ConfigError);
  EXPECT_THROW(parse_config("train.seq_len = 20\n"), ConfigError);
  EXPECT_THROW(parse_config("train.precision = half\n"), ConfigError);
}

TEST(Config, DataHashIgnoresModelAndTraining) {
  const auto a = tiny(), b = tiny("train.lr = 0.5\n");
  EXPECT_EQ(rspgrid::cfg::data_hash(a), rspgrid::cfg::data_hash(b));
  EXPECT_NE(rspgrid::cfg::data_hash(a), rspgrid::cfg::data_hash(tiny("sim.p_drop = 0.3\n")));
}

TEST(Dataset, RoundTripAndSplit) {
  const auto dir = scratch("dataset");
  const auto c = tiny();
  const auto m = rspgrid::data::generate_dataset(c, dir, 10);
  EXPECT_EQ(m.entries.size(), 10u);
  const auto d = rspgrid::data::load_dataset(dir, c);
  EXPECT_EQ(d.train.size(), 8u);
  EXPECT_EQ(d.eval.size(), 2u);
  const auto direct = sim::generate_sequence(c.sim, c.geom, rspgrid::data::sequence_seed(c.seed, 4));
  ASSERT_EQ(d.eval[0].size(), direct.size());
  for (std::size_t t = 0; t < direct.size(); ++t) {
    EXPECT_EQ(d.eval[0][t].input, direct[t].input);
    EXPECT_EQ(d.eval[0][t].gt_class, direct[t].gt_class);
    EXPECT_EQ(d.eval[0][t].gt_velocity, direct[t].gt_velocity);
    EXPECT_EQ(d.eval[0][t].observability, direct[t].observability);
  }
  auto other = tiny("grid.x = 24\ngrid.y = 24\n");
  EXPECT_THROW(rspgrid::data::load_dataset(dir, other), std::runtime_error);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Training and evaluation

TEST(Train, OverfitsOneSequence) {
  const auto c = tiny();
  const auto seq = sim::generate_sequence(c.sim, c.geom, 77);
  rspgrid::zoo::Model<float> model(c.model, 1);
  rspgrid::optim::Adam<float> adam(model.params(), {1e-3, 0.9, 0.999, 1e-8});
  std::vector<const sim::GridFrame*> frames;
  for (const auto& f : seq) frames.push_back(&f);
  const auto cw = loss::class_weights(frames);
  std::vector<Tensor<float>> inputs;
  for (const auto& f : seq) inputs.push_back(rspgrid::train::input_tensor<float>(f));
  double first = 0, last = 0;
  for (int step = 1; step <= 50; ++step) {
    model.params().zero_grad();
    const auto total = rspgrid::train::sequence_loss(model.forward_sequence(inputs, false), seq, c.train, cw, c.geom);
    ag::backward(total);
    adam.step();
    if (step == 1) first = total.item();
    last = total.item();
  }
  EXPECT_LT(last, first);
}

TEST(Train, DeterministicOutputsAndArchInterchangeability) {
  const auto dir = scratch("train");
  for (const auto* arch : {"rsp", "gru"}) {
    const auto c = tiny(std::string("model.arch = ") + arch + "\n");
    const auto c_text = std::string(kTinyConfig);
    if (!fs::exists(dir / "data")) rspgrid::data::generate_dataset(c, dir / "data", 5);
    const auto d = rspgrid::data::load_dataset(dir / "data", c);
    rspgrid::train::TrainOptions opt;
    opt.deterministic = true;
    const auto a = rspgrid::train::train(c, d, dir / (std::string(arch) + "_a"), opt);
    const auto b = rspgrid::train::train(c, d, dir / (std::string(arch) + "_b"), opt);
    EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint)) << arch;
    EXPECT_EQ(slurp(a.metrics_csv), slurp(b.metrics_csv)) << arch;
    EXPECT_TRUE(fs::exists(dir / (std::string(arch) + "_a") / "checkpoint_epoch_01.gtck"));
    EXPECT_TRUE(fs::exists(dir / (std::string(arch) + "_a") / "checkpoint_epoch_02.gtck"));
    EXPECT_EQ(a.epochs.size(), 2u);
    (void)c_text;
  }
  fs::remove_all(dir);
}

TEST(Evaluate, ReproducesFinalEpochTrainingMetrics) {
  const auto dir = scratch("eval");
  const auto c = tiny("train.metrics_split = train\ntrain.precision = double\n");
  rspgrid::data::generate_dataset(c, dir / "data", 5);
  const auto d = rspgrid::data::load_dataset(dir / "data", c);
  rspgrid::train::TrainOptions opt;
  opt.deterministic = true;
  const auto r = rspgrid::train::train(c, d, dir / "run", opt);
  const auto e = rspgrid::train::evaluate(c, r.checkpoint, d, rspgrid::train::Split::train);
  // Checkpoints store float32, so double-precision models compare to rounding.
  const auto& last = r.epochs.back();
  for (std::size_t k = 0; k < 4; ++k) {
    ASSERT_EQ(e.iou.per_class[k].has_value(), last.iou.per_class[k].has_value());
    if (e.iou.per_class[k]) EXPECT_NEAR(*e.iou.per_class[k], *last.iou.per_class[k], 1e-3);
  }
  ASSERT_TRUE(e.mae && last.mae);
  EXPECT_NEAR(*e.mae, *last.mae, 1e-3);
  EXPECT_EQ(e.params, last.params);

  const auto cf = tiny("train.metrics_split = train\n");
  const auto rf = rspgrid::train::train(cf, d, dir / "runf", opt);
  const auto ef = rspgrid::train::evaluate(cf, rf.checkpoint, d, rspgrid::train::Split::train);
  EXPECT_EQ(metrics::csv_row(2, ef, false), metrics::csv_row(2, rf.epochs.back(), false));
  EXPECT_THROW(rspgrid::train::evaluate(cf, dir / "missing.gtck", d, rspgrid::train::Split::eval), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Evaluate, NoMovingCellsMeansMovingIouAbsent) {
  auto c = tiny("sim.v_max = 0\n");
  std::vector<rspgrid::data::Sequence> seqs{sim::generate_sequence(c.sim, c.geom, 3)};
  rspgrid::zoo::Model<double> model(c.model, 2);
  // Make sure the model never predicts the moving class.
  for (auto& v : model.params().get("seg.classifier.bias").mutable_data()) v = 0.0;
  model.params().get("seg.classifier.bias").mutable_data()[3] = -1e6;
  const auto r = rspgrid::train::evaluate_model(model, seqs);
  EXPECT_FALSE(r.iou.per_class[3]);
  EXPECT_FALSE(r.mae);
  EXPECT_TRUE(r.iou.per_class[0]);
}

TEST(Evaluate, ReportMirrorsTableColumns) {
  metrics::MetricsReport r;
  r.iou.per_class = {0.9, std::nullopt, 0.4, 0.3};
  r.iou.mean = (0.9 + 0.4 + 0.3) / 3;
  r.mae = 1.5;
  r.mae_fast = 4.0;
  r.params = 1234;
  const auto s = metrics::format_report(r);
  for (const char* key : {"mIoU", "free", "unknown", "occupied", "moving", "MAE", "params"}) {
    EXPECT_NE(s.find(key), std::string::npos) << key;
  }
}

// ---------------------------------------------------------------------------
// Visualization

TEST(Viz, ZeroHiddenStateIsBlackAndSized) {
  const auto img = rspgrid::viz::grid_image(rspgrid::viz::cell_norms(Tensor<double>::zeros({6, 4, 3})), 6, 4, 1.0);
  EXPECT_EQ(img.width, 6u);
  EXPECT_EQ(img.height, 4u);
  for (auto p : img.pixels) EXPECT_EQ(p, 0);
}

TEST(Viz, PgmRoundTripAndOrientation) {
  const auto dir = scratch("viz");
  std::vector<double> cells(6, 0.0);
  cells[1] = 1.0;  // cell (0, 1): column 0, row 0 of a 3-row image
  const auto img = rspgrid::viz::grid_image(cells, 2, 3, 1.0);
  EXPECT_EQ(img.pixels[0 * 2 + 0], 0);
  EXPECT_EQ(img.pixels[1 * 2 + 0], 255);
  rspgrid::viz::write_pgm(dir / "a.pgm", img);
  const auto back = rspgrid::viz::read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.width, 2u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.pixels, img.pixels);
  fs::remove_all(dir);
}

TEST(Viz, RenderWritesPerFrameImages) {
  const auto dir = scratch("render");
  const auto c = tiny();
  rspgrid::data::generate_dataset(c, dir / "data", 5);
  const auto d = rspgrid::data::load_dataset(dir / "data", c);
  rspgrid::train::TrainOptions opt;
  opt.deterministic = true;
  const auto r = rspgrid::train::train(tiny("train.epochs = 1\n"), d, dir / "run", opt);
  const auto paths = rspgrid::viz::render(c, r.checkpoint, d.eval[0], dir / "viz");
  EXPECT_EQ(paths.size(), 4 * c.train.seq_len);
  const auto hidden = rspgrid::viz::read_pgm(dir / "viz" / "hidden_000.pgm");
  EXPECT_EQ(hidden.width, c.geom.x);
  EXPECT_EQ(hidden.height, c.geom.y);
  fs::remove_all(dir);
}

TEST(Viz, TrailMaskExcludesCurrentFootprint) {
  const std::size_t n = 8;
  std::vector<std::vector<sim::CellClass>> fp(3, std::vector<sim::CellClass>(n * n, sim::CellClass::free));
  for (std::size_t t = 0; t < 3; ++t) fp[t][(2 * t) * n + 4] = sim::CellClass::moving;
  const auto mask = rspgrid::viz::trail_mask(fp, n, n);
  EXPECT_TRUE(mask[0 * n + 4]);
  EXPECT_TRUE(mask[2 * n + 4]);
  EXPECT_FALSE(mask[4 * n + 4]);
  EXPECT_FALSE(mask[3 * n + 4]);
  std::size_t count = 0;
  for (bool b : mask) count += b;
  EXPECT_EQ(count, 1u + 0u + 1u - 0u);
}
