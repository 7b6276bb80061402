#include <gtest/gtest.h>

#include <cmath>

#include "rspgrid/gradcheck.hpp"
#include "rspgrid/gradcheck_suite.hpp"
#include "rspgrid/rsp_cell.hpp"
#include "support.hpp"

namespace ag = rspgrid::ag;
namespace cell = rspgrid::cell;
namespace nn = rspgrid::nn;
using ag::Tensor;
using rspgrid::GridGeometry;
using rspgrid::Rng;
using namespace testsupport;

namespace {

using Vec = std::vector<double>;

cell::CellConfig small_config(std::size_t n = 4) {
  cell::CellConfig c;
  c.input_channels = 2;
  c.hidden_channels = 3;
  c.embed_channels = 2;
  c.head_channels = 3;
  c.geom.x = n;
  c.geom.y = n;
  c.geom.resolution_m = 0.5;
  c.geom.frame_rate_hz = 10.0;
  return c;
}

void randomize(nn::ParameterStore<double>& store, Rng& rng, double scale = 0.5) {
  for (auto& [_, t] : store.all()) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  }
}

// Scalar re-implementation of the cell on flat channels-last arrays.
struct Oracle {
  const nn::ParameterStore<double>& store;
  std::size_t n;

  Vec conv(const std::string& name, const Vec& x, std::size_t cin, std::size_t k, bool act) const {
    const auto& w = store.get(name + ".weight");
    auto out = naive_conv(x, n, n, cin, values(w), k, w.dim(3), values(store.get(name + ".bias")));
    if (act) for (auto& v : out) v = leaky(v);
    return out;
  }
  Vec head(const std::string& name, const Vec& x, std::size_t cin, std::size_t hidden) const {
    return conv(name + ".out", conv(name + ".block1", conv(name + ".block0", x, cin, 3, true), hidden, 3, true), hidden, 1,
                false);
  }
  Vec cat(const Vec& a, std::size_t ca, const Vec& b, std::size_t cb) const {
    Vec out(n * n * (ca + cb));
    for (std::size_t c = 0; c < n * n; ++c) {
      for (std::size_t k = 0; k < ca; ++k) out[c * (ca + cb) + k] = a[c * ca + k];
      for (std::size_t k = 0; k < cb; ++k) out[c * (ca + cb) + ca + k] = b[c * cb + k];
    }
    return out;
  }
  Vec gru(const std::string& name, const Vec& h, const Vec& x, std::size_t ci, std::size_t ch) const {
    const auto xh = cat(x, ci, h, ch);
    auto z = conv(name + ".update", xh, ci + ch, 3, false), r = conv(name + ".reset", xh, ci + ch, 3, false);
    Vec rh(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) rh[i] = sigm(r[i]) * h[i];
    const auto cand = conv(name + ".candidate", cat(x, ci, rh, ch), ci + ch, 3, false);
    Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = (1 - sigm(z[i])) * h[i] + sigm(z[i]) * std::tanh(cand[i]);
    return out;
  }
  static void clamp_norm(Vec& off, double limit) {
    for (std::size_t c = 0; c < off.size() / 2; ++c) {
      const double nrm = std::hypot(off[2 * c], off[2 * c + 1]);
      if (nrm > limit) {
        off[2 * c] *= limit / nrm;
        off[2 * c + 1] *= limit / nrm;
      }
    }
  }
};

struct OracleStep {
  Vec h, off, v_initial, v_refined, att;
};

OracleStep oracle_rsp(const nn::ParameterStore<double>& store, const cell::CellConfig& cfg, const Vec& h, const Vec& off,
                      const Vec& x) {
  const std::size_t n = cfg.geom.x, m = cfg.hidden_channels, dh = cfg.embed_channels, f = cfg.input_channels;
  const double res = cfg.geom.resolution_m, fr = cfg.geom.frame_rate_hz;
  Oracle o{store, n};
  const auto q = o.head("rnn.query", h, m, cfg.head_channels);
  // Splat h (sum), off and q (mass mean).
  Vec hp(n * n * m, 0.0), op(n * n * 2, 0.0), qp(n * n * dh, 0.0), mass(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t s = i * n + j;
      const double tx = i + off[2 * s] / res, ty = j + off[2 * s + 1] / res;
      for (long a = 0; a < 2; ++a)
        for (long b = 0; b < 2; ++b) {
          const long xt = static_cast<long>(std::floor(tx)) + a, yt = static_cast<long>(std::floor(ty)) + b;
          if (xt < 0 || yt < 0 || xt >= static_cast<long>(n) || yt >= static_cast<long>(n)) continue;
          const double w = (1 - std::abs(tx - xt)) * (1 - std::abs(ty - yt));
          const std::size_t d = static_cast<std::size_t>(xt) * n + static_cast<std::size_t>(yt);
          for (std::size_t k = 0; k < m; ++k) hp[d * m + k] += w * h[s * m + k];
          for (std::size_t k = 0; k < 2; ++k) op[d * 2 + k] += w * off[s * 2 + k];
          for (std::size_t k = 0; k < dh; ++k) qp[d * dh + k] += w * q[s * dh + k];
          mass[d] += w;
        }
    }
  for (std::size_t c = 0; c < n * n; ++c) {
    const double den = std::max(1e-3, mass[c]);
    for (std::size_t k = 0; k < 2; ++k) op[c * 2 + k] /= den;
    for (std::size_t k = 0; k < dh; ++k) qp[c * dh + k] /= den;
  }
  const auto key = o.head("rnn.key", x, f, cfg.head_channels);
  OracleStep r;
  r.att.resize(n * n);
  Vec gated(hp.size());
  for (std::size_t c = 0; c < n * n; ++c) {
    double dot = 0;
    for (std::size_t k = 0; k < dh; ++k) dot += qp[c * dh + k] * key[c * dh + k];
    r.att[c] = sigm(dot / std::sqrt(static_cast<double>(dh)));
    for (std::size_t k = 0; k < m; ++k) gated[c * m + k] = r.att[c] * hp[c * m + k];
  }
  r.h = o.gru("rnn.gru", gated, x, f, m);
  r.v_initial = o.head("rnn.velocity", r.h, m, cfg.head_channels);
  Vec off_new(n * n * 2);
  for (std::size_t i = 0; i < off_new.size(); ++i) off_new[i] = r.v_initial[i] / fr;
  Oracle::clamp_norm(off_new, cfg.geom.off_max());
  r.off.resize(n * n * 2);
  for (std::size_t c = 0; c < n * n; ++c)
    for (std::size_t k = 0; k < 2; ++k) r.off[c * 2 + k] = r.att[c] * op[c * 2 + k] + (1 - r.att[c]) * off_new[c * 2 + k];
  Oracle::clamp_norm(r.off, cfg.geom.off_max());
  r.v_refined.resize(r.off.size());
  for (std::size_t i = 0; i < r.off.size(); ++i) r.v_refined[i] = r.off[i] * fr;
  return r;
}

}  // namespace

TEST(Embeddings, ZeroParametersGiveZeroFields) {
  nn::ParameterStore<double> store;
  Rng rng(1);
  const auto cfg = small_config();
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  store.fill(0.0);
  const auto e = c.compute_embeddings(random_tensor({4, 4, 3}, rng), random_tensor({4, 4, 2}, rng));
  EXPECT_EQ(e.q.dim(2), cfg.embed_channels);
  EXPECT_EQ(e.k.dim(2), cfg.embed_channels);
  for (double v : e.q.data()) EXPECT_EQ(v, 0.0);
  for (double v : e.k.data()) EXPECT_EQ(v, 0.0);
}

TEST(Embeddings, GradientsMatchFiniteDifferences) {
  nn::ParameterStore<double> store;
  Rng rng(2);
  cell::RspCell<double> c(store, "rnn", small_config(), rng);
  randomize(store, rng);
  const auto h = random_tensor({4, 4, 3}, rng), x = random_tensor({4, 4, 2}, rng);
  std::vector<Tensor<double>> params;
  for (auto& [name, t] : store.all()) {
    if (name.rfind("rnn.query", 0) == 0 || name.rfind("rnn.key", 0) == 0) params.push_back(t);
  }
  const auto report = ag::finite_diff_check(
      [&] {
        const auto e = c.compute_embeddings(h, x);
        return ag::add(ag::sum(e.q), ag::sum(e.k));
      },
      params, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(AttentionGate, ZeroQueryGivesHalf) {
  Rng rng(3);
  const auto att = cell::attention_gate(Tensor<double>::zeros({3, 3, 4}), random_tensor({3, 3, 4}, rng));
  for (double v : att.data()) EXPECT_EQ(v, 0.5);
}

TEST(AttentionGate, AlignedUnitVectorsUseSqrtScaling) {
  const auto q = Tensor<double>::from({1, 1, 2}, {1.0, 1.0});
  const double expected = 1.0 / (1.0 + std::exp(-std::sqrt(2.0)));
  EXPECT_NEAR(cell::attention_gate(q, q).item(), expected, 1e-10);
  EXPECT_NEAR(expected, 0.8044, 1e-4);
}

TEST(AttentionGate, AntiAlignedBelowHalf) {
  const auto q = Tensor<double>::from({1, 1, 2}, {0.3, -1.2});
  const auto k = Tensor<double>::from({1, 1, 2}, {-0.3, 1.2});
  EXPECT_LT(cell::attention_gate(q, k).item(), 0.5);
}

TEST(RefineOffsets, Endpoints) {
  rspgrid::GridGeometry g;
  g.x = g.y = 8;
  Rng rng(4);
  const auto a = random_tensor({8, 8, 2}, rng, -0.5, 0.5), b = random_tensor({8, 8, 2}, rng, -0.5, 0.5);
  EXPECT_EQ(values(cell::refine_offsets(Tensor<double>::full({8, 8, 1}, 1.0), a, b, g)), values(a));
  EXPECT_EQ(values(cell::refine_offsets(Tensor<double>::zeros({8, 8, 1}), a, b, g)), values(b));
}

TEST(RefineOffsets, QuarterBlend) {
  rspgrid::GridGeometry g;
  g.x = g.y = 48;
  const auto r = cell::refine_offsets(Tensor<double>::full({1, 1, 1}, 0.25), Tensor<double>::from({1, 1, 2}, {2.0, 0.0}),
                                      Tensor<double>::from({1, 1, 2}, {-2.0, 0.0}), g);
  EXPECT_DOUBLE_EQ(r[0], -1.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
}

TEST(RefineOffsets, ConvexCombinationProperty) {
  rspgrid::GridGeometry g;
  g.x = g.y = 48;
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto att = random_tensor({4, 4, 1}, rng, 0.0, 1.0);
    const auto a = random_tensor({4, 4, 2}, rng, -3, 3), b = random_tensor({4, 4, 2}, rng, -3, 3);
    const auto r = cell::refine_offsets(att, a, b, g);
    for (std::size_t i = 0; i < r.numel(); ++i) {
      EXPECT_GE(r[i], std::min(a[i], b[i]) - 1e-15);
      EXPECT_LE(r[i], std::max(a[i], b[i]) + 1e-15);
    }
  }
}

TEST(RspCell, ColdStartIsGatedGruStep) {
  nn::ParameterStore<double> store;
  Rng rng(6);
  const auto cfg = small_config();
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng);
  nn::ParameterStore<double> gru_store;
  cell::PlainGruCell<double> plain(gru_store, "rnn", cfg, rng);
  for (auto& [name, t] : gru_store.all()) {
    const auto src = store.get(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
  const auto x = random_tensor({4, 4, 2}, rng);
  const auto zero = cell::RecurrentState<double>::zeros(cfg.geom, cfg.hidden_channels);
  const auto a = c.step(zero, x);
  const auto b = plain.step(zero, x);
  // h = 0 so gating has nothing to scale: features agree exactly.
  EXPECT_EQ(values(a.features), values(b.features));
  EXPECT_EQ(values(a.v_initial), values(b.v_initial));
}

TEST(RspCell, ZeroEmbeddingsGiveHalfAttention) {
  nn::ParameterStore<double> store;
  Rng rng(7);
  const auto cfg = small_config();
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng);
  for (auto& [name, t] : store.all()) {
    if (name.rfind("rnn.query", 0) == 0 || name.rfind("rnn.key", 0) == 0) {
      for (auto& v : t.mutable_data()) v = 0.0;
    }
  }
  const cell::RecurrentState<double> s{random_tensor({4, 4, 3}, rng), random_tensor({4, 4, 2}, rng, -0.4, 0.4)};
  const auto out = c.step(s, random_tensor({4, 4, 2}, rng));
  for (double v : out.attention.data()) EXPECT_EQ(v, 0.5);
}

TEST(RspCell, ZeroOffsetFixedPoint) {
  nn::ParameterStore<double> store;
  Rng rng(8);
  const auto cfg = small_config();
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng);
  for (auto& [name, t] : store.all()) {
    if (name.rfind("rnn.velocity", 0) == 0) {
      for (auto& v : t.mutable_data()) v = 0.0;
    }
  }
  const cell::RecurrentState<double> s{random_tensor({4, 4, 3}, rng), Tensor<double>::zeros({4, 4, 2})};
  const auto out = c.step(s, random_tensor({4, 4, 2}, rng));
  for (double v : out.new_state.off.data()) EXPECT_EQ(v, 0.0);
}

TEST(RspCell, MatchesScalarPipelineOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    nn::ParameterStore<double> store;
    const auto cfg = small_config();
    cell::RspCell<double> c(store, "rnn", cfg, rng);
    randomize(store, rng);
    const auto h = random_tensor({4, 4, 3}, rng), off = random_tensor({4, 4, 2}, rng, -0.6, 0.6);
    const auto x = random_tensor({4, 4, 2}, rng);
    const auto out = c.step({h, off}, x);
    const auto ref = oracle_rsp(store, cfg, values(h), values(off), values(x));
    EXPECT_LT(max_abs_diff(values(out.features), ref.h), 1e-10);
    EXPECT_LT(max_abs_diff(values(out.new_state.h), ref.h), 1e-10);
    EXPECT_LT(max_abs_diff(values(out.new_state.off), ref.off), 1e-10);
    EXPECT_LT(max_abs_diff(values(out.v_initial), ref.v_initial), 1e-10);
    EXPECT_LT(max_abs_diff(values(out.v_refined), ref.v_refined), 1e-10);
    EXPECT_LT(max_abs_diff(values(out.attention), ref.att), 1e-10);
  }
}

TEST(RspCell, AttentionStrictlyInsideUnitInterval) {
  Rng rng(10);
  nn::ParameterStore<double> store;
  const auto cfg = small_config(6);
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng, 0.3);
  cell::RecurrentState<double> s = cell::RecurrentState<double>::zeros(cfg.geom, cfg.hidden_channels);
  for (int t = 0; t < 6; ++t) {
    const auto out = c.step(s, random_tensor({6, 6, 2}, rng, -2, 2));
    for (double a : out.attention.data()) {
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
    s = out.new_state;
  }
}

TEST(RspCell, OffsetsStayWithinLimit) {
  Rng rng(11);
  nn::ParameterStore<double> store;
  const auto cfg = small_config(6);
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng, 3.0);
  cell::RecurrentState<double> s = cell::RecurrentState<double>::zeros(cfg.geom, cfg.hidden_channels);
  for (int t = 0; t < 5; ++t) {
    s = c.step(s, random_tensor({6, 6, 2}, rng, -2, 2)).new_state;
    for (std::size_t k = 0; k < 36; ++k) EXPECT_LE(std::hypot(s.off[2 * k], s.off[2 * k + 1]), cfg.geom.off_max() + 1e-12);
  }
}

TEST(RspCell, StepGradientsMatchFiniteDifferences) {
  Rng rng(12);
  nn::ParameterStore<double> store;
  const auto cfg = small_config();
  cell::RspCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng);
  auto h = random_tensor({4, 4, 3}, rng, -1, 1, true);
  auto off = Tensor<double>::from({4, 4, 2}, [&] {
    std::vector<double> v(32);
    for (auto& e : v) e = (static_cast<double>(rng.below(3)) - 1.0 + rng.uniform(0.2, 0.8)) * 0.5 * 0.5;
    return v;
  }(), true);
  auto x = random_tensor({4, 4, 2}, rng, -1, 1, true);
  std::vector<Tensor<double>> leaves{h, off, x};
  for (auto& [_, t] : store.all()) leaves.push_back(t);
  const auto w = random_tensor({4, 4, 3}, rng);
  const auto report = ag::finite_diff_check(
      [&] {
        const auto o = c.step({h, off}, x);
        return ag::add(ag::sum(ag::mul(o.features, w)), ag::sum(ag::square(o.v_refined)));
      },
      leaves, std::vector<double>{1e-5, 1e-6, 1e-7});
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(RspCell, UnrollIsDeterministic) {
  auto run = [] {
    Rng rng(13);
    nn::ParameterStore<double> store;
    const auto cfg = small_config(6);
    cell::RspCell<double> c(store, "rnn", cfg, rng);
    randomize(store, rng);
    auto s = cell::RecurrentState<double>::zeros(cfg.geom, cfg.hidden_channels);
    for (int t = 0; t < 12; ++t) s = c.step(s, random_tensor({6, 6, 2}, rng)).new_state;
    auto v = values(s.h);
    const auto o = values(s.off);
    v.insert(v.end(), o.begin(), o.end());
    return v;
  };
  EXPECT_EQ(run(), run());
}

TEST(PlainGruCell, ZeroParametersGiveZeroOutputs) {
  nn::ParameterStore<double> store;
  Rng rng(14);
  const auto cfg = small_config();
  cell::PlainGruCell<double> c(store, "rnn", cfg, rng);
  store.fill(0.0);
  const auto out = c.step(cell::RecurrentState<double>::zeros(cfg.geom, 3), random_tensor({4, 4, 2}, rng));
  for (double v : out.features.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.v_refined.data()) EXPECT_EQ(v, 0.0);
}

TEST(PlainGruCell, MatchesScalarOracle) {
  nn::ParameterStore<double> store;
  Rng rng(15);
  const auto cfg = small_config();
  cell::PlainGruCell<double> c(store, "rnn", cfg, rng);
  randomize(store, rng);
  const auto h = random_tensor({4, 4, 3}, rng), x = random_tensor({4, 4, 2}, rng);
  const auto out = c.step({h, Tensor<double>::zeros({4, 4, 2})}, x);
  Oracle o{store, 4};
  const auto hn = o.gru("rnn.gru", values(h), values(x), 2, 3);
  const auto v = o.head("rnn.velocity", hn, 3, 3);
  EXPECT_LT(max_abs_diff(values(out.features), hn), 1e-10);
  EXPECT_LT(max_abs_diff(values(out.v_refined), v), 1e-10);
}

TEST(PlainGruCell, EqualsRspWithIdentityProjectionAndUnitGate) {
  // With zero carried offsets projection is the identity; a unit gate
  // leaves memory untouched, so the GRU update is that of the plain cell.
  nn::ParameterStore<double> store;
  Rng rng(16);
  const auto cfg = small_config();
  cell::PlainGruCell<double> plain(store, "rnn", cfg, rng);
  randomize(store, rng);
  const auto h = random_tensor({4, 4, 3}, rng), x = random_tensor({4, 4, 2}, rng);
  Oracle o{store, 4};
  const auto ref = o.gru("rnn.gru", values(h), values(x), 2, 3);
  EXPECT_LT(max_abs_diff(values(plain.step({h, Tensor<double>::zeros({4, 4, 2})}, x).features), ref), 1e-12);
}

TEST(RspCell, GradcheckSuite) {
  for (const auto& r : rspgrid::gradcheck::run("rsp-cell")) {
    EXPECT_TRUE(r.ok()) << r.name << " max_rel_err " << r.report.max_rel_error;
  }
}
