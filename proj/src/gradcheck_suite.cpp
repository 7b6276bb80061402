#include "rspgrid/gradcheck_suite.hpp"

#include <chrono>
#include <functional>
#include <stdexcept>

#include "rspgrid/losses.hpp"
#include "rspgrid/model.hpp"
#include "rspgrid/trainer.hpp"

namespace rspgrid::gradcheck {

namespace {

using ag::Tensor;
using TD = Tensor<double>;

constexpr double kEps = 1e-6;
const std::vector<double> kUnrolledSteps{1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
constexpr std::size_t kGrid = 8;

GridGeometry small_grid() {
  GridGeometry g;
  g.x = kGrid;
  g.y = kGrid;
  g.resolution_m = 0.5;
  g.frame_rate_hz = 10.0;
  return g;
}

TD random(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ag::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v));
}

// Scalar probe <out, R> with a fixed random R, so every output coordinate
// contributes with a distinct weight.
TD probe(const TD& out, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::mul(out, random(out.shape(), rng)));
}

struct Case {
  std::string module;
  std::string name;
  std::function<CaseResult()> run;
};

CaseResult check(const std::string& module, const std::string& name, const std::function<TD()>& f,
                 std::vector<TD> leaves, double tol = kLayerTolerance, const std::vector<ag::Coordinate>& coords = {},
                 const std::vector<double>& steps = {kEps}) {
  const auto start = std::chrono::steady_clock::now();
  CaseResult r{module, name, ag::finite_diff_check(f, std::move(leaves), steps, coords), tol, 0};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Every store tensor as a leaf, plus extra leaves in front.
std::vector<TD> with_params(std::vector<TD> extra, const nn::ParameterStore<double>& store) {
  for (const auto& [_, t] : store.all()) extra.push_back(t);
  return extra;
}

// At most `per_leaf` evenly spaced coordinates per leaf.
std::vector<ag::Coordinate> sample_coords(const std::vector<TD>& leaves, std::size_t per_leaf) {
  std::vector<ag::Coordinate> out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const std::size_t n = leaves[l].numel();
    const std::size_t step = std::max<std::size_t>(1, n / per_leaf);
    for (std::size_t i = (step / 2) % n; i < n; i += step) out.push_back({l, i});
  }
  return out;
}

std::vector<Case> engine_cases() {
  const std::string m = "grad-engine";
  std::vector<Case> cs;
  auto binary = [&](const std::string& name, std::function<TD(const TD&, const TD&)> op, double lo = -1, double hi = 1) {
    cs.push_back({m, name, [=] {
                    Rng rng(11);
                    auto a = random({3, 4, 2}, rng, lo, hi), b = random({3, 4, 2}, rng, lo, hi);
                    return check(m, name, [=] { return probe(op(a, b), 1); }, {a, b});
                  }});
  };
  binary("add", [](const TD& a, const TD& b) { return ag::add(a, b); });
  binary("sub", [](const TD& a, const TD& b) { return ag::sub(a, b); });
  binary("mul", [](const TD& a, const TD& b) { return ag::mul(a, b); });
  binary("div", [](const TD& a, const TD& b) { return ag::div(a, b); }, 0.5, 2.0);

  auto unary = [&](const std::string& name, std::function<TD(const TD&)> op, double lo = -1, double hi = 1) {
    cs.push_back({m, name, [=] {
                    Rng rng(12);
                    auto a = random({4, 3, 3}, rng, lo, hi);
                    return check(m, name, [=] { return probe(op(a), 2); }, {a});
                  }});
  };
  unary("sigmoid", [](const TD& a) { return ag::sigmoid(a); }, -3, 3);
  unary("tanh", [](const TD& a) { return ag::tanh(a); }, -3, 3);
  unary("exp", [](const TD& a) { return ag::exp(a); });
  unary("log", [](const TD& a) { return ag::log(a); }, 0.2, 3);
  unary("square", [](const TD& a) { return ag::square(a); });
  unary("leaky_relu", [](const TD& a) { return ag::leaky_relu(a, 0.1); });
  unary("scalar_ops", [](const TD& a) { return ag::div_scalar(ag::add_scalar(ag::mul_scalar(ag::neg(a), 3.0), 0.5), 4.0); });
  unary("clamp", [](const TD& a) { return ag::clamp(a, -0.5, 0.5); }, -1, 1);
  unary("log_softmax", [](const TD& a) { return ag::log_softmax_last(a); }, -3, 3);
  unary("sum_last", [](const TD& a) { return ag::sum_last(a); });
  unary("slice_concat", [](const TD& a) { return ag::concat<double>({ag::slice(a, 1, 3), a, ag::slice(a, 0, 1)}); });
  unary("reshape", [](const TD& a) { return ag::reshape(a, {6, 6}); });
  unary("mean", [](const TD& a) { return ag::mul(ag::mean(a), ag::mean(ag::square(a))); });
  cs.push_back({m, "broadcast_scale_rows", [=] {
                  Rng rng(13);
                  auto a = random({4, 4, 3}, rng), f = random({4, 4, 1}, rng);
                  return check(m, "broadcast_scale_rows",
                               [=] { return probe(ag::add(ag::scale_rows(a, f), ag::broadcast_to(f, a.shape())), 3); },
                               {a, f});
                }});
  cs.push_back({m, "matmul", [=] {
                  Rng rng(14);
                  auto a = random({5, 3}, rng), b = random({3, 4}, rng);
                  return check(m, "matmul", [=] { return probe(ag::matmul(a, b), 4); }, {a, b});
                }});
  for (std::size_t k : {1, 3}) {
    for (std::size_t d : {1, 2}) {
      if (k == 1 && d == 2) continue;
      const std::string name = "conv2d_k" + std::to_string(k) + "_d" + std::to_string(d);
      cs.push_back({m, name, [=] {
                      Rng rng(15 + k + d);
                      auto x = random({kGrid, kGrid, 3}, rng), w = random({k, k, 3, 2}, rng), b = random({2}, rng);
                      return check(m, name, [=] { return probe(ag::conv2d(x, w, b, d), 5); }, {x, w, b});
                    }});
    }
  }
  cs.push_back({m, "avg_pool_upsample", [=] {
                  Rng rng(16);
                  auto x = random({kGrid, kGrid, 2}, rng);
                  return check(m, "avg_pool_upsample",
                               [=] { return probe(ag::mul(x, ag::upsample_nearest(ag::avg_pool2(x), 2)), 6); }, {x});
                }});
  return cs;
}

std::vector<Case> layer_cases() {
  const std::string m = "nn-layers";
  std::vector<Case> cs;
  cs.push_back({m, "conv_block", [=] {
                  Rng rng(21);
                  nn::ParameterStore<double> ps;
                  nn::ConvBlock<double> layer(ps, "block", 3, 4, rng);
                  auto x = random({kGrid, kGrid, 3}, rng);
                  return check(m, "conv_block", [=] { return probe(layer(x), 7); }, with_params({x}, ps));
                }});
  cs.push_back({m, "conv_gru", [=] {
                  Rng rng(22);
                  nn::ParameterStore<double> ps;
                  nn::ConvGru<double> layer(ps, "gru", 3, 4, rng);
                  auto x = random({kGrid, kGrid, 3}, rng), h = random({kGrid, kGrid, 4}, rng);
                  return check(m, "conv_gru", [=] { return probe(layer(h, x), 8); }, with_params({h, x}, ps));
                }});
  cs.push_back({m, "aspp", [=] {
                  Rng rng(23);
                  nn::ParameterStore<double> ps;
                  nn::Aspp<double> layer(ps, "aspp", 3, 3, {1, 2, 4, 8}, rng);
                  auto x = random({kGrid, kGrid, 3}, rng);
                  return check(m, "aspp", [=] { return probe(layer(x), 9); }, with_params({x}, ps));
                }});
  cs.push_back({m, "regression_head", [=] {
                  Rng rng(24);
                  nn::ParameterStore<double> ps;
                  nn::RegressionHead<double> layer(ps, "head", 4, 5, 2, rng);
                  auto x = random({kGrid, kGrid, 4}, rng);
                  return check(m, "regression_head", [=] { return probe(layer(x), 10); }, with_params({x}, ps));
                }});
  return cs;
}

std::vector<Case> projection_cases() {
  const std::string m = "state-projection";
  std::vector<Case> cs;
  const auto g = small_grid();
  for (auto mode : {proj::Collision::sum, proj::Collision::mean}) {
    const std::string name = mode == proj::Collision::sum ? "project_sum" : "project_mean";
    cs.push_back({m, name, [=] {
                    Rng rng(31);
                    auto p = random({kGrid, kGrid, 3}, rng), off = random({kGrid, kGrid, 2}, rng, -1.3, 1.3);
                    return check(m, name, [=] {
                      const auto pr = proj::project_state(p, off, g);
                      return ag::add(probe(proj::normalize_projection(pr.payload, pr.mass, mode), 11), probe(pr.mass, 12));
                    }, {p, off});
                  }});
  }
  cs.push_back({m, "velocity_to_offset", [=] {
                  Rng rng(32);
                  auto v = random({kGrid, kGrid, 2}, rng, -15, 15);
                  return check(m, "velocity_to_offset", [=] { return probe(proj::velocity_to_offset(v, g), 13); }, {v});
                }});
  cs.push_back({m, "clamp_offsets_active", [=] {
                  Rng rng(33);
                  auto off = random({kGrid, kGrid, 2}, rng, -4, 4);
                  return check(m, "clamp_offsets_active", [=] { return probe(proj::clamp_offsets(off, g), 14); }, {off});
                }});
  return cs;
}

std::vector<Case> cell_cases() {
  const std::string m = "rsp-cell";
  std::vector<Case> cs;
  const auto g = small_grid();
  cs.push_back({m, "attention_gate", [=] {
                  Rng rng(41);
                  auto q = random({kGrid, kGrid, 4}, rng), k = random({kGrid, kGrid, 4}, rng);
                  return check(m, "attention_gate", [=] { return probe(cell::attention_gate(q, k), 15); }, {q, k});
                }});
  cs.push_back({m, "refine_offsets", [=] {
                  Rng rng(42);
                  auto a = random({kGrid, kGrid, 1}, rng, 0, 1), o1 = random({kGrid, kGrid, 2}, rng),
                       o2 = random({kGrid, kGrid, 2}, rng);
                  return check(m, "refine_offsets", [=] { return probe(cell::refine_offsets(a, o1, o2, g), 16); },
                               {a, o1, o2});
                }});
  for (bool plain : {false, true}) {
    const std::string name = plain ? "gru_cell_two_steps" : "rsp_cell_two_steps";
    cs.push_back({m, name, [=] {
                    Rng rng(43);
                    cell::CellConfig cc;
                    cc.input_channels = 3;
                    cc.hidden_channels = 4;
                    cc.embed_channels = 3;
                    cc.head_channels = 3;
                    cc.geom = g;
                    nn::ParameterStore<double> ps;
                    cell::RspCell<double> rsp;
                    cell::PlainGruCell<double> gru;
                    if (plain) {
                      gru = cell::PlainGruCell<double>(ps, "cell", cc, rng);
                    } else {
                      rsp = cell::RspCell<double>(ps, "cell", cc, rng);
                    }
                    auto h = random({kGrid, kGrid, 4}, rng), off = random({kGrid, kGrid, 2}, rng, -0.8, 0.8);
                    auto x1 = random({kGrid, kGrid, 3}, rng), x2 = random({kGrid, kGrid, 3}, rng);
                    auto f = [=] {
                      cell::RecurrentState<double> s{h, off};
                      TD total;
                      for (const auto& x : {x1, x2}) {
                        const auto out = plain ? gru.step(s, x) : rsp.step(s, x);
                        const auto term = ag::add(probe(out.new_state.h, 17), probe(out.v_refined, 18));
                        total = total.defined() ? ag::add(total, term) : term;
                        s = out.new_state;
                      }
                      return total;
                    };
                    auto leaves = with_params({h, off, x1, x2}, ps);
                    return check(m, name, f, leaves, kLayerTolerance, sample_coords(leaves, 24));
                  }});
  }
  return cs;
}

std::vector<Case> loss_cases() {
  const std::string m = "train-eval-cli";
  std::vector<Case> cs;
  cs.push_back({m, "weighted_ce_loss", [=] {
                  Rng rng(51);
                  auto logits = random({4, 4, 4}, rng, -2, 2);
                  std::vector<int> labels(16);
                  std::vector<double> w(16);
                  for (std::size_t i = 0; i < 16; ++i) {
                    labels[i] = static_cast<int>(rng.below(4));
                    w[i] = i % 5 == 0 ? 0.0 : rng.uniform(0.1, 1.0);
                  }
                  const std::vector<double> cw{0.5, 1.0, 1.5, 2.0};
                  return check(m, "weighted_ce_loss",
                               [=] { return loss::weighted_ce_loss(logits, labels, w, cw); }, {logits});
                }});
  cs.push_back({m, "velocity_l2_loss", [=] {
                  Rng rng(52);
                  auto v = random({4, 4, 2}, rng, -3, 3), gt = random({4, 4, 2}, rng, -3, 3);
                  std::vector<double> w(16);
                  for (auto& x : w) x = rng.uniform(0, 2);
                  return check(m, "velocity_l2_loss", [=] { return loss::velocity_l2_loss(v, gt, w); }, {v});
                }});
  cs.push_back({m, "heteroscedastic_loss", [=] {
                  Rng rng(53);
                  auto mu = random({4, 4, 2}, rng), lv = random({4, 4, 1}, rng, -3, 3), gt = random({4, 4, 2}, rng);
                  const std::vector<double> w(16, 1.0);
                  return check(m, "heteroscedastic_loss", [=] { return loss::heteroscedastic_loss(mu, lv, gt, w); },
                               {mu, lv});
                }});
  return cs;
}

std::vector<Case> model_cases() {
  const std::string m = "model-zoo";
  std::vector<Case> cs;
  struct Variant {
    zoo::Architecture arch;
    std::size_t frames;
  };
  for (const auto& v : {Variant{zoo::Architecture::rsp, 12}, Variant{zoo::Architecture::gru, 4},
                        Variant{zoo::Architecture::pyramid, 4}, Variant{zoo::Architecture::single_frame, 2}}) {
    const std::string name = "unrolled_" + zoo::to_string(v.arch) + "_" + std::to_string(v.frames) + "_frames";
    cs.push_back({m, name, [=] {
                    zoo::ModelConfig mc;
                    mc.arch = v.arch;
                    mc.f = 3;
                    mc.m = 4;
                    mc.d_h = 3;
                    mc.head_channels = 3;
                    mc.aspp_blocks = 2;
                    mc.geom = small_grid();
                    zoo::Model<double> model(mc, 61);
                    // Zero biases on sparse binary input put pre-activations on
                    // the leaky-ReLU corner; check at a generic point instead.
                    Rng bias_rng(63);
                    for (auto& [pname, t] : model.params().all()) {
                      if (pname.size() < 5 || pname.compare(pname.size() - 5, 5, ".bias") != 0) continue;
                      for (auto& b : t.mutable_data()) b = bias_rng.uniform(-0.2, 0.2);
                    }
                    sim::SimConfig sc;
                    sc.objects = 1;
                    sc.static_obstacles = 1;
                    sc.min_size = 1.0;
                    sc.max_size = 1.5;
                    sc.obstacle_min_size = 0.5;
                    sc.obstacle_max_size = 1.0;
                    sc.ego_clearance = 0.5;
                    sc.seq_len = v.frames;
                    const auto seq = sim::generate_sequence(sc, mc.geom, 62);
                    cfg::TrainConfig tc;
                    std::vector<TD> inputs;
                    for (const auto& f : seq) inputs.push_back(train::input_tensor<double>(f));
                    const std::array<double, 4> class_w{0.5, 1.0, 1.2, 1.5};
                    // Training loss plus random probes of every output.
                    auto f = [=, &model] {
                      const auto outs = model.forward_sequence(inputs, false);
                      auto total = train::sequence_loss(outs, seq, tc, class_w, mc.geom);
                      for (std::size_t t = 0; t < outs.size(); ++t) {
                        total = ag::add(total, ag::add(probe(outs[t].class_logits, 100 + t), probe(outs[t].v_refined, 200 + t)));
                      }
                      return total;
                    };
                    auto leaves = with_params({}, model.params());
                    return check(m, name, f, leaves, kUnrolledTolerance, sample_coords(leaves, 6), kUnrolledSteps);
                  }});
  }
  return cs;
}

std::vector<Case> all_cases() {
  std::vector<Case> out;
  for (auto&& group : {engine_cases(), layer_cases(), projection_cases(), cell_cases(), loss_cases(), model_cases()}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

}  // namespace

const std::vector<std::string>& modules() {
  static const std::vector<std::string> names{"grad-engine", "nn-layers", "state-projection",
                                              "rsp-cell",    "train-eval-cli", "model-zoo"};
  return names;
}

std::vector<CaseResult> run(const std::string& module) {
  if (!module.empty() && std::find(modules().begin(), modules().end(), module) == modules().end()) {
    std::string known;
    for (const auto& n : modules()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown gradcheck module '" + module + "' (known: " + known + ")");
  }
  std::vector<CaseResult> out;
  for (const auto& c : all_cases()) {
    if (module.empty() || c.module == module) out.push_back(c.run());
  }
  return out;
}

}  // namespace rspgrid::gradcheck
