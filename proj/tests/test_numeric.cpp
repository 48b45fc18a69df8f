#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "g2pm/autograd.hpp"
#include "g2pm/checkpoint.hpp"
#include "g2pm/error.hpp"
#include "g2pm/kernels.hpp"
#include "g2pm/optim.hpp"
#include "test_util.hpp"

namespace g2pm {
namespace {

using nn::Real;
using nn::Shape;
using nn::Tensor;
using nn::Var;

Tensor random_tensor(Shape shape, Rng& rng, Real scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> n(0.0, scale);
  for (auto& x : t.data()) x = n(rng);
  return t;
}

// Reduces any output to a scalar with a fixed random quadratic, so every
// output element has a distinct, nonzero influence on the loss.
Var reduce(const Var& out, const Tensor& target) {
  if (out.value().size() == 1) return out;
  std::vector<Real> w(out.rows());
  for (std::size_t r = 0; r < w.size(); ++r) w[r] = 0.5 + 0.25 * static_cast<Real>(r % 3);
  return nn::weighted_sq_error(out, target, w);
}

using OpFn = std::function<Var(const std::vector<Var>&)>;

// Max relative error between analytic gradients and central differences.
Real grad_error(const OpFn& f, const std::vector<Tensor>& inputs, Real eps = 1e-6) {
  Rng rng(99);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  Var out = f(vars);
  const Tensor target = random_tensor(out.shape(), rng);
  nn::backward(reduce(out, target));

  auto eval = [&](std::vector<Tensor> xs) {
    nn::NoGradGuard guard;
    std::vector<Var> vs;
    for (auto& t : xs) vs.emplace_back(std::move(t), false);
    return reduce(f(vs), target).value().item();
  };
  Real worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Real diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += eps;
      minus[i][j] -= eps;
      const Real num = (eval(plus) - eval(minus)) / (2 * eps);
      const Real ana = vars[i].grad()[j];
      diff += (num - ana) * (num - ana);
      norm_a += ana * ana;
      norm_n += num * num;
    }
    const Real denom = std::max(std::sqrt(norm_a), std::sqrt(norm_n));
    if (denom > 0) worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

class OpGrad : public ::testing::Test {
 protected:
  Rng rng{123};
  Tensor r(Shape s, Real scale = 1.0) { return random_tensor(std::move(s), rng, scale); }
};

TEST_F(OpGrad, Matmul) {
  EXPECT_LT(grad_error([](auto& v) { return nn::matmul(v[0], v[1]); }, {r({3, 4}), r({4, 2})}), 1e-7);
}

TEST_F(OpGrad, Linear) {
  EXPECT_LT(grad_error([](auto& v) { return nn::linear(v[0], v[1], v[2]); }, {r({3, 4}), r({4, 2}), r({2})}), 1e-7);
}

TEST_F(OpGrad, AddSubScaleConcat) {
  EXPECT_LT(grad_error([](auto& v) { return nn::add(v[0], nn::scale(v[1], -1.5)); }, {r({2, 3}), r({2, 3})}), 1e-7);
  EXPECT_LT(grad_error([](auto& v) { return nn::sub(v[0], v[1]); }, {r({2, 3}), r({2, 3})}), 1e-7);
  EXPECT_LT(grad_error([](auto& v) { return nn::concat_cols(v[0], v[1]); }, {r({3, 2}), r({3, 1})}), 1e-7);
}

TEST_F(OpGrad, RowBroadcasts) {
  EXPECT_LT(grad_error([](auto& v) { return nn::add_row(v[0], v[1]); }, {r({3, 2}), r({2})}), 1e-7);
  EXPECT_LT(grad_error([](auto& v) { return nn::broadcast_rows(v[0], 4); }, {r({3})}), 1e-7);
}

TEST_F(OpGrad, SoftmaxGeluLayerNorm) {
  EXPECT_LT(grad_error([](auto& v) { return nn::row_softmax(v[0]); }, {r({3, 5})}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return nn::gelu(v[0]); }, {r({3, 4})}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return nn::layer_norm(v[0], v[1], v[2]); }, {r({3, 6}), r({6}), r({6})}), 1e-6);
}

TEST_F(OpGrad, Reductions) {
  EXPECT_LT(grad_error([](auto& v) { return nn::mean_rows(v[0]); }, {r({4, 3})}), 1e-7);
  std::vector<std::size_t> off{0, 2, 5};
  EXPECT_LT(grad_error([&](auto& v) { return nn::segment_mean(v[0], off); }, {r({5, 3})}), 1e-7);
  EXPECT_LT(grad_error([](auto& v) { return nn::sum(v[0]); }, {r({2, 3})}), 1e-7);
  EXPECT_LT(grad_error([](auto& v) { return nn::l2_sq(v[0]); }, {r({2, 3})}), 1e-7);
}

TEST_F(OpGrad, CrossEntropy) {
  std::vector<std::size_t> y{2, 0, 1};
  EXPECT_LT(grad_error([&](auto& v) { return nn::cross_entropy(v[0], y); }, {r({3, 4})}), 1e-6);
}

TEST_F(OpGrad, GatherScatter) {
  std::vector<std::size_t> idx{2, 0, 2, 1};
  EXPECT_LT(grad_error([&](auto& v) { return nn::gather_rows(v[0], idx); }, {r({3, 2})}), 1e-7);
  std::vector<std::size_t> dst{3, 1};
  EXPECT_LT(grad_error([&](auto& v) { return nn::scatter_rows(v[0], v[1], dst); }, {r({4, 2}), r({2, 2})}), 1e-7);
}

TEST_F(OpGrad, SegmentAttention) {
  std::vector<std::size_t> off{0, 3, 4, 7};
  EXPECT_LT(grad_error([&](auto& v) { return nn::segment_attention(v[0], v[1], v[2], off, 2); },
                       {r({7, 4}), r({7, 4}), r({7, 4})}),
            1e-6);
}

TEST_F(OpGrad, DropoutWithFixedMask) {
  auto f = [](const std::vector<Var>& v) {
    Rng d(5);
    return nn::dropout(v[0], 0.4, d, true);
  };
  EXPECT_LT(grad_error(f, {r({4, 5})}), 1e-7);
}

TEST_F(OpGrad, WeightedSqError) {
  const Tensor t = r({3, 2});
  std::vector<Real> w{0.0, 1.0, 2.5};
  EXPECT_LT(grad_error([&](auto& v) { return nn::weighted_sq_error(v[0], t, w); }, {r({3, 2})}), 1e-7);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto s = nn::row_softmax(Var(Tensor({1, 2}, {0.0, 0.0})));
  EXPECT_EQ(s.value()[0], 0.5);
  EXPECT_EQ(s.value()[1], 0.5);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto s = nn::row_softmax(Var(random_tensor({20, 7}, rng, 10.0)));
  for (std::size_t i = 0; i < 20; ++i) {
    Real total = 0;
    for (auto x : s.value().row(i)) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, IdentityMatmul) {
  Rng rng(3);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Tensor a = random_tensor({3, 4}, rng);
  EXPECT_EQ(nn::matmul(Var(eye), Var(a)).value(), a);
}

TEST(Ops, CrossEntropyOfUniformLogits) {
  std::vector<std::size_t> y{3, 14};
  auto l = nn::cross_entropy(Var(Tensor({2, 15}, 0.7)), y);
  EXPECT_NEAR(l.value().item(), std::log(15.0), 1e-14);
}

TEST(Ops, ShapeErrorsQuoteShapes) {
  try {
    nn::matmul(Var(Tensor({2, 3})), Var(Tensor({2, 3})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
}

TEST(Ops, DropoutInactiveOutsideTraining) {
  Rng rng(1);
  Tensor x({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(nn::dropout(Var(x), 0.5, rng, false).value(), x);
  EXPECT_EQ(nn::dropout(Var(x), 0.0, rng, true).value(), x);
}

TEST(Backward, SumOfLinearGivesBroadcastInput) {
  Var w(Tensor({3, 2}, 0.3), true);
  Var x(Tensor({1, 3}, {1.0, 2.0, 3.0}));
  nn::backward(nn::sum(nn::matmul(x, w)));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(w.grad()(i, 0), x.value()[i]);
    EXPECT_EQ(w.grad()(i, 1), x.value()[i]);
  }
}

TEST(Backward, DetachedBranchGetsNoGradient) {
  Var w(Tensor({2}, 1.0), true);
  auto loss = nn::add(nn::sum(w), nn::l2_sq(w.detach()));
  nn::backward(loss);
  EXPECT_EQ(w.grad(), Tensor({2}, 1.0));

  Var u(Tensor({2}, 1.0), true);
  Var out;
  {
    nn::NoGradGuard guard;
    out = nn::scale(u, 3.0);
  }
  EXPECT_FALSE(out.requires_grad());
}

TEST(Backward, NonScalarLossIsContractError) {
  Var w(Tensor({2}, 1.0), true);
  EXPECT_THROW(nn::backward(nn::scale(w, 2.0)), ContractError);
}

TEST(Backward, CheckedModeNamesOp) {
  nn::set_checked_mode(true);
  try {
    nn::scale(Var(Tensor({1}, 1e308)), 1e10);
    nn::set_checked_mode(false);
    FAIL();
  } catch (const NumericError& e) {
    nn::set_checked_mode(false);
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

class KernelParity : public ::testing::Test {
 protected:
  Rng rng{77};
  std::vector<Real> vec(std::size_t n) {
    std::vector<Real> v(n);
    std::normal_distribution<Real> d;
    for (auto& x : v) x = d(rng);
    return v;
  }
};

TEST_F(KernelParity, GemmMatchesNaiveAndOmp) {
  const std::size_t m = 37, n = 29, k = 41;
  auto a = vec(m * k), b = vec(k * n), bt = vec(n * k), at = vec(k * m);
  std::vector<Real> naive(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) naive[i * n + j] += a[i * k + p] * b[p * n + j];

  std::vector<Real> s(m * n, 0.0), o(m * n, 0.0);
  kernels::serial::gemm_nn(m, n, k, a.data(), b.data(), s.data());
  kernels::omp::gemm_nn(m, n, k, a.data(), b.data(), o.data());
  for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(s[i], naive[i], 1e-12);
  EXPECT_EQ(s, o);

  std::fill(s.begin(), s.end(), 0.0);
  std::fill(o.begin(), o.end(), 0.0);
  kernels::serial::gemm_nt(m, n, k, a.data(), bt.data(), s.data());
  kernels::omp::gemm_nt(m, n, k, a.data(), bt.data(), o.data());
  EXPECT_EQ(s, o);
  EXPECT_NEAR(s[5 * n + 7], [&] {
    Real t = 0;
    for (std::size_t p = 0; p < k; ++p) t += a[5 * k + p] * bt[7 * k + p];
    return t;
  }(), 1e-12);

  std::fill(s.begin(), s.end(), 0.0);
  std::fill(o.begin(), o.end(), 0.0);
  kernels::serial::gemm_tn(m, n, k, at.data(), b.data(), s.data());
  kernels::omp::gemm_tn(m, n, k, at.data(), b.data(), o.data());
  EXPECT_EQ(s, o);
  EXPECT_NEAR(s[3 * n + 2], [&] {
    Real t = 0;
    for (std::size_t p = 0; p < k; ++p) t += at[p * m + 3] * b[p * n + 2];
    return t;
  }(), 1e-12);
}

TEST_F(KernelParity, GemmAccumulates) {
  std::vector<Real> a{1, 2}, b{3, 4}, c{10};
  kernels::gemm_nn(Backend::serial, 1, 1, 2, a.data(), b.data(), c.data());
  EXPECT_EQ(c[0], 21.0);
}

TEST_F(KernelParity, AttentionForwardBackward) {
  const std::size_t d = 8, heads = 2;
  std::vector<std::size_t> off{0, 5, 6, 14};
  const std::size_t n = off.back();
  auto q = vec(n * d), k = vec(n * d), v = vec(n * d), dout = vec(n * d);
  kernels::AttentionShape shape{d, heads, off};
  const auto poff = kernels::attention_prob_offsets(off, heads);
  std::vector<Real> os(n * d, 0.0), oo(n * d, 0.0), ps(poff.back()), po(poff.back());
  kernels::serial::attention_forward(shape, q.data(), k.data(), v.data(), os.data(), ps.data());
  kernels::omp::attention_forward(shape, q.data(), k.data(), v.data(), oo.data(), po.data());
  EXPECT_EQ(os, oo);
  EXPECT_EQ(ps, po);

  std::vector<Real> dqs(n * d, 0.0), dks(n * d, 0.0), dvs(n * d, 0.0);
  std::vector<Real> dqo(n * d, 0.0), dko(n * d, 0.0), dvo(n * d, 0.0);
  kernels::serial::attention_backward(shape, q.data(), k.data(), v.data(), ps.data(), dout.data(), dqs.data(),
                                      dks.data(), dvs.data());
  kernels::omp::attention_backward(shape, q.data(), k.data(), v.data(), po.data(), dout.data(), dqo.data(),
                                   dko.data(), dvo.data());
  EXPECT_EQ(dqs, dqo);
  EXPECT_EQ(dks, dko);
  EXPECT_EQ(dvs, dvo);
}

// Nonzero outputs (gradient accumulation) and a head width whose score scale
// is not a power of two, so any reordering of the sums shows up in the bits.
TEST_F(KernelParity, OmpMatchesSerialWhenAccumulating) {
  const std::size_t m = 7, n = 9, k = 13;
  auto a = vec(m * k), b = vec(k * n), bt = vec(n * k), at = vec(k * m), c0 = vec(m * n);
  auto s = c0, o = c0;
  kernels::serial::gemm_nn(m, n, k, a.data(), b.data(), s.data());
  kernels::omp::gemm_nn(m, n, k, a.data(), b.data(), o.data());
  EXPECT_EQ(s, o);
  s = o = c0;
  kernels::serial::gemm_nt(m, n, k, a.data(), bt.data(), s.data());
  kernels::omp::gemm_nt(m, n, k, a.data(), bt.data(), o.data());
  EXPECT_EQ(s, o);
  s = o = c0;
  kernels::serial::gemm_tn(m, n, k, at.data(), b.data(), s.data());
  kernels::omp::gemm_tn(m, n, k, at.data(), b.data(), o.data());
  EXPECT_EQ(s, o);

  const std::size_t d = 9, heads = 3;
  std::vector<std::size_t> off{0, 4, 11};
  const std::size_t rows = off.back();
  auto q = vec(rows * d), kk = vec(rows * d), v = vec(rows * d), dout = vec(rows * d), init = vec(rows * d);
  kernels::AttentionShape shape{d, heads, off};
  const auto poff = kernels::attention_prob_offsets(off, heads);
  std::vector<Real> ps(poff.back()), po(poff.back());
  s = o = init;
  kernels::serial::attention_forward(shape, q.data(), kk.data(), v.data(), s.data(), ps.data());
  kernels::omp::attention_forward(shape, q.data(), kk.data(), v.data(), o.data(), po.data());
  EXPECT_EQ(s, o);
  auto dqs = init, dks = init, dvs = init, dqo = init, dko = init, dvo = init;
  kernels::serial::attention_backward(shape, q.data(), kk.data(), v.data(), ps.data(), dout.data(), dqs.data(),
                                      dks.data(), dvs.data());
  kernels::omp::attention_backward(shape, q.data(), kk.data(), v.data(), ps.data(), dout.data(), dqo.data(),
                                   dko.data(), dvo.data());
  EXPECT_EQ(dqs, dqo);
  EXPECT_EQ(dks, dko);
  EXPECT_EQ(dvs, dvo);
}

TEST_F(KernelParity, SingleTokenAttentionCopiesValue) {
  const std::size_t d = 4;
  std::vector<std::size_t> off{0, 1};
  auto q = vec(d), k = vec(d), v = vec(d);
  std::vector<Real> out(d, 0.0), p(2);
  kernels::serial::attention_forward({d, 2, off}, q.data(), k.data(), v.data(), out.data(), p.data());
  EXPECT_EQ(out, v);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 1.0);
}

nn::ParameterStore one_param(Real value, Real grad) {
  nn::ParameterStore s;
  Var v = s.add("w", Tensor({1}, value));
  v.mutable_grad() = Tensor({1}, grad);
  return s;
}

TEST(AdamW, ZeroGradZeroDecayLeavesParams) {
  auto s = one_param(0.7, 0.0);
  nn::OptimizerState st;
  nn::adamw_step(s, st, {0.9, 0.999, 1e-8, 0.0}, 0.1);
  EXPECT_EQ(s.at("w").value()[0], 0.7);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, ZeroGradDecayScalesParams) {
  auto s = one_param(2.0, 0.0);
  nn::OptimizerState st;
  nn::adamw_step(s, st, {0.9, 0.999, 1e-8, 0.05}, 0.1);
  EXPECT_NEAR(s.at("w").value()[0], 2.0 * (1 - 0.005), 1e-15);
}

TEST(AdamW, QuadraticConverges) {
  nn::ParameterStore s;
  Var w = s.add("w", Tensor({1}, 1.0));
  nn::OptimizerState st;
  for (int i = 0; i < 200; ++i) {
    s.zero_grad();
    nn::backward(nn::l2_sq(w));
    nn::adamw_step(s, st, {0.9, 0.999, 1e-8, 0.0}, 0.05);
  }
  EXPECT_LT(std::abs(w.value()[0]), 1e-2);
}

// First step of bias-corrected Adam moves every coordinate by lr * sign(g).
TEST(AdamW, FirstStepIsSignStep) {
  auto s = one_param(1.0, -3.0);
  nn::OptimizerState st;
  nn::adamw_step(s, st, {0.9, 0.999, 0.0, 0.0}, 0.01);
  EXPECT_NEAR(s.at("w").value()[0], 1.01, 1e-15);
}

TEST(AdamW, MissingGradientIsContractError) {
  nn::ParameterStore s;
  s.add("w", Tensor({1}, 1.0));
  nn::OptimizerState st;
  EXPECT_THROW(nn::adamw_step(s, st, {}, 0.1), ContractError);
}

TEST(Schedule, EndpointsAndCosineMidpoint) {
  nn::LRSchedule s;
  s.base_lr = 1e-3;
  s.warmup_epochs = 10;
  s.total_epochs = 111;
  s.steps_per_epoch = 1;
  EXPECT_EQ(nn::lr_at(s, 0), 1e-7);
  EXPECT_NEAR(nn::lr_at(s, 10), 1e-3, 1e-15);
  EXPECT_NEAR(nn::lr_at(s, 5), (1e-7 + 1e-3) / 2, 1e-15);
  EXPECT_NEAR(nn::lr_at(s, 60), (1e-3 + 1e-7) / 2, 1e-15);
  EXPECT_NEAR(nn::lr_at(s, 110), 1e-7, 1e-18);
  for (std::size_t t = 10; t < 110; ++t) EXPECT_GE(nn::lr_at(s, t), nn::lr_at(s, t + 1));
}

TEST(Clip, BelowThresholdUnchanged) {
  auto s = one_param(0.0, 0.5);
  EXPECT_EQ(nn::clip_global_norm(s, 1.0), 0.5);
  EXPECT_EQ(s.at("w").grad()[0], 0.5);
}

TEST(Clip, ScalesToMaxNorm) {
  nn::ParameterStore s;
  s.add("a", Tensor({1}, 0.0)).mutable_grad() = Tensor({1}, {2.4});
  s.add("b", Tensor({1}, 0.0)).mutable_grad() = Tensor({1}, {3.2});
  EXPECT_NEAR(nn::clip_global_norm(s, 1.0), 4.0, 1e-15);
  EXPECT_NEAR(s.at("a").grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(nn::global_grad_norm(s), 1.0, 1e-15);
}

TEST(Clip, RandomGradientsEndWithinBound) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    nn::ParameterStore s;
    s.add("a", Tensor({5}, 0.0)).mutable_grad() = random_tensor({5}, rng, 3.0);
    s.add("b", Tensor({2, 3}, 0.0)).mutable_grad() = random_tensor({2, 3}, rng, 0.1);
    nn::clip_global_norm(s, 1.0);
    EXPECT_LE(nn::global_grad_norm(s), 1.0 + 1e-6);
  }
}

TEST(Ema, AlgebraExamples) {
  nn::ParameterStore teacher, student;
  teacher.add("w", Tensor({2}, 1.0), false);
  student.add("w", Tensor({2}, 0.0), false);
  nn::ema_update(teacher, student, 1.0);
  EXPECT_EQ(teacher.at("w").value(), Tensor({2}, 1.0));
  nn::ema_update(teacher, student, 0.99);
  EXPECT_EQ(teacher.at("w").value()[0], 0.99);
  nn::ema_update(teacher, student, 0.0);
  EXPECT_EQ(teacher.at("w").value(), student.at("w").value());
}

TEST(Ema, MismatchIsContractError) {
  nn::ParameterStore a, b;
  a.add("w", Tensor({2}, 1.0), false);
  b.add("v", Tensor({2}, 1.0), false);
  EXPECT_THROW(nn::ema_update(a, b, 0.5), ContractError);
  nn::ParameterStore c;
  c.add("w", Tensor({3}, 1.0), false);
  EXPECT_THROW(nn::ema_update(a, c, 0.5), ContractError);
}

TEST(ParameterStore, CloneIsIndependentSubsetShares) {
  nn::ParameterStore s;
  s.add("sub.a", Tensor({1}, 1.0));
  s.add("enc.b", Tensor({1}, 2.0));
  auto sub = s.subset({"sub."});
  auto copy = s.clone(false);
  ASSERT_EQ(sub.size(), 1u);
  s.at("sub.a").mutable_value()[0] = 5.0;
  EXPECT_EQ(sub.at("sub.a").value()[0], 5.0);
  EXPECT_EQ(copy.at("sub.a").value()[0], 1.0);
  EXPECT_FALSE(copy.at("enc.b").requires_grad());
  EXPECT_NE(s.checksum(), copy.checksum());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  Rng rng(8);
  nn::Checkpoint c;
  c.meta["hello"] = "world";
  c.tensors.emplace_back("a", random_tensor({3, 4}, rng));
  c.tensors.emplace_back("b", Tensor::scalar(std::nextafter(1.0, 2.0)));
  nn::save_checkpoint(dir / "x.bin", c);
  auto back = nn::load_checkpoint(dir / "x.bin");
  EXPECT_EQ(back.meta, c.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensor("a"), c.tensors[0].second);
  EXPECT_EQ(back.tensor("b"), c.tensors[1].second);
  EXPECT_THROW(back.tensor("c"), ContractError);
}

TEST(Checkpoint, CorruptAndMissingFiles) {
  testing::TempDir dir("ckpt_bad");
  testing::write_file(dir / "bad.bin", "not a checkpoint");
  EXPECT_THROW(nn::load_checkpoint(dir / "bad.bin"), ParseError);
  EXPECT_THROW(nn::load_checkpoint(dir / "missing.bin"), IoError);

  nn::Checkpoint c;
  c.tensors.emplace_back("a", Tensor({100}, 1.0));
  nn::save_checkpoint(dir / "t.bin", c);
  auto bytes = testing::read_file(dir / "t.bin");
  testing::write_file(dir / "t.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(nn::load_checkpoint(dir / "t.bin"), ParseError);
}

}  // namespace
}  // namespace g2pm
