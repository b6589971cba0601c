#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ccf/gradcheck.hpp"
#include "ccf/gradients.hpp"
#include "ccf/optimizer.hpp"
#include "test_support.hpp"

using namespace ccf;
using ccf::support::random_batch;
using ccf::support::random_state;

namespace {

double max_abs(const EmbeddingState& a, const EmbeddingState& b) {
  return std::max((a.users - b.users).cwiseAbs().maxCoeff(), (a.items - b.items).cwiseAbs().maxCoeff());
}

// e_u + (eta/tau)(e_i - sum_k p_k e_k), p by exp of dot logits, one pair at a time.
EmbeddingState naive_user_item_step(const EmbeddingState& e, const std::vector<Interaction>& pairs, double tau,
                                    double eta) {
  EmbeddingState next = e;
  for (const auto& p : pairs) {
    std::vector<double> w;
    double z = 0.0;
    for (const auto& q : pairs) {
      w.push_back(std::exp(e.users.row(p.user).dot(e.items.row(q.item)) / tau));
      z += w.back();
    }
    Vector mean = Vector::Zero(e.dim());
    for (std::size_t k = 0; k < pairs.size(); ++k) mean += (w[k] / z) * e.items.row(pairs[k].item).transpose();
    next.users.row(p.user) += (eta / tau) * (e.items.row(p.item).transpose() - mean).transpose();
  }
  return next;
}

std::vector<Interaction> random_pairs(Index m, Index n, Index b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Interaction> out;
  for (Index k = 0; k < b; ++k) out.push_back({static_cast<Index>(rng() % m), static_cast<Index>(rng() % n)});
  return out;
}

}  // namespace

TEST(InfoNceGrad, UniformProbabilitiesAndMeanPositiveCancel) {
  Vector a = Vector::Zero(4);
  a[0] = 1.0;
  RowMatrix negs(3, 4);
  negs << 0, 1, 2, 0,  //
      0, -1, 0, 3,     //
      0, 3, 1, 0;
  const Vector pos = negs.colwise().mean().transpose();
  const auto g = infonce_grad(a, pos, negs, 0.2, SimilarityKind::kDot);
  EXPECT_LT(g.anchor.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InfoNceGrad, SingleNegativeEqualToPositive) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Vector a(3), p(3);
  for (int k = 0; k < 3; ++k) {
    a[k] = n(rng);
    p[k] = n(rng);
  }
  for (auto kind : {SimilarityKind::kDot, SimilarityKind::kCosine}) {
    const auto g = infonce_grad(a, p, RowMatrix(p.transpose()), 0.3, kind);
    EXPECT_NEAR(g.value, 0.0, 1e-14);
    EXPECT_LT(g.anchor.cwiseAbs().maxCoeff(), 1e-14);
    // The positive and its copy in the denominator pull equally and oppositely.
    EXPECT_LT((g.positive + g.negatives.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(InfoNceGrad, DotAnchorFormula) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Vector a(4), p(4);
  RowMatrix negs(3, 4);
  for (int k = 0; k < 4; ++k) {
    a[k] = n(rng);
    p[k] = n(rng);
    for (int r = 0; r < 3; ++r) negs(r, k) = n(rng);
  }
  const double tau = 0.4;
  const auto g = infonce_grad(a, p, negs, tau, SimilarityKind::kDot);
  const Vector probs = infonce_probabilities(a, negs, tau);
  EXPECT_NEAR(probs.sum(), 1.0, 1e-14);
  const Vector expect = -(1.0 / tau) * (p - negs.transpose() * probs);
  EXPECT_LT((g.anchor - expect).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Gradcheck, EveryLossAgreesWithFiniteDifferences) {
  const auto rows = run_gradcheck();
  EXPECT_GE(rows.size(), 12u);
  for (const auto& r : rows) {
    EXPECT_GE(r.instances, 100) << r.loss;
    EXPECT_LT(r.max_rel_error, 1e-6) << r.loss;
    EXPECT_TRUE(r.passed) << r.loss;
  }
}

TEST(Gradcheck, CorruptedGradientsAreCaught) {
  GradcheckOptions opt;
  opt.instances = 5;
  opt.corrupt = 1e-3;
  for (const auto& r : run_gradcheck(opt)) EXPECT_FALSE(r.passed) << r.loss;
}

TEST(FiniteDifference, QuadraticIsExact) {
  const auto e = random_state(4, 5, 3, 3);
  const auto g = finite_difference_oracle([](const EmbeddingState& x) { return x.squared_norm(); }, e, 1e-5);
  EmbeddingState expect = e;
  expect.users *= 2.0;
  expect.items *= 2.0;
  EXPECT_LT(max_abs(g, expect), 1e-9);
}

TEST(FiniteDifference, TinyStepLosesPrecision) {
  const auto e = random_state(3, 4, 3, 4);
  const auto b = random_batch(3, 4, 4, 4);
  LossConfig cfg;
  const auto pairs = b.positive_pairs();
  const LossFn loss = [&](const EmbeddingState& x) { return na_loss(pairs, x, cfg); };
  const auto analytic = na_grad(pairs, e, cfg).grad.to_dense(3, 4);
  const double good = relative_error(analytic, finite_difference_oracle(loss, e, 1e-5));
  const double bad = relative_error(analytic, finite_difference_oracle(loss, e, 1e-12));
  EXPECT_LT(good, 1e-6);
  EXPECT_GT(bad, 100.0 * good);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_difference_oracle([](const EmbeddingState&) { return 0.0; }, random_state(1, 1, 1, 1), 0.0),
               ConfigError);
}

TEST(SgdStep, ZeroLearningRateIsIdentity) {
  const auto e = random_state(5, 6, 3, 5);
  const auto pairs = random_pairs(5, 6, 8, 5);
  EXPECT_TRUE(user_item_gd_step(e, pairs, 0.2, 0.0) == e);
  EXPECT_TRUE(matrix_form_step(e, pairs, 0.2, 0.0).next == e);
}

TEST(SgdStep, SoleCandidateIsPositive) {
  const auto e = random_state(2, 2, 3, 6);
  const std::vector<Interaction> pairs{{1, 0}};
  const auto next = user_item_gd_step(e, pairs, 0.2, 0.5);
  EXPECT_LT(max_abs(next, e), 1e-15);
}

TEST(SgdStep, EqualsPlainSgdOnInfoNceGrad) {
  const auto e = random_state(6, 7, 4, 7);
  const auto pairs = random_pairs(6, 7, 10, 7);
  const double tau = 0.3, eta = 0.05;
  RowMatrix cand(static_cast<Index>(pairs.size()), 4);
  for (std::size_t k = 0; k < pairs.size(); ++k) cand.row(static_cast<Index>(k)) = e.items.row(pairs[k].item);
  EmbeddingState grad(6, 7, 4);
  for (const auto& p : pairs) {
    const auto g = infonce_grad(e.users.row(p.user).transpose(), e.items.row(p.item).transpose(), cand, tau);
    grad.users.row(p.user) += g.anchor.transpose();
  }
  EmbeddingState expect = e;
  Optimizer(OptimizerKind::kSgd, eta).step(expect, grad);
  const auto got = user_item_gd_step(e, pairs, tau, eta);
  EXPECT_LT(max_abs(got, expect), 1e-12);
}

TEST(SgdStep, UserItemIsSgdWithUserAnchors) {
  const auto e = random_state(6, 7, 4, 8);
  const auto pairs = random_pairs(6, 7, 9, 8);
  const auto via_generic = sgd_step_infonce(e.users, e.items, as_anchor_positive(pairs), 0.25, 0.1);
  EXPECT_EQ(user_item_gd_step(e, pairs, 0.25, 0.1).users, via_generic);
}

TEST(SgdStep, TrajectoryRaisesInteractedSimilarity) {
  // 4-node fixture: u0-{i0}, u1-{i1}.
  auto e = random_state(2, 2, 3, 9);
  const std::vector<Interaction> pairs{{0, 0}, {1, 1}};
  auto mean_sim = [&](const EmbeddingState& x) {
    return 0.5 * (support::naive_cosine(x.users.row(0).transpose(), x.items.row(0).transpose()) +
                  support::naive_cosine(x.users.row(1).transpose(), x.items.row(1).transpose()));
  };
  double prev = mean_sim(e);
  for (int step = 0; step < 5; ++step) {
    e = user_item_gd_step(e, pairs, 0.5, 0.05);
    const double now = mean_sim(e);
    EXPECT_GT(now, prev) << "step " << step;
    prev = now;
  }
}

TEST(MatrixForm, MatchesPerExampleUpdates) {
  for (Index b : {1, 2, 7, 32, 128, 256}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Index m = std::max<Index>(2, b / 2), n = std::max<Index>(2, b);
      const auto e = random_state(m, n, 8, seed * 31 + static_cast<std::uint64_t>(b), 0.5);
      const auto pairs = random_pairs(m, n, b, seed);
      const auto r = matrix_form_step(e, pairs, 0.2, 0.01);
      EXPECT_LT(max_abs(r.next, user_item_gd_step(e, pairs, 0.2, 0.01)), 1e-10) << "B=" << b;
      EXPECT_LT(max_abs(r.next, naive_user_item_step(e, pairs, 0.2, 0.01)), 1e-10) << "B=" << b;
      for (Index k = 0; k < r.mats.probs.rows(); ++k) EXPECT_NEAR(r.mats.probs.row(k).sum(), 1.0, 1e-10);
    }
  }
}

TEST(MatrixForm, ZeroStepGivesIdentityOperator) {
  const auto e = random_state(4, 5, 3, 10);
  const auto r = matrix_form_step(e, random_pairs(4, 5, 6, 10), 0.2, 0.0);
  EXPECT_EQ(r.mats.gain, RowMatrix::Ones(6, 3));
  EXPECT_EQ(r.mats.masked_entries, 0);
}

TEST(MatrixForm, GainReproducesUpdateAndGuardsZeros) {
  auto e = random_state(4, 5, 3, 11);
  e.users(2, 1) = 0.0;
  const std::vector<Interaction> pairs{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  const auto r = matrix_form_step(e, pairs, 0.2, 0.1);
  EXPECT_EQ(r.mats.masked_entries, 1);
  EXPECT_EQ(r.mats.gain(2, 1), 1.0);
  for (Index k = 0; k < 4; ++k) {
    for (Index c = 0; c < 3; ++c) {
      if (k == 2 && c == 1) continue;
      EXPECT_NEAR(r.mats.gain(k, c) * e.users(k, c), r.next.users(k, c), 1e-12);
    }
  }
}

TEST(NaGrad, ScalesLikeInverseTemperature) {
  const auto e = random_state(6, 6, 4, 12);
  const auto pairs = random_batch(6, 6, 6, 12, true).positive_pairs();
  LossConfig cfg;
  auto norm_at = [&](double tau) {
    cfg.tau = tau;
    const auto g = na_grad(pairs, e, cfg).grad.to_dense(6, 6);
    return std::sqrt(g.squared_norm());
  };
  EXPECT_NEAR(norm_at(10.0) / norm_at(20.0), 2.0, 0.05);
}

TEST(NaGrad, OnlyTouchedRows) {
  const auto e = random_state(10, 12, 3, 13);
  const auto b = random_batch(10, 12, 5, 13);
  const auto g = na_grad(b.positive_pairs(), e, LossConfig{});
  const std::set<Index> us(b.users.begin(), b.users.end()), is(b.pos_items.begin(), b.pos_items.end());
  EXPECT_EQ(g.grad.size(), static_cast<Index>(us.size() + is.size()));
  EXPECT_TRUE(g.grad.finite());
}

TEST(BprGrad, SaturatesAtLargeMargin) {
  auto e = random_state(1, 2, 3, 14);
  e.users.row(0).setOnes();
  e.items.row(0) = 100.0 * e.users.row(0);
  e.items.row(1) = -100.0 * e.users.row(0);
  Batch b{{0}, {0}, {1}};
  const auto g = bpr_grad(b, e).grad.to_dense(1, 2);
  EXPECT_LT(std::sqrt(g.squared_norm()), 1e-100);
}

TEST(BprGrad, EqualItemsGiveZeroUserGradient) {
  auto e = random_state(1, 2, 3, 15);
  e.items.row(1) = e.items.row(0);
  Batch b{{0}, {0}, {1}};
  const auto g = bpr_grad(b, e).grad.to_dense(1, 2);
  EXPECT_EQ(g.users.cwiseAbs().maxCoeff(), 0.0);
}

TEST(JointGrad, IsLinearInTerms) {
  const auto e = random_state(6, 8, 4, 16);
  const auto b = random_batch(6, 8, 7, 16);
  LossConfig cfg;
  cfg.alpha = 1.7;
  cfg.beta = 0.3;
  const auto joint = joint_grad_base(b, e, nullptr, PropagationConfig::uniform(0), cfg, AuxLoss::kNa);
  EmbeddingState expect = bpr_grad(b, e).grad.to_dense(6, 8);
  expect.axpy(1.7, na_grad(b.positive_pairs(), e, cfg).grad.to_dense(6, 8));
  const auto t = touched_rows(b);
  for (Index u : t.users) expect.users.row(u) += 2.0 * 0.3 * e.users.row(u);
  for (Index i : t.items) expect.items.row(i) += 2.0 * 0.3 * e.items.row(i);
  EXPECT_LT(max_abs(joint, expect), 1e-13);
}

TEST(JointGrad, FullScopeRegularizesEveryRow) {
  const auto e = random_state(6, 8, 4, 17);
  const auto b = random_batch(6, 8, 3, 17);
  LossConfig cfg;
  cfg.alpha = 0.0;
  cfg.beta = 0.5;
  cfg.reg_scope = RegScope::kFull;
  const auto joint = joint_grad_base(b, e, nullptr, PropagationConfig::uniform(0), cfg, AuxLoss::kNone);
  EmbeddingState expect = bpr_grad(b, e).grad.to_dense(6, 8);
  expect.axpy(1.0, e);
  EXPECT_LT(max_abs(joint, expect), 1e-13);
}

TEST(PropagationBackprop, ZeroLayersPassThroughAndLinear) {
  const auto ds = support::random_graph(5, 6, 0.4, 18);
  const auto adj = build_normalized_adjacency(ds);
  const auto g = random_state(5, 6, 3, 18), h = random_state(5, 6, 3, 19);
  EXPECT_TRUE(propagation_backprop(g, adj, PropagationConfig::uniform(0)) == g);
  const auto cfg = PropagationConfig::uniform(2);
  EmbeddingState sum = g;
  sum.axpy(1.0, h);
  EmbeddingState parts = propagation_backprop(g, adj, cfg);
  parts.axpy(1.0, propagation_backprop(h, adj, cfg));
  EXPECT_LT(max_abs(propagation_backprop(sum, adj, cfg), parts), 1e-13);
}

TEST(PropagationBackprop, EndToEndOnTenUserFixture) {
  const auto ds = support::random_graph(10, 12, 0.3, 20);
  const auto adj = build_normalized_adjacency(ds);
  const auto e = random_state(10, 12, 4, 20, 0.5);
  const auto b = random_batch(10, 12, 8, 20);
  LossConfig cfg;
  cfg.beta = 0.01;
  for (Index layers = 1; layers <= 3; ++layers) {
    const auto prop = PropagationConfig::uniform(layers);
    for (auto aux : {AuxLoss::kNone, AuxLoss::kClSs, AuxLoss::kClUi, AuxLoss::kNa}) {
      const LossFn loss = [&](const EmbeddingState& x) { return joint_loss(b, propagate(x, adj, prop), x, cfg, aux).total; };
      const auto analytic = joint_grad_base(b, e, &adj, prop, cfg, aux);
      EXPECT_LT(relative_error(analytic, finite_difference_oracle(loss, e, 1e-5)), 1e-6) << "L=" << layers;
    }
  }
}

TEST(Alignment, ProducesOneCosinePerStep) {
  const auto ds = support::random_graph(8, 10, 0.3, 21);
  const auto trace =
      gd_propagation_alignment(random_state(8, 10, 4, 21), ds, build_normalized_adjacency(ds), 4, 0.2, 0.1);
  ASSERT_EQ(trace.size(), 4u);
  for (double c : trace) {
    EXPECT_GE(c, -1.0 - 1e-12);
    EXPECT_LE(c, 1.0 + 1e-12);
  }
}
