#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ccf/losses.hpp"
#include "test_support.hpp"

using namespace ccf;
using ccf::support::naive_infonce;
using ccf::support::naive_na;
using ccf::support::random_batch;
using ccf::support::random_state;

namespace {

RowMatrix rows_of(std::initializer_list<Vector> vs) {
  RowMatrix m(static_cast<Index>(vs.size()), vs.begin()->size());
  Index r = 0;
  for (const auto& v : vs) m.row(r++) = v.transpose();
  return m;
}

Vector randn(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(d);
  for (Index k = 0; k < d; ++k) v[k] = g(rng);
  return v;
}

}  // namespace

TEST(InfoNce, PositiveAloneGivesZero) {
  std::mt19937_64 rng(1);
  const Vector a = randn(4, rng), p = randn(4, rng);
  for (auto kind : {SimilarityKind::kDot, SimilarityKind::kCosine}) {
    EXPECT_NEAR(infonce(a, p, rows_of({p}), 0.2, kind), 0.0, 1e-12);
  }
}

TEST(InfoNce, EqualSimilaritiesGiveLogK) {
  // Anchor orthogonal to every candidate: all logits 0.
  Vector a = Vector::Zero(4);
  a[0] = 1.0;
  Vector p = Vector::Zero(4);
  p[1] = 1.0;
  Vector n1 = Vector::Zero(4), n2 = Vector::Zero(4);
  n1[2] = 2.0;
  n2[3] = -1.0;
  EXPECT_NEAR(infonce(a, p, rows_of({p, n1, n2}), 0.3, SimilarityKind::kDot), std::log(3.0), 1e-14);
}

TEST(InfoNce, MatchesNaiveFormula) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const Vector a = randn(5, rng), p = randn(5, rng);
    const RowMatrix negs = rows_of({p, randn(5, rng), randn(5, rng), randn(5, rng)});
    for (auto kind : {SimilarityKind::kDot, SimilarityKind::kCosine}) {
      EXPECT_NEAR(infonce(a, p, negs, 0.7, kind), naive_infonce(a, p, negs, 0.7, kind), 1e-12);
    }
  }
}

TEST(InfoNce, NonNegativeWhenPositiveInDenominatorAndPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Vector a = randn(3, rng), p = randn(3, rng);
    RowMatrix negs = rows_of({randn(3, rng), p, randn(3, rng), randn(3, rng), randn(3, rng)});
    const double base = infonce(a, p, negs, 0.2, SimilarityKind::kCosine);
    EXPECT_GT(base, 0.0);
    std::vector<Index> perm{0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng);
    RowMatrix shuffled(negs.rows(), negs.cols());
    for (Index k = 0; k < 5; ++k) shuffled.row(k) = negs.row(perm[k]);
    EXPECT_NEAR(infonce(a, p, shuffled, 0.2, SimilarityKind::kCosine), base, 1e-12);
  }
}

TEST(InfoNce, StableWhereNaiveOverflows) {
  Vector a = Vector::Constant(3, 30.0), p = Vector::Constant(3, 30.0);
  const double v = infonce(a, p, rows_of({p, Vector(Vector::Constant(3, 29.0))}), 0.01, SimilarityKind::kDot);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 0.0);
}

TEST(InfoNce, EmptyNegativesThrow) {
  EXPECT_THROW(infonce(Vector::Ones(2), Vector::Ones(2), RowMatrix(0, 2), 0.2), ValidationError);
}

TEST(ClSs, SingleUserSingleItemIsDegenerateZero) {
  const auto e = random_state(3, 3, 4, 1);
  const std::vector<Index> users{1, 1}, items{2, 2};
  bool degenerate = false;
  EXPECT_NEAR(cl_ss_loss(users, items, e, 0.2, SimilarityKind::kCosine, &degenerate), 0.0, 1e-12);
  EXPECT_TRUE(degenerate);
}

TEST(ClSs, CosineSelfTermIsConstant) {
  const auto e = random_state(4, 4, 3, 2);
  const std::vector<Index> users{0, 1, 2}, items{3};
  const double tau = 0.25;
  double expect = 0.0;
  for (Index u : users) {
    double denom = 0.0;
    for (Index v : users) {
      denom += std::exp(support::naive_cosine(e.users.row(u).transpose(), e.users.row(v).transpose()) / tau);
    }
    expect += -1.0 / tau + std::log(denom);
  }
  expect /= 3.0;
  // Single item side contributes 0.
  EXPECT_NEAR(cl_ss_loss(users, items, e, tau), expect, 1e-12);
}

TEST(ClSs, DuplicateIdsCountOnce) {
  const auto e = random_state(4, 4, 3, 3);
  const std::vector<Index> a{0, 1, 2}, b{2, 0, 1, 1, 0};
  const std::vector<Index> items{0, 1};
  EXPECT_NEAR(cl_ss_loss(a, items, e, 0.2), cl_ss_loss(b, items, e, 0.2), 1e-14);
}

TEST(ClUi, SinglePairIsZero) {
  const auto e = random_state(2, 2, 3, 4);
  const std::vector<Interaction> pairs{{1, 0}};
  EXPECT_NEAR(cl_ui_loss(pairs, e, 0.2), 0.0, 1e-12);
}

TEST(ClUi, EqualsInfoNceOverBatchItems) {
  const auto e = random_state(6, 8, 4, 5);
  const std::vector<Interaction> pairs{{0, 1}, {3, 4}, {5, 4}, {2, 7}};
  RowMatrix cand(4, 4);
  for (Index k = 0; k < 4; ++k) cand.row(k) = e.items.row(pairs[k].item);
  double expect = 0.0;
  for (const auto& p : pairs) {
    expect += naive_infonce(e.users.row(p.user).transpose(), e.items.row(p.item).transpose(), cand, 0.3,
                            SimilarityKind::kCosine);
  }
  EXPECT_NEAR(cl_ui_loss(pairs, e, 0.3), expect / 4.0, 1e-12);
}

TEST(Na, TwoPairsCollapse) {
  const auto e = random_state(2, 2, 4, 6);
  const std::vector<Interaction> pairs{{0, 0}, {1, 1}};
  LossConfig cfg;
  cfg.tau = 0.4;
  auto s = [&](Index u, Index i) {
    return support::naive_cosine(e.users.row(u).transpose(), e.items.row(i).transpose());
  };
  const double l0 = -s(0, 0) / cfg.tau + s(0, 1) / cfg.tau;
  const double l1 = -s(1, 1) / cfg.tau + s(1, 0) / cfg.tau;
  EXPECT_NEAR(na_loss(pairs, e, cfg), (l0 + l1) / 2.0, 1e-12);
}

TEST(Na, SingleEntryDenominatorEqualToPositiveIsZero) {
  // Each user's only negative is an item identical to its positive.
  auto e = random_state(2, 2, 4, 7);
  e.items.row(1) = e.items.row(0);
  LossConfig cfg;
  EXPECT_NEAR(na_loss(std::vector<Interaction>{{0, 0}, {1, 1}}, e, cfg), 0.0, 1e-12);
}

TEST(Na, MatchesNaiveDoubleLoop) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto e = random_state(5, 7, 4, seed);
    const auto b = random_batch(5, 7, 4, seed + 1000);
    const auto pairs = b.positive_pairs();
    for (auto neg : {NaNegatives::kOtherItems, NaNegatives::kOtherItemsAndUsers}) {
      for (auto kind : {SimilarityKind::kCosine, SimilarityKind::kDot}) {
        LossConfig cfg;
        cfg.tau = 0.3;
        cfg.na_negatives = neg;
        cfg.contrastive_similarity = kind;
        EXPECT_NEAR(na_loss(pairs, e, cfg), naive_na(pairs, e, 0.3, neg == NaNegatives::kOtherItemsAndUsers, kind),
                    1e-12);
      }
    }
  }
}

TEST(Na, SameUserPairsAreNotNegatives) {
  const auto e = random_state(2, 3, 3, 8);
  const std::vector<Interaction> pairs{{0, 0}, {0, 1}, {1, 2}};
  LossConfig cfg;
  cfg.contrastive_similarity = SimilarityKind::kDot;
  const double t = cfg.tau;
  auto s = [&](Index u, Index i) { return e.users.row(u).dot(e.items.row(i)) / t; };
  // u0's denominator holds only item 2; u1's holds items 0 and 1.
  const double expect = ((-s(0, 0) + s(0, 2)) + (-s(0, 1) + s(0, 2)) +
                         (-s(1, 2) + std::log(std::exp(s(1, 0)) + std::exp(s(1, 1))))) /
                        3.0;
  EXPECT_NEAR(na_loss(pairs, e, cfg), expect, 1e-12);
}

TEST(Na, PermutationInvariant) {
  const auto e = random_state(6, 6, 3, 9);
  auto pairs = random_batch(6, 6, 6, 9).positive_pairs();
  LossConfig cfg;
  const double base = na_loss(pairs, e, cfg);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    EXPECT_NEAR(na_loss(pairs, e, cfg), base, 1e-12);
  }
}

TEST(Na, DecreasesWhenPositiveSimilarityRises) {
  // Move e_u0 along a direction orthogonal to the other pairs' items: only
  // sim(u0, i0) changes, by delta . e_i0.
  const auto e = random_state(3, 3, 5, 10);
  const std::vector<Interaction> pairs{{0, 0}, {1, 1}, {2, 2}};
  LossConfig cfg;
  cfg.contrastive_similarity = SimilarityKind::kDot;
  Eigen::MatrixXd others(5, 2);
  others.col(0) = e.items.row(1).transpose();
  others.col(1) = e.items.row(2).transpose();
  const Eigen::MatrixXd q = others.householderQr().householderQ();
  Vector delta = e.items.row(0).transpose();
  delta -= q.leftCols(2) * (q.leftCols(2).transpose() * delta);
  ASSERT_GT(delta.dot(e.items.row(0)), 0.0);
  auto moved = e;
  moved.users.row(0) += 0.1 * delta.transpose();
  const double gain = 0.1 * delta.dot(e.items.row(0));
  const double before = na_loss(pairs, e, cfg), after = na_loss(pairs, moved, cfg);
  EXPECT_LT(after, before);
  EXPECT_NEAR(before - after, gain / cfg.tau / 3.0, 1e-12);
}

TEST(Na, Errors) {
  const auto e = random_state(2, 2, 2, 11);
  LossConfig cfg;
  EXPECT_THROW(na_loss(std::vector<Interaction>{{0, 0}}, e, cfg), ValidationError);
  EXPECT_THROW(na_loss(std::vector<Interaction>{{0, 0}, {0, 1}}, e, cfg), ValidationError);
}

TEST(Bpr, EqualScoresGiveLog2) {
  auto e = random_state(1, 2, 3, 12);
  e.items.row(1) = e.items.row(0);
  EXPECT_NEAR(bpr_loss(0, 0, 1, e), std::log(2.0), 1e-15);
}

TEST(Bpr, Limits) {
  EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_TRUE(std::isfinite(softplus(1e6)));
}

TEST(Bpr, MatchesDirectFormula) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 50; ++t) {
    const auto e = random_state(2, 3, 4, rng());
    const double delta = e.users.row(0).dot(e.items.row(0)) - e.users.row(0).dot(e.items.row(1));
    EXPECT_NEAR(bpr_loss(0, 0, 1, e), -std::log(1.0 / (1.0 + std::exp(-delta))), 1e-12);
  }
}

TEST(Joint, ReducesToBprWhenAlphaBetaZero) {
  const auto e = random_state(5, 6, 3, 14);
  const auto b = random_batch(5, 6, 5, 14);
  LossConfig cfg;
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  for (auto aux : {AuxLoss::kNone, AuxLoss::kClSs, AuxLoss::kClUi, AuxLoss::kNa}) {
    EXPECT_EQ(joint_loss(b, e, cfg, aux).total, bpr_loss(b, e));
  }
}

TEST(Joint, BreakdownSums) {
  const auto e = random_state(5, 6, 3, 15);
  const auto b = random_batch(5, 6, 5, 15);
  LossConfig cfg;
  cfg.alpha = 2.5;
  cfg.beta = 1e-2;
  const auto l = joint_loss(b, e, cfg, AuxLoss::kNa);
  EXPECT_NEAR(l.total, l.bpr + 2.5 * l.aux + 1e-2 * l.reg, 1e-14);
  EXPECT_NEAR(l.aux, na_loss(b.positive_pairs(), e, cfg), 1e-14);
  double reg = 0.0;
  const auto t = touched_rows(b);
  for (Index u : t.users) reg += e.users.row(u).squaredNorm();
  for (Index i : t.items) reg += e.items.row(i).squaredNorm();
  EXPECT_NEAR(l.reg, reg, 1e-14);
  cfg.reg_scope = RegScope::kFull;
  EXPECT_NEAR(joint_loss(b, e, cfg, AuxLoss::kNa).reg, e.squared_norm(), 1e-12);
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.tau = 0.2;
  cfg.alpha = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.alpha = 1.0;
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
