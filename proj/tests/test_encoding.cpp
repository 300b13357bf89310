#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "strata/encoding.hpp"
#include "test_util.hpp"

using namespace strata;

namespace {

std::vector<double> pe(std::vector<double> x, int l) { return positional_encode(std::span<const double>(x), FrequencyBands(l)); }

void expect_near(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "component " << i;
}

// Direct evaluation of the octave-major (sin, cos) layout.
std::vector<double> ipe_reference(const Vec3& mu, const Vec3& var, int l_count) {
  std::vector<double> out;
  for (int l = 0; l < l_count; ++l) {
    for (int i = 0; i < 3; ++i) {
      const double damp = std::exp(-0.5 * std::pow(2.0, 2 * l) * var[i]);
      out.push_back(std::sin(std::pow(2.0, l) * mu[i]) * damp);
      out.push_back(std::cos(std::pow(2.0, l) * mu[i]) * damp);
    }
  }
  return out;
}

}  // namespace

TEST(PositionalEncode, ZeroInput) { expect_near(pe({0.0}, 2), {0, 1, 0, 1}, 0); }

TEST(PositionalEncode, QuarterTurn) {
  expect_near(pe({std::numbers::pi / 2}, 1), {1, 0}, 1e-12);
  expect_near(pe({std::numbers::pi / 2}, 2), {1, 0, 0, -1}, 1e-12);
}

TEST(PositionalEncode, OutputDimension) {
  EXPECT_EQ(pe({0.1, 0.2, 0.3}, 4).size(), FrequencyBands(4).output_dim(3));
  EXPECT_EQ(FrequencyBands(10).output_dim(3), 60u);
  EXPECT_THROW(FrequencyBands(0), std::invalid_argument);
}

TEST(PositionalEncode, GraphMatchesScalarPath) {
  std::mt19937_64 rng(3);
  Tensor x = test::random_tensor({5, 3}, rng, -3, 3);
  ad::Graph g;
  Tensor enc = positional_encode(g.constant(x), FrequencyBands(3)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> row = pe({x.at(r, 0), x.at(r, 1), x.at(r, 2)}, 3);
    for (std::size_t k = 0; k < row.size(); ++k) EXPECT_NEAR(enc.at(r, k), row[k], 1e-14);
  }
}

TEST(IntegratedEncode, ZeroMeanZeroVariance) {
  for (int l : {1, 3, 10}) {
    std::vector<double> v = integrated_positional_encode(GaussianSegment{}, FrequencyBands(l));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(v[i], i % 2 == 0 ? 0.0 : 1.0);
  }
}

TEST(IntegratedEncode, UnitVariance) {
  std::vector<double> v = integrated_positional_encode(GaussianSegment{Vec3::Zero(), Vec3::Ones()}, FrequencyBands(1));
  for (std::size_t i = 1; i < v.size(); i += 2) EXPECT_NEAR(v[i], 0.606531, 1e-6);
}

TEST(IntegratedEncode, HugeVarianceVanishes) {
  std::vector<double> v =
      integrated_positional_encode(GaussianSegment{Vec3(0.3, -1, 2), Vec3::Constant(1e6)}, FrequencyBands(4));
  for (double x : v) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(IntegratedEncode, MatchesDirectFormula) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2, 2), pos(0, 0.5);
  for (int t = 0; t < 20; ++t) {
    Vec3 mu(u(rng), u(rng), u(rng)), var(pos(rng), pos(rng), pos(rng));
    expect_near(integrated_positional_encode(GaussianSegment{mu, var}, FrequencyBands(5)), ipe_reference(mu, var, 5), 1e-13);
  }
}

TEST(IntegratedEncode, BatchedMatchesScalarAndIsDifferentiable) {
  std::mt19937_64 rng(10);
  Tensor mu = test::random_tensor({4, 3}, rng, -2, 2), var = test::random_tensor({4, 3}, rng, 0, 0.3);
  ad::Graph g;
  Tensor enc = integrated_positional_encode(g.constant(mu), g.constant(var), FrequencyBands(4)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> ref = ipe_reference(Vec3(mu.at(r, 0), mu.at(r, 1), mu.at(r, 2)),
                                            Vec3(var.at(r, 0), var.at(r, 1), var.at(r, 2)), 4);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(enc.at(r, k), ref[k], 1e-13);
  }
  const double err = ad::gradient_check(
      [&](ad::Graph& h, const ad::Var& m) {
        return ad::sum(integrated_positional_encode(m, h.constant(var), FrequencyBands(4)));
      },
      mu);
  EXPECT_LT(err, 1e-6);
}

TEST(IntegratedEncode, RejectsNegativeVariance) {
  EXPECT_THROW(integrated_positional_encode(GaussianSegment{Vec3::Zero(), Vec3(0, -1, 0)}, FrequencyBands(2)),
               std::invalid_argument);
  ad::Graph g;
  EXPECT_THROW(integrated_positional_encode(g.constant(Tensor(Shape{1, 3})), g.constant(Tensor(Shape{1, 3}, -1.0)),
                                            FrequencyBands(2)),
               std::invalid_argument);
}

TEST(SegmentGaussian, DegenerateInterval) {
  Ray r;
  r.direction = Vec3(0, 0, 1);
  GaussianSegment s = segment_gaussian(r, 1.0, 1.0 + 1e-9, 0.0);
  EXPECT_NEAR((s.mu - Vec3(0, 0, 1)).norm(), 0.0, 1e-9);
  EXPECT_LT(s.sigma_diag.maxCoeff(), 1e-18);
}

TEST(SegmentGaussian, UniformIntervalVariance) {
  Ray r;
  r.direction = Vec3(0, 0, 1);
  GaussianSegment s = segment_gaussian(r, 0.0, 2.0, 0.0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s.sigma_diag[i], 1.0 / 3.0);
}

TEST(SegmentGaussian, Midpoint) {
  Ray r;
  r.origin = Vec3(1, 0, 0);
  r.direction = Vec3(0, 1, 0);
  GaussianSegment s = segment_gaussian(r, 2.0, 4.0, 0.01);
  EXPECT_DOUBLE_EQ(s.mu[0], 1.0);
  EXPECT_DOUBLE_EQ(s.mu[1], 3.0);
  EXPECT_DOUBLE_EQ(s.mu[2], 0.0);
}

TEST(SegmentGaussian, FootprintGrowsWithDistance) {
  Ray r;
  GaussianSegment near = segment_gaussian(r, 1.0, 1.1, 0.01), far = segment_gaussian(r, 5.0, 5.1, 0.01);
  EXPECT_GT(far.sigma_diag[0], near.sigma_diag[0]);
  EXPECT_THROW(segment_gaussian(r, 1.0, 1.0, 0.0), std::invalid_argument);
}

TEST(Contract, InsideUnitBallIsIdentity) {
  Vec3 x(0.3, 0.4, 0.0);
  EXPECT_EQ(contract(x), x);
}

TEST(Contract, OutsideBranch) {
  Vec3 c = contract(Vec3(4, 0, 0));
  EXPECT_DOUBLE_EQ(c[0], 1.75);
  EXPECT_DOUBLE_EQ(c[1], 0.0);
  EXPECT_NEAR(contract(Vec3(1e6, 0, 0)).norm(), 2.0 - 1e-6, 1e-12);
}

TEST(Contract, AlwaysInsideRadiusTwo) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 100);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(contract(Vec3(n(rng), n(rng), n(rng))).norm(), 2.0);
}

TEST(Contract, BatchedMatchesScalarAndGradient) {
  Tensor x = Tensor::matrix({{0.2, 0.1, -0.3}, {3, -1, 2}, {0, 0, 10}});
  ad::Graph g;
  Tensor c = contract(g.constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    Vec3 ref = contract(Vec3(x.at(r, 0), x.at(r, 1), x.at(r, 2)));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(c.at(r, k), ref[static_cast<int>(k)], 1e-14);
  }
  EXPECT_LT(ad::gradient_check([](ad::Graph&, const ad::Var& v) { return ad::sum(ad::square(contract(v))); }, x), 1e-6);
}

TEST(LevelEncode, EndpointsAndZero) {
  std::vector<double> zero = level_encode(0, 5, FrequencyBands(4));
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_DOUBLE_EQ(zero[i], i % 2 == 0 ? 0.0 : 1.0);
  expect_near(level_encode(4, 5, FrequencyBands(4)), pe({1.0}, 4), 1e-15);
  EXPECT_THROW(level_encode(-1, 5, FrequencyBands(4)), std::invalid_argument);
}

TEST(LevelEncode, InjectiveOverEightLevels) {
  std::set<std::vector<double>> seen;
  for (int l = 0; l < 8; ++l) seen.insert(level_encode(l, 8, FrequencyBands(4)));
  EXPECT_EQ(seen.size(), 8u);
}
