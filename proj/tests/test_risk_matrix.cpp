#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "covarcast/risk_matrix.hpp"
#include "oracles.hpp"

using namespace covarcast;

TEST(SampleCovariance, HandExample) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, 3, 4;
  const auto s = sample_covariance(x);
  EXPECT_TRUE(s.values().isApprox(Eigen::MatrixXd::Constant(2, 2, 2.0)));
  EXPECT_EQ(s.kind(), MatrixKind::covariance);
}

TEST(SampleCovariance, SingleAssetIsSampleVariance) {
  Eigen::MatrixXd x(4, 1);
  x << 1, 2, 4, 7;
  const double mean = 3.5;
  const double var = ((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (4 - mean) * (4 - mean) +
                      (7 - mean) * (7 - mean)) / 3.0;
  EXPECT_NEAR(sample_covariance(x)(0, 0), var, 1e-14);
}

TEST(SampleCovariance, ConstantReturnsGiveZero) {
  EXPECT_TRUE(sample_covariance(Eigen::MatrixXd::Constant(10, 3, 0.02)).values().isZero(0.0));
}

TEST(SampleCovariance, MatchesTwoLoopOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd x = oracle::random_matrix(5 + trial % 20, 1 + trial % 7, rng, 0.01);
    EXPECT_LE((sample_covariance(x).values() - oracle::covariance(x)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(SampleCovariance, RejectsSingleObservation) { EXPECT_THROW(sample_covariance(Eigen::MatrixXd::Ones(1, 2)), ValidationError); }

TEST(SemiCovariance, HandExample) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, -1, -2;
  const auto s = semi_covariance(x, Threshold::per_asset_mean());
  EXPECT_NEAR(s(0, 1), 1.0, 1e-15);
  EXPECT_EQ(s.kind(), MatrixKind::semi_covariance);
}

TEST(SemiCovariance, NoDownsideGivesZero) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(6, 2, 0.01);
  x(3, 0) = 0.05;
  EXPECT_TRUE(semi_covariance(x, Threshold::zero()).values().isZero(0.0));
}

TEST(SemiCovariance, MatchesOracleForEveryThresholdMode) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::MatrixXd x = oracle::random_matrix(30, 4, rng, 0.02);
    EXPECT_LE((semi_covariance(x).values() - oracle::semi_covariance(x)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((semi_covariance(x, Threshold::zero()).values() - oracle::semi_covariance(x, {0, 0, 0, 0})).cwiseAbs().maxCoeff(),
              1e-15);
    EXPECT_LE((semi_covariance(x, Threshold::fixed(0.01)).values() -
               oracle::semi_covariance(x, {0.01, 0.01, 0.01, 0.01}))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
  }
}

TEST(SemiCovariance, DiagonalBoundedBySampleVariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd x = oracle::random_matrix(25, 5, rng);
    const auto semi = semi_covariance(x);
    const auto cov = sample_covariance(x);
    const double t = static_cast<double>(x.rows());
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_LE(semi(i, i), cov(i, i) * (t - 1) / t + 1e-15);
    EXPECT_TRUE(is_psd(semi.values(), 1e-10));
  }
}

TEST(Vech, LayoutAndLength) {
  EXPECT_EQ(vech(Eigen::MatrixXd::Identity(3, 3)).size(), 6u);
  EXPECT_EQ(vech(Eigen::MatrixXd::Identity(2, 2)).values(), Eigen::Vector3d(1, 0, 1));
  Eigen::MatrixXd m(2, 2);
  m << 4, 1, 1, 9;
  EXPECT_EQ(vech(m).values(), Eigen::Vector3d(4, 1, 9));
}

TEST(Vech, IndexIsRowMajorLowerTriangle) {
  Eigen::MatrixXd m(3, 3);
  m << 1, 2, 4, 2, 3, 5, 4, 5, 6;
  const auto v = vech(m);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) EXPECT_EQ(v[vech_index(i, j)], m(i, j));
}

TEST(Vech, UnvechInvertsVech) {
  EXPECT_EQ(unvech(VechVector(Eigen::Vector3d(1, 0, 1))).values(), Eigen::MatrixXd::Identity(2, 2));
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd m = oracle::random_symmetric(10, rng);
  EXPECT_EQ(unvech(vech(m)).values(), m);
}

TEST(Vech, RejectsNonTriangularLength) {
  try {
    VechVector v(Eigen::VectorXd::Zero(5));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("not a triangular number"), std::string::npos);
  }
}

TEST(Symmetrize, Definition) {
  Eigen::MatrixXd m(2, 2);
  m << 0, 1, 0, 0;
  Eigen::MatrixXd expected(2, 2);
  expected << 0, 0.5, 0.5, 0;
  EXPECT_EQ(symmetrize(m), expected);
}

TEST(Symmetrize, FixedPointAndIdempotent) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd s = oracle::random_symmetric(6, rng);
  EXPECT_EQ(symmetrize(s), s);
  const Eigen::MatrixXd m = oracle::random_matrix(6, 6, rng);
  EXPECT_EQ(symmetrize(symmetrize(m)), symmetrize(m));
}

TEST(NearestPsd, WorkedExample) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 2, 1;
  // Eigenvalues 3 and -1; clipping leaves 3 * v v^T with v = (1,1)/sqrt(2).
  const auto [lo, hi] = oracle::eigen2(1, 2, 1);
  EXPECT_DOUBLE_EQ(lo, -1.0);
  const Eigen::MatrixXd expected = Eigen::MatrixXd::Constant(2, 2, hi / 2.0);
  EXPECT_LE((nearest_psd(m).values() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NearestPsd, IdentityUnchanged) {
  EXPECT_LE((nearest_psd(Eigen::MatrixXd::Identity(4, 4)).values() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(NearestPsd, PsdInputUnchanged) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd p = oracle::random_psd(8, rng);
  EXPECT_LE((nearest_psd(p).values() - p).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(NearestPsd, DiagonalIsNonNegative) {
  Eigen::MatrixXd m(2, 2);
  m << -1, 0, 0, 2;
  const auto r = nearest_psd(m);
  EXPECT_GE(r(0, 0), 0.0);
  EXPECT_TRUE(is_psd(r.values(), 1e-12));
}

TEST(MinEigenvalue, MatchesCharacteristicPolynomial) {
  EXPECT_DOUBLE_EQ(min_eigenvalue(Eigen::MatrixXd::Identity(3, 3)), 1.0);
  EXPECT_TRUE(is_psd(Eigen::MatrixXd::Identity(3, 3), 0.0));
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 2, 1;
  EXPECT_NEAR(min_eigenvalue(m), oracle::eigen2(1, 2, 1).first, 1e-14);
  EXPECT_FALSE(is_psd(m, 1e-10));
  EXPECT_EQ(min_eigenvalue(Eigen::MatrixXd::Zero(3, 3)), 0.0);
  EXPECT_TRUE(is_psd(Eigen::MatrixXd::Zero(3, 3), 0.0));
}

TEST(MinEigenvalue, MatchesJacobiOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd m = oracle::random_symmetric(1 + trial % 7, rng);
    EXPECT_NEAR(min_eigenvalue(m), oracle::jacobi_eigenvalues(m).front(), 1e-10);
  }
}

TEST(RiskMatrixIo, CsvRoundTrip) {
  std::mt19937_64 rng(9);
  const RiskMatrix m(oracle::random_psd(4, rng), MatrixKind::semi_covariance);
  std::stringstream io;
  write_matrix_csv(io, m);
  const auto back = read_matrix_csv(io, MatrixKind::semi_covariance);
  EXPECT_EQ(back.values(), m.values());
}

TEST(RiskMatrixIo, JsonRoundTrip) {
  std::mt19937_64 rng(10);
  const RiskMatrix m(oracle::random_psd(3, rng), MatrixKind::covariance);
  const auto back = risk_matrix_from_json(to_json(m));
  EXPECT_EQ(back.values(), m.values());
  EXPECT_EQ(back.kind(), m.kind());
}

TEST(RiskMatrix, RejectsAsymmetric) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 0.5, 0, 1;
  EXPECT_THROW(RiskMatrix(m, MatrixKind::covariance), ValidationError);
}

TEST(Kinds, ParseAndPrint) {
  EXPECT_EQ(parse_matrix_kind(to_string(MatrixKind::semi_covariance)), MatrixKind::semi_covariance);
  EXPECT_EQ(parse_threshold("zero").mode, Threshold::Mode::zero);
  EXPECT_EQ(parse_threshold("0.002").target, 0.002);
  EXPECT_THROW(parse_threshold("median"), ValidationError);
}
