#include <gtest/gtest.h>

#include <random>

#include "nsgp/eof.hpp"
#include "test_util.hpp"

using namespace nsgp;

namespace {

SpaceTimeField grid_field(int side, const Eigen::MatrixXd& values) {
  std::vector<Location> locs;
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i) locs.push_back({double(i), double(j)});
  std::vector<long> days(static_cast<std::size_t>(values.cols()));
  for (std::size_t t = 0; t < days.size(); ++t) days[t] = static_cast<long>(t + 1);
  return make_field(locs, days, values);
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Eof, CenterRows) {
  Eigen::MatrixXd v(1, 2);
  v << 1, 3;
  const auto c = center_rows(make_field({{0, 0}}, {1, 2}, v));
  EXPECT_DOUBLE_EQ(c.anomaly(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(c.anomaly(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(c.row_means(0), 2.0);

  const auto k = center_rows(grid_field(2, Eigen::MatrixXd::Constant(4, 3, 5.0)));
  EXPECT_EQ(k.anomaly.cwiseAbs().maxCoeff(), 0.0);

  const Eigen::MatrixXd r = random_matrix(5, 4, 1);
  const auto rc = center_rows(make_field({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}, {1, 2, 3, 4}, r));
  EXPECT_LT(rc.anomaly.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12 * 4 * r.cwiseAbs().maxCoeff());

  EXPECT_NSGP_ERROR(center_rows(make_field({{0, 0}}, {1}, Eigen::MatrixXd::Ones(1, 1))),
                    ErrorCode::DegenerateField);
}

TEST(Eof, RankOne) {
  Eigen::VectorXd u(9), v(5);
  u << 1, -2, 3, 0.5, -1, 2, 4, -3, 1;
  v << 1, -1, 2, -2, 0;  // zero mean, so centring leaves u v^T unchanged
  const auto basis = compute_eofs(grid_field(3, u * v.transpose()), 1);
  const Eigen::VectorXd e = basis.eofs.col(0);
  const Eigen::VectorXd expect = u.normalized();
  EXPECT_LT((e - expect).norm(), 1e-10);  // largest entry 4 is positive already
  EXPECT_NEAR(basis.variance_explained(0), 1.0, 1e-10);
  EXPECT_FALSE(basis.rank_deficient);
}

TEST(Eof, ZeroAnomalyFlagsRankDeficiency) {
  const auto basis = compute_eofs(grid_field(2, Eigen::MatrixXd::Constant(4, 3, 1.0)), 2);
  EXPECT_TRUE(basis.rank_deficient);
  EXPECT_EQ(basis.singular_values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((basis.eofs.transpose() * basis.eofs - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-10);
}

TEST(Eof, InvariantsOnRandomField) {
  const Eigen::MatrixXd x = random_matrix(36, 12, 7);
  const auto field = grid_field(6, x);
  const auto basis = compute_eofs(field, 12);
  const Eigen::MatrixXd gram = basis.eofs.transpose() * basis.eofs;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-10);
  for (Eigen::Index k = 1; k < basis.singular_values.size(); ++k)
    EXPECT_LE(basis.singular_values(k), basis.singular_values(k - 1));
  const double total = basis.singular_values.squaredNorm();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < basis.singular_values.size(); ++k)
    sum += basis.singular_values(k) * basis.singular_values(k) / total;
  EXPECT_NEAR(sum, 1.0, 1e-10);
  // Sign convention.
  for (int k = 0; k < 12; ++k) {
    Eigen::Index idx;
    basis.eofs.col(k).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(basis.eofs(idx, k), 0.0);
  }
  // Reconstruction over all terms. The centred matrix has rank p - 1, so the
  // last term carries a zero singular value.
  const auto c = center_rows(field);
  Eigen::MatrixXd recon = Eigen::MatrixXd::Zero(36, 12);
  for (int k = 0; k < 12; ++k)
    recon += basis.singular_values(k) * basis.eofs.col(k) * basis.pcs.col(k).transpose();
  EXPECT_LT((recon - c.anomaly).norm() / c.anomaly.norm(), 1e-8);
}

TEST(Eof, MatchesDirectSvd) {
  const Eigen::MatrixXd x = random_matrix(16, 30, 3);  // n < p: the other Gram side
  const auto field = grid_field(4, x);
  const auto basis = compute_eofs(field, 5);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(center_rows(field).anomaly, Eigen::ComputeThinU);
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(basis.singular_values(k), svd.singularValues()(k), 1e-9);
    EXPECT_NEAR(std::abs(basis.eofs.col(k).dot(svd.matrixU().col(k))), 1.0, 1e-9);
  }
}

TEST(Eof, PlantedSpectrum) {
  // Seven orthonormal patterns carrying 70% of the total sum of squares.
  const int n = 100, p = 60;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, 7, 11));
  const Eigen::MatrixXd patterns = qr.householderQ() * Eigen::MatrixXd::Identity(n, 7);
  Eigen::MatrixXd scores = random_matrix(p, 7, 12);
  scores.rowwise() -= scores.colwise().mean();
  Eigen::MatrixXd noise = random_matrix(n, p, 13);
  noise.colwise() -= noise.rowwise().mean();
  // Keep the noise orthogonal to the patterns in space and to the scores in
  // time, so the leading seven EOFs are exactly the signal.
  noise -= patterns * (patterns.transpose() * noise);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(scores).householderQ() * Eigen::MatrixXd::Identity(p, 7);
  noise -= (noise * q) * q.transpose();
  Eigen::MatrixXd signal = patterns * scores.transpose();
  signal.colwise() -= signal.rowwise().mean();
  noise *= std::sqrt(0.3 / 0.7 * signal.squaredNorm() / noise.squaredNorm());
  const auto basis = compute_eofs(grid_field(10, signal + noise), 7);
  ASSERT_LT(Eigen::JacobiSVD<Eigen::MatrixXd>(noise).singularValues()(0),
            Eigen::JacobiSVD<Eigen::MatrixXd>(signal).singularValues()(6));
  EXPECT_NEAR(basis.variance_explained.sum(), 0.70, 1e-10);
}

TEST(Eof, EofAtAndDetrend) {
  const Eigen::MatrixXd x = random_matrix(25, 8, 5);
  const auto field = grid_field(5, x);
  const auto basis = compute_eofs(field, 3);
  EXPECT_EQ(eof_at(basis, field, field.locations[7], 2), basis.eofs(7, 1));
  EXPECT_EQ(eof_at(basis, field, {1.2, 1.1}, 1), basis.eofs(6, 0));
  EXPECT_NSGP_ERROR(eof_at(basis, field, {0, 0}, 4), ErrorCode::IndexOutOfRange);
  EXPECT_NSGP_ERROR(compute_eofs(field, 9), ErrorCode::IndexOutOfRange);

  const auto r = detrend_by_eofs(field, basis);
  const Eigen::MatrixXd proj = basis.eofs.transpose() * r.values;
  EXPECT_LT(proj.cwiseAbs().maxCoeff(), 1e-8 * r.values.cwiseAbs().maxCoeff());
  // Idempotent: detrending the residual with the same patterns changes nothing.
  Eigen::MatrixXd again = r.values - basis.eofs * (basis.eofs.transpose() * r.values);
  EXPECT_LT((again - r.values).cwiseAbs().maxCoeff(), 1e-10);

  const auto r0 = detrend_by_eofs(field, compute_eofs(field, 0));
  EXPECT_LT((r0.values - center_rows(field).anomaly).cwiseAbs().maxCoeff(), 1e-15);

  // Field exactly in the span of 2 EOFs plus row means.
  const auto low = grid_field(5, basis.eofs.leftCols(2) * random_matrix(2, 8, 9) +
                                     Eigen::VectorXd::LinSpaced(25, 0, 5).replicate(1, 8));
  const auto lb = compute_eofs(low, 2);
  EXPECT_LT(detrend_by_eofs(low, lb).values.cwiseAbs().maxCoeff(), 1e-9);

  std::vector<Location> other = field.locations;
  other[0].lon = -1;
  EXPECT_NSGP_ERROR(detrend_by_eofs(make_field(other, field.days, x), basis),
                    ErrorCode::GeometryMismatch);
}

TEST(Eof, BasisCsvRoundTrip) {
  const auto field = grid_field(4, random_matrix(16, 6, 21));
  const auto basis = compute_eofs(field, 3);
  testutil::TempDir dir("eof");
  write_basis_csv(dir / "b.csv", basis);
  write_basis_summary_csv(dir / "s.csv", basis);
  const auto back = read_basis_csv(dir / "b.csv", field);
  EXPECT_EQ(back.eofs, basis.eofs);
  EXPECT_NE(testutil::read_text(dir / "s.csv").find("index,singular_value,variance_explained"),
            std::string::npos);
}
