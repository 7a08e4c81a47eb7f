#include "nsgp/eof.hpp"

#include <algorithm>
#include <cmath>

#include "nsgp/csv.hpp"
#include "nsgp/error.hpp"
#include "nsgp/log.hpp"

namespace nsgp {
namespace {

// Flip so the largest-magnitude entry is positive.
bool needs_flip(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  return v(idx) < 0.0;
}

// Fills columns [from, cols) of `q` with unit vectors orthogonal to the
// preceding ones (Gram-Schmidt against the standard basis).
void complete_orthonormal(Eigen::MatrixXd& q, Eigen::Index from) {
  const Eigen::Index n = q.rows();
  Eigen::Index col = from;
  for (Eigen::Index k = 0; k < n && col < q.cols(); ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(n, k);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index j = 0; j < col; ++j) v -= q.col(j).dot(v) * q.col(j);
    const double norm = v.norm();
    if (norm > 1e-8) q.col(col++) = v / norm;
  }
}

}  // namespace

CenteredField center_rows(const SpaceTimeField& field) {
  if (field.p() < 2)
    throw Error(ErrorCode::DegenerateField, "centring needs at least 2 time points");
  CenteredField out;
  out.row_means = field.values.rowwise().mean();
  out.anomaly = field.values.colwise() - out.row_means;
  return out;
}

EofBasis compute_eofs(const SpaceTimeField& field, int num_eofs) {
  auto centered = center_rows(field);
  const Eigen::MatrixXd& x = centered.anomaly;
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const Eigen::Index r = std::min(n, p);
  if (num_eofs < 0 || num_eofs > r)
    throw Error(ErrorCode::IndexOutOfRange,
                "num_eofs must lie in [0, " + std::to_string(r) + "]");

  // Eigen-decompose the smaller Gram matrix; the other side of the SVD is
  // recovered by projection.
  const bool time_side = p <= n;
  Eigen::MatrixXd gram = time_side ? Eigen::MatrixXd(x.transpose() * x)
                                   : Eigen::MatrixXd(x * x.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  // Ascending eigenvalues; reverse to get the leading terms first.
  Eigen::VectorXd evals = eig.eigenvalues().reverse();
  Eigen::MatrixXd evecs = eig.eigenvectors().rowwise().reverse();

  Eigen::VectorXd sv(r);
  for (Eigen::Index k = 0; k < r; ++k) sv(k) = std::sqrt(std::max(evals(k), 0.0));
  const double total = sv.squaredNorm();
  // The Gram route resolves singular values only down to ~sqrt(eps) of the
  // leading one.
  const double tiny = (sv.size() ? sv(0) : 0.0) * 1e-7;

  EofBasis basis;
  basis.locations = field.locations;
  basis.row_means = centered.row_means;
  basis.singular_values = sv;
  basis.eofs = Eigen::MatrixXd::Zero(n, num_eofs);
  basis.pcs = Eigen::MatrixXd::Zero(p, num_eofs);
  basis.variance_explained = Eigen::VectorXd::Zero(num_eofs);

  Eigen::Index usable = 0;
  for (Eigen::Index k = 0; k < num_eofs; ++k) {
    if (sv(k) <= tiny || sv(k) == 0.0) break;
    if (time_side) {
      basis.pcs.col(k) = evecs.col(k);
      basis.eofs.col(k) = x * evecs.col(k) / sv(k);
    } else {
      basis.eofs.col(k) = evecs.col(k);
      basis.pcs.col(k) = x.transpose() * evecs.col(k) / sv(k);
    }
    ++usable;
  }
  // One re-orthogonalisation sweep removes the Gram route's loss of
  // orthogonality on the weaker patterns.
  for (Eigen::Index k = 0; k < usable; ++k) {
    for (Eigen::Index j = 0; j < k; ++j)
      basis.eofs.col(k) -= basis.eofs.col(j).dot(basis.eofs.col(k)) * basis.eofs.col(j);
    basis.eofs.col(k).normalize();
  }
  if (usable < num_eofs) {
    basis.rank_deficient = true;
    complete_orthonormal(basis.eofs, usable);
    log::warn("compute_eofs: rank deficient, singular value " + std::to_string(usable + 1) +
              " is numerically zero");
  }
  for (Eigen::Index k = 0; k < num_eofs; ++k) {
    if (needs_flip(basis.eofs.col(k))) {
      basis.eofs.col(k) *= -1.0;
      basis.pcs.col(k) *= -1.0;
    }
    basis.variance_explained(k) = total > 0.0 ? sv(k) * sv(k) / total : 0.0;
  }
  return basis;
}

double eof_at(const EofBasis& basis, const SpaceTimeField& field, const Location& s, int m) {
  if (m < 1 || m > basis.num_eofs())
    throw Error(ErrorCode::IndexOutOfRange,
                "EOF index " + std::to_string(m) + " outside [1, " +
                    std::to_string(basis.num_eofs()) + "]");
  if (basis.locations.size() != field.n())
    throw Error(ErrorCode::GeometryMismatch, "basis and field geometry differ");
  return basis.eofs(static_cast<Eigen::Index>(nearest_cell(field, s)), m - 1);
}

SpaceTimeField detrend_by_eofs(const SpaceTimeField& field, const EofBasis& basis) {
  if (basis.locations != field.locations)
    throw Error(ErrorCode::GeometryMismatch, "basis and field geometry differ");
  auto centered = center_rows(field);
  Eigen::MatrixXd residual = centered.anomaly;
  if (basis.num_eofs() > 0) residual -= basis.eofs * (basis.eofs.transpose() * residual);
  SpaceTimeField out;
  out.locations = field.locations;
  out.days = field.days;
  out.grid_spacing = field.grid_spacing;
  out.values = std::move(residual);
  return out;
}

void write_basis_csv(const std::filesystem::path& path, const EofBasis& basis) {
  auto out = csv::open_for_write(path);
  out << "lon,lat,eof_index,value\n";
  for (int m = 0; m < basis.num_eofs(); ++m) {
    for (std::size_t i = 0; i < basis.locations.size(); ++i) {
      out << csv::format(basis.locations[i].lon) << ',' << csv::format(basis.locations[i].lat)
          << ',' << (m + 1) << ',' << csv::format(basis.eofs(static_cast<Eigen::Index>(i), m))
          << '\n';
    }
  }
}

void write_basis_summary_csv(const std::filesystem::path& path, const EofBasis& basis) {
  auto out = csv::open_for_write(path);
  const double total = basis.singular_values.squaredNorm();
  out << "index,singular_value,variance_explained\n";
  for (Eigen::Index k = 0; k < basis.singular_values.size(); ++k) {
    const double sv = basis.singular_values(k);
    out << (k + 1) << ',' << csv::format(sv) << ','
        << csv::format(total > 0.0 ? sv * sv / total : 0.0) << '\n';
  }
}

EofBasis read_basis_csv(const std::filesystem::path& path, const SpaceTimeField& field) {
  const auto t = csv::read(path);
  const auto clon = t.column("lon"), clat = t.column("lat"), cm = t.column("eof_index"),
             cv = t.column("value");
  long m_max = 0;
  for (const auto& r : t.rows) m_max = std::max(m_max, csv::parse_long(r[cm], path.string()));
  EofBasis basis;
  basis.locations = field.locations;
  basis.eofs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(field.n()), m_max);
  std::vector<long> filled(static_cast<std::size_t>(m_max), 0);
  for (const auto& r : t.rows) {
    const Location s{csv::parse_double(r[clon], path.string()), csv::parse_double(r[clat], path.string())};
    const auto cell = nearest_cell(field, s);
    if (!(field.locations[cell] == s))
      throw Error(ErrorCode::GeometryMismatch, path.string() + ": basis location is not a field cell");
    const long m = csv::parse_long(r[cm], path.string());
    if (m < 1) throw Error(ErrorCode::ParseError, path.string() + ": eof_index must be >= 1");
    basis.eofs(static_cast<Eigen::Index>(cell), m - 1) = csv::parse_double(r[cv], path.string());
    ++filled[static_cast<std::size_t>(m - 1)];
  }
  for (auto f : filled)
    if (f != static_cast<long>(field.n()))
      throw Error(ErrorCode::GeometryMismatch, path.string() + ": basis does not cover the field");
  return basis;
}

}  // namespace nsgp
