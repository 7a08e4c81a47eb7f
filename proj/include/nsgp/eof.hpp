#pragma once

#include <Eigen/Dense>
#include <filesystem>

#include "nsgp/field_store.hpp"

namespace nsgp {

struct CenteredField {
  Eigen::MatrixXd anomaly;    // n x p
  Eigen::VectorXd row_means;  // n
};

// Subtracts each location's temporal mean. Needs p >= 2 (DegenerateField).
CenteredField center_rows(const SpaceTimeField& field);

// Leading spatial patterns of the row-centred field.
//
// The thin SVD is taken through the eigen-decomposition of the smaller Gram
// matrix. Each EOF column is sign-normalised so its largest-magnitude entry
// is positive (the matching PC column flips with it).
struct EofBasis {
  std::vector<Location> locations;     // geometry the basis was computed on
  Eigen::MatrixXd eofs;                // n x M, orthonormal columns
  Eigen::VectorXd singular_values;     // all min(n, p), nonincreasing
  Eigen::MatrixXd pcs;                 // p x M
  Eigen::VectorXd row_means;           // n
  Eigen::VectorXd variance_explained;  // M fractions of total squared singular values
  bool rank_deficient = false;         // lambda_M is numerically zero

  int num_eofs() const { return static_cast<int>(eofs.cols()); }
};

// 0 <= M <= min(n, p); M = 0 keeps only the centring.
EofBasis compute_eofs(const SpaceTimeField& field, int num_eofs);

// Value of EOF m (1-based) at the grid cell nearest to s.
double eof_at(const EofBasis& basis, const SpaceTimeField& field, const Location& s, int m);

// anomaly - E_M E_M^T anomaly, returned on the field's geometry.
SpaceTimeField detrend_by_eofs(const SpaceTimeField& field, const EofBasis& basis);

// Long format `lon,lat,eof_index,value`, and a summary with one row per
// singular value: `index,singular_value,variance_explained`.
void write_basis_csv(const std::filesystem::path& path, const EofBasis& basis);
void write_basis_summary_csv(const std::filesystem::path& path, const EofBasis& basis);

// Reads the long format back onto `field`'s geometry. Only locations and
// eofs are restored. Throws GeometryMismatch when a location is not a cell.
EofBasis read_basis_csv(const std::filesystem::path& path, const SpaceTimeField& field);

}  // namespace nsgp
