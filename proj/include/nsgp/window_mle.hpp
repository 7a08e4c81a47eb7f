#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nsgp/covariance.hpp"
#include "nsgp/field_store.hpp"

namespace nsgp {

struct Window {
  double lon_min = 0.0;
  double lon_max = 0.0;
  double lat_min = 0.0;
  double lat_max = 0.0;

  bool contains(const Location& s) const {
    return s.lon >= lon_min && s.lon <= lon_max && s.lat >= lat_min && s.lat <= lat_max;
  }
  Location center() const { return {0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max)}; }
  // Euclidean distance from s to the rectangle (0 inside).
  double distance_to(const Location& s) const;
};

// Square tiles laid row-major (west to east, then south to north) from the
// lower-left corner of the field's bounding box.
struct WindowGrid {
  std::vector<Window> windows;
  double window_size = 2.0;
  std::vector<std::size_t> assignment;  // field cell -> window

  // Lowest-index window containing s (closed bounds, so shared edges go to
  // the lower index); nearest window when s is outside all of them.
  std::size_t locate(const Location& s) const;
};

WindowGrid partition(const SpaceTimeField& field, double size);

struct WindowFit {
  double rho_hat = 0.0;
  double sigma2_hat = 0.0;
  double loglik = 0.0;
  std::size_t n_cells = 0;
  bool converged = false;
  bool fallback = false;                 // estimates inherited from another window
  std::optional<std::size_t> source;     // window the estimates came from
};

struct WindowEstimates {
  std::vector<WindowFit> fits;  // aligned with WindowGrid::windows
};

struct WindowFitOptions {
  double nu = 1.5;
  std::size_t min_cells = 4;
  double relative_nugget = 1e-6;  // times the sample variance
  int max_iterations = 5000;
  double tolerance = 1e-6;        // simplex size in log-parameters
};

// Sum over time columns of the zero-mean Gaussian log density with
// covariance Matérn(nu, rho, sigma2) + nugget I; one factorisation is shared
// across columns. residuals: cells x times.
double window_loglik(const Eigen::MatrixXd& residuals, std::span<const Location> locs, double rho,
                     double sigma2, double nu, double nugget);

// Maximises window_loglik over (log rho, log sigma2) by Nelder-Mead from
// three starts. Throws TooFewCells below options.min_cells. A fit that stops
// on a parameter bound or does not shrink its simplex below the tolerance
// is returned with converged = false.
WindowFit fit_window(const Eigen::MatrixXd& residuals, std::span<const Location> locs,
                     const WindowFitOptions& options);

// Independent per-window fits (parallel over windows). Windows that are too
// small or unconverged inherit the nearest converged window's estimates.
// Throws NoConvergedWindows.
WindowEstimates fit_all_windows(const SpaceTimeField& residuals, const WindowGrid& grid,
                                const WindowFitOptions& options, int threads = 0);

SiteParams estimate_at(const WindowEstimates& estimates, const WindowGrid& grid,
                       const Location& s);

// `window_id,lon_min,lon_max,lat_min,lat_max,rho_hat,sigma2_hat,n_cells,converged,fallback`
void write_windows_csv(const std::filesystem::path& path, const WindowGrid& grid,
                       const WindowEstimates& estimates);

struct WindowTable {
  WindowGrid grid;  // assignment left empty
  WindowEstimates estimates;
};
WindowTable read_windows_csv(const std::filesystem::path& path);

namespace reference {

WindowEstimates fit_all_windows(const SpaceTimeField& residuals, const WindowGrid& grid,
                                const WindowFitOptions& options);

}  // namespace reference

}  // namespace nsgp
