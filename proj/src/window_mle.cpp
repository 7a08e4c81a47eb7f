#include "nsgp/window_mle.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "nsgp/csv.hpp"
#include "nsgp/error.hpp"
#include "nsgp/log.hpp"

namespace nsgp {
namespace {

double loglik_from_sqdist(const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& sqdist,
                          double rho, double sigma2, double nu, double nugget) {
  const auto k = residuals.rows();
  const auto t = residuals.cols();
  const auto cov = build_cov_matrix(sqdist, LocalParams::constant(static_cast<std::size_t>(k), rho,
                                                                  sigma2),
                                    KernelConfig{nu, nugget}, 1);
  const auto factor = chol_with_jitter(cov);
  const Eigen::MatrixXd white = factor.llt.matrixL().solve(residuals);
  return -0.5 * static_cast<double>(k * t) * std::log(2.0 * std::numbers::pi) -
         0.5 * static_cast<double>(t) * factor.log_det() - 0.5 * white.squaredNorm();
}

struct Objective {
  const Eigen::MatrixXd* residuals;
  const Eigen::MatrixXd* sqdist;
  double nu;
  double nugget;
  double lo[2];
  double hi[2];
};

// Negative log-likelihood; outside the box the parameters are clamped and a
// quadratic penalty pulls the simplex back.
double negloglik(const gsl_vector* v, void* params) {
  const auto* obj = static_cast<const Objective*>(params);
  double penalty = 0.0;
  double x[2];
  for (int i = 0; i < 2; ++i) {
    x[i] = gsl_vector_get(v, static_cast<std::size_t>(i));
    if (x[i] < obj->lo[i]) {
      penalty += 1e3 * (obj->lo[i] - x[i]) * (obj->lo[i] - x[i]);
      x[i] = obj->lo[i];
    } else if (x[i] > obj->hi[i]) {
      penalty += 1e3 * (x[i] - obj->hi[i]) * (x[i] - obj->hi[i]);
      x[i] = obj->hi[i];
    }
  }
  try {
    return -loglik_from_sqdist(*obj->residuals, *obj->sqdist, std::exp(x[0]), std::exp(x[1]),
                               obj->nu, obj->nugget) +
           penalty;
  } catch (const Error&) {
    return 1e300;
  }
}

struct SimplexResult {
  double x[2];
  double value;
  bool shrunk;
};

SimplexResult run_simplex(Objective& obj, double x0, double x1, const WindowFitOptions& opt) {
  static const bool quiet = (gsl_set_error_handler_off(), true);
  (void)quiet;
  using Minimizer = std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)>;
  using Vector = std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)>;
  Minimizer s(gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2),
              gsl_multimin_fminimizer_free);
  Vector start(gsl_vector_alloc(2), gsl_vector_free);
  Vector step(gsl_vector_alloc(2), gsl_vector_free);
  gsl_vector_set(start.get(), 0, x0);
  gsl_vector_set(start.get(), 1, x1);
  gsl_vector_set_all(step.get(), 0.5);

  gsl_multimin_function f{&negloglik, 2, &obj};
  gsl_multimin_fminimizer_set(s.get(), &f, start.get(), step.get());
  bool shrunk = false;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_fminimizer_size(s.get()) < opt.tolerance) {
      shrunk = true;
      break;
    }
  }
  SimplexResult r{};
  r.x[0] = gsl_vector_get(s->x, 0);
  r.x[1] = gsl_vector_get(s->x, 1);
  r.value = s->fval;
  r.shrunk = shrunk;
  return r;
}

double sample_variance(const Eigen::MatrixXd& m) {
  const double mean = m.mean();
  const double n = static_cast<double>(m.size());
  return (m.array() - mean).square().sum() / std::max(1.0, n - 1.0);
}

void fill_fallbacks(const WindowGrid& grid, WindowEstimates& est) {
  std::vector<std::size_t> good;
  for (std::size_t w = 0; w < est.fits.size(); ++w)
    if (est.fits[w].converged) good.push_back(w);
  if (good.empty())
    throw Error(ErrorCode::NoConvergedWindows, "no window produced a converged fit");
  for (std::size_t w = 0; w < est.fits.size(); ++w) {
    auto& fit = est.fits[w];
    if (fit.converged) {
      fit.source = w;
      continue;
    }
    const auto c = grid.windows[w].center();
    std::size_t best = good.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (auto g : good) {
      const double d = squared_distance(c, grid.windows[g].center());
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    fit.rho_hat = est.fits[best].rho_hat;
    fit.sigma2_hat = est.fits[best].sigma2_hat;
    fit.fallback = true;
    fit.source = best;
    log::info("window " + std::to_string(w) + " (" + std::to_string(fit.n_cells) +
              " cells) inherits estimates from window " + std::to_string(best));
  }
}

WindowFit fit_one(const SpaceTimeField& residuals, const WindowGrid& grid, std::size_t w,
                  const WindowFitOptions& options) {
  std::vector<Eigen::Index> cells;
  for (std::size_t i = 0; i < grid.assignment.size(); ++i)
    if (grid.assignment[i] == w) cells.push_back(static_cast<Eigen::Index>(i));
  WindowFit fit;
  fit.n_cells = cells.size();
  if (cells.size() < options.min_cells) return fit;
  std::vector<Location> locs;
  locs.reserve(cells.size());
  for (auto c : cells) locs.push_back(residuals.locations[static_cast<std::size_t>(c)]);
  const Eigen::MatrixXd block = residuals.values(cells, Eigen::all);
  return fit_window(block, locs, options);
}

}  // namespace

double Window::distance_to(const Location& s) const {
  const double dx = std::max({lon_min - s.lon, 0.0, s.lon - lon_max});
  const double dy = std::max({lat_min - s.lat, 0.0, s.lat - lat_max});
  return std::hypot(dx, dy);
}

std::size_t WindowGrid::locate(const Location& s) const {
  if (windows.empty()) throw Error(ErrorCode::EmptyInput, "window grid is empty");
  for (std::size_t w = 0; w < windows.size(); ++w)
    if (windows[w].contains(s)) return w;
  std::size_t best = 0;
  double best_d = windows[0].distance_to(s);
  for (std::size_t w = 1; w < windows.size(); ++w) {
    const double d = windows[w].distance_to(s);
    if (d < best_d) {
      best_d = d;
      best = w;
    }
  }
  return best;
}

WindowGrid partition(const SpaceTimeField& field, double size) {
  if (!(size > 0.0)) throw Error(ErrorCode::InvalidArgument, "window size must be positive");
  if (field.n() == 0) throw Error(ErrorCode::EmptyInput, "cannot partition an empty field");
  double lon0 = field.locations[0].lon, lon1 = lon0;
  double lat0 = field.locations[0].lat, lat1 = lat0;
  for (const auto& l : field.locations) {
    lon0 = std::min(lon0, l.lon);
    lon1 = std::max(lon1, l.lon);
    lat0 = std::min(lat0, l.lat);
    lat1 = std::max(lat1, l.lat);
  }
  auto count = [size](double span) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / size - 1e-9)));
  };
  const std::size_t ncols = count(lon1 - lon0);
  const std::size_t nrows = count(lat1 - lat0);

  WindowGrid grid;
  grid.window_size = size;
  grid.windows.reserve(ncols * nrows);
  for (std::size_t r = 0; r < nrows; ++r) {
    for (std::size_t c = 0; c < ncols; ++c) {
      const double x = lon0 + static_cast<double>(c) * size;
      const double y = lat0 + static_cast<double>(r) * size;
      grid.windows.push_back({x, x + size, y, y + size});
    }
  }
  grid.assignment.reserve(field.n());
  for (const auto& l : field.locations) grid.assignment.push_back(grid.locate(l));
  return grid;
}

double window_loglik(const Eigen::MatrixXd& residuals, std::span<const Location> locs, double rho,
                     double sigma2, double nu, double nugget) {
  if (static_cast<std::size_t>(residuals.rows()) != locs.size())
    throw Error(ErrorCode::GeometryMismatch, "residual rows must match locations");
  if (locs.size() < 2) throw Error(ErrorCode::TooFewCells, "window likelihood needs >= 2 cells");
  if (!(rho > 0.0) || !(sigma2 > 0.0))
    throw Error(ErrorCode::DomainError, "range and variance must be positive");
  return loglik_from_sqdist(residuals, squared_distances(locs), rho, sigma2, nu, nugget);
}

WindowFit fit_window(const Eigen::MatrixXd& residuals, std::span<const Location> locs,
                     const WindowFitOptions& options) {
  if (locs.size() < std::max<std::size_t>(options.min_cells, 2))
    throw Error(ErrorCode::TooFewCells, "window has " + std::to_string(locs.size()) +
                                            " cells, needs " +
                                            std::to_string(options.min_cells));
  if (static_cast<std::size_t>(residuals.rows()) != locs.size())
    throw Error(ErrorCode::GeometryMismatch, "residual rows must match locations");

  double lon0 = locs[0].lon, lon1 = lon0, lat0 = locs[0].lat, lat1 = lat0;
  for (const auto& l : locs) {
    lon0 = std::min(lon0, l.lon);
    lon1 = std::max(lon1, l.lon);
    lat0 = std::min(lat0, l.lat);
    lat1 = std::max(lat1, l.lat);
  }
  const double diag = std::max(std::hypot(lon1 - lon0, lat1 - lat0), 1e-12);
  const double var = std::max(sample_variance(residuals), 1e-300);
  const Eigen::MatrixXd sqdist = squared_distances(locs);
  // Below a quarter of the closest spacing the neighbour correlation is
  // negligible and the likelihood goes flat, so that is the range floor.
  Eigen::MatrixXd off = sqdist;
  off.diagonal().setConstant(std::numeric_limits<double>::infinity());
  const double min_spacing = std::sqrt(off.minCoeff());

  Objective obj{&residuals,
                &sqdist,
                options.nu,
                options.relative_nugget * var,
                {std::log(0.25 * min_spacing), std::log(1e-4 * var)},
                {std::log(20.0 * diag), std::log(1e4 * var)}};

  const double starts[3][2] = {{std::log(diag / 4.0), std::log(var)},
                               {std::log(diag / 10.0), std::log(var)},
                               {std::log(diag / 2.0), std::log(var / 2.0)}};
  SimplexResult best{};
  best.value = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    auto r = run_simplex(obj, s[0], s[1], options);
    if (r.value < best.value) best = r;
  }

  WindowFit fit;
  fit.n_cells = locs.size();
  bool at_bound = false;
  for (int i = 0; i < 2; ++i) {
    if (best.x[i] <= obj.lo[i] + 1e-3) {
      best.x[i] = obj.lo[i];
      at_bound = true;
    } else if (best.x[i] >= obj.hi[i] - 1e-3) {
      best.x[i] = obj.hi[i];
      at_bound = true;
    }
  }
  fit.rho_hat = std::exp(best.x[0]);
  fit.sigma2_hat = std::exp(best.x[1]);
  fit.loglik = -best.value;
  fit.converged = best.shrunk && !at_bound && std::isfinite(fit.loglik);
  return fit;
}

WindowEstimates fit_all_windows(const SpaceTimeField& residuals, const WindowGrid& grid,
                                const WindowFitOptions& options, int threads) {
  if (grid.assignment.size() != residuals.n())
    throw Error(ErrorCode::GeometryMismatch, "window grid built for a different field");
  WindowEstimates est;
  est.fits.resize(grid.windows.size());
  const int nthreads = threads > 0 ? threads : omp_get_max_threads();
  const auto nw = static_cast<long>(grid.windows.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(nthreads)
  for (long w = 0; w < nw; ++w)
    est.fits[static_cast<std::size_t>(w)] =
        fit_one(residuals, grid, static_cast<std::size_t>(w), options);
  fill_fallbacks(grid, est);
  return est;
}

SiteParams estimate_at(const WindowEstimates& estimates, const WindowGrid& grid,
                       const Location& s) {
  if (estimates.fits.empty() || estimates.fits.size() != grid.windows.size())
    throw Error(ErrorCode::EmptyInput, "no window estimates");
  const auto& fit = estimates.fits[grid.locate(s)];
  return {fit.rho_hat, fit.sigma2_hat};
}

void write_windows_csv(const std::filesystem::path& path, const WindowGrid& grid,
                       const WindowEstimates& estimates) {
  auto out = csv::open_for_write(path);
  out << "window_id,lon_min,lon_max,lat_min,lat_max,rho_hat,sigma2_hat,n_cells,converged,fallback\n";
  for (std::size_t w = 0; w < grid.windows.size(); ++w) {
    const auto& win = grid.windows[w];
    const auto& fit = estimates.fits[w];
    out << w << ',' << csv::format(win.lon_min) << ',' << csv::format(win.lon_max) << ','
        << csv::format(win.lat_min) << ',' << csv::format(win.lat_max) << ','
        << csv::format(fit.rho_hat) << ',' << csv::format(fit.sigma2_hat) << ',' << fit.n_cells
        << ',' << (fit.converged ? 1 : 0) << ',' << (fit.fallback ? 1 : 0) << '\n';
  }
}

WindowTable read_windows_csv(const std::filesystem::path& path) {
  auto table = csv::read(path);
  WindowTable out;
  const auto c_id = table.column("window_id");
  const auto c_x0 = table.column("lon_min");
  const auto c_x1 = table.column("lon_max");
  const auto c_y0 = table.column("lat_min");
  const auto c_y1 = table.column("lat_max");
  const auto c_rho = table.column("rho_hat");
  const auto c_s2 = table.column("sigma2_hat");
  const auto c_n = table.column("n_cells");
  const auto c_conv = table.column("converged");
  const auto c_fb = table.column("fallback");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const std::string ctx = path.string() + " row " + std::to_string(i + 1);
    if (csv::parse_long(r[c_id], ctx) != static_cast<long>(i))
      throw Error(ErrorCode::ParseError, ctx + ": window ids must be 0..n-1 in order");
    Window w{csv::parse_double(r[c_x0], ctx), csv::parse_double(r[c_x1], ctx),
             csv::parse_double(r[c_y0], ctx), csv::parse_double(r[c_y1], ctx)};
    WindowFit fit;
    fit.rho_hat = csv::parse_double(r[c_rho], ctx);
    fit.sigma2_hat = csv::parse_double(r[c_s2], ctx);
    if (!(fit.rho_hat > 0.0) || !(fit.sigma2_hat > 0.0))
      throw Error(ErrorCode::ParseError, ctx + ": estimates must be positive");
    fit.n_cells = static_cast<std::size_t>(csv::parse_long(r[c_n], ctx));
    fit.converged = csv::parse_long(r[c_conv], ctx) != 0;
    fit.fallback = csv::parse_long(r[c_fb], ctx) != 0;
    out.grid.windows.push_back(w);
    out.estimates.fits.push_back(fit);
  }
  if (out.grid.windows.empty()) throw Error(ErrorCode::EmptyInput, path.string() + ": no windows");
  const auto& w0 = out.grid.windows.front();
  out.grid.window_size = w0.lon_max - w0.lon_min;
  return out;
}

namespace reference {

WindowEstimates fit_all_windows(const SpaceTimeField& residuals, const WindowGrid& grid,
                                const WindowFitOptions& options) {
  if (grid.assignment.size() != residuals.n())
    throw Error(ErrorCode::GeometryMismatch, "window grid built for a different field");
  WindowEstimates est;
  for (std::size_t w = 0; w < grid.windows.size(); ++w)
    est.fits.push_back(fit_one(residuals, grid, w, options));
  fill_fallbacks(grid, est);
  return est;
}

}  // namespace reference

}  // namespace nsgp
