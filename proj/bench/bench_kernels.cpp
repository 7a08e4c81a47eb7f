// Parallel kernels against their serial reference versions.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "nsgp/bhm.hpp"
#include "nsgp/covariance.hpp"
#include "nsgp/sim.hpp"
#include "nsgp/window_mle.hpp"

namespace {

using namespace nsgp;

std::vector<Location> random_sites(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<Location> s(n);
  for (auto& l : s) l = {u(rng), u(rng)};
  return s;
}

LocalParams random_params(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> r(2.0, 20.0), v(0.5, 5.0);
  LocalParams p;
  p.rho.resize(static_cast<Eigen::Index>(n));
  p.sigma2.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.rho.size(); ++i) {
    p.rho(i) = r(rng);
    p.sigma2(i) = v(rng);
  }
  return p;
}

void BM_CovParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const double nu = static_cast<double>(state.range(1)) / 10.0;
  const auto sites = random_sites(n, 1);
  const auto params = random_params(n, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(build_cov_matrix(sites, params, KernelConfig{nu, 0.0}, 0));
}

void BM_CovSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const double nu = static_cast<double>(state.range(1)) / 10.0;
  const auto sites = random_sites(n, 1);
  const auto params = random_params(n, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::build_cov_matrix(sites, params, KernelConfig{nu, 0.0}));
}

BENCHMARK(BM_CovParallel)->Args({200, 15})->Args({800, 15})->Args({200, 12})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CovSerial)->Args({200, 15})->Args({800, 15})->Args({200, 12})->Unit(benchmark::kMillisecond);

struct WindowSetup {
  SpaceTimeField field;
  WindowGrid grid;
  WindowSetup() {
    SimConfig c;
    c.grid_size = 24;
    field = simulate_reference(c, 3);
    grid = partition(field, c.window_size());
  }
};

void BM_WindowsParallel(benchmark::State& state) {
  static const WindowSetup setup;
  for (auto _ : state)
    benchmark::DoNotOptimize(fit_all_windows(setup.field, setup.grid, WindowFitOptions{}, 0));
}

void BM_WindowsSerial(benchmark::State& state) {
  static const WindowSetup setup;
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::fit_all_windows(setup.field, setup.grid, WindowFitOptions{}));
}

BENCHMARK(BM_WindowsParallel)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK(BM_WindowsSerial)->Unit(benchmark::kMillisecond)->Iterations(2);

struct PredictSetup {
  CoordinateCovariates covariates;
  WindowGrid grid;
  WindowEstimates estimates;
  FitProblem problem;
  PosteriorSamples samples;
  std::vector<PredictionPoint> points;
  PredictSetup() {
    SimConfig c;
    c.grid_size = 20;
    const auto ref = simulate_reference(c, 5);
    const auto truth = simulate_truth(c, 5);
    const auto design = sample_design(c, truth, 5);
    grid = partition(ref, c.window_size());
    estimates = fit_all_windows(ref, grid, WindowFitOptions{}, 0);
    problem = make_problem(design.training, covariates, estimates, grid);
    ModelSpec spec;
    spec.num_eofs = 0;
    spec.nu_fixed = 1.5;
    McmcOptions opt;
    opt.niter = 200;
    samples = run_mcmc(problem, spec, opt);
    points = design.test;
  }
};

void BM_PredictParallel(benchmark::State& state) {
  static const PredictSetup s;
  PredictOptions opt;
  for (auto _ : state)
    benchmark::DoNotOptimize(predict(s.samples, s.problem, s.covariates, s.estimates, s.grid, s.points, opt));
}

void BM_PredictSerial(benchmark::State& state) {
  static const PredictSetup s;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        reference::predict(s.samples, s.problem, s.covariates, s.estimates, s.grid, s.points));
}

BENCHMARK(BM_PredictParallel)->Unit(benchmark::kMillisecond)->Iterations(1);
BENCHMARK(BM_PredictSerial)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
