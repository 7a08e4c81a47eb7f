#include "nsgp/samples_io.hpp"

#include <sstream>

#include "nsgp/csv.hpp"
#include "nsgp/error.hpp"

namespace nsgp {
namespace {

std::string join_sites(const std::vector<Location>& sites) {
  std::string s;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (i) s += '|';
    s += csv::format(sites[i].lon) + ':' + csv::format(sites[i].lat);
  }
  return s;
}

std::vector<Location> split_sites(const std::string& text) {
  std::vector<Location> out;
  for (auto item : csv::split(text, '|')) {
    const auto parts = csv::split(item, ':');
    if (parts.size() != 2) throw Error(ErrorCode::ParseError, "malformed site list in samples file");
    out.push_back({csv::parse_double(parts[0], "site lon"), csv::parse_double(parts[1], "site lat")});
  }
  return out;
}

const std::string& require_meta(const Metadata& meta, const std::string& key) {
  const auto* v = find_meta(meta, key);
  if (!v) throw Error(ErrorCode::ParseError, "samples file lacks metadata '" + key + "'");
  return *v;
}

}  // namespace

const std::string* find_meta(const Metadata& meta, const std::string& key) {
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

void write_samples_csv(const std::filesystem::path& path, const PosteriorSamples& samples,
                       const Metadata& extra) {
  if (samples.draws.empty()) throw Error(ErrorCode::NoSamples, "no draws to write");
  const auto& first = samples.draws.front();
  const auto n_days = first.beta.rows(), dim = first.beta.cols(), n_sites = first.w.size();
  auto out = csv::open_for_write(path);
  Metadata meta = {
      {"seed", std::to_string(samples.seed)},
      {"niter", std::to_string(samples.niter)},
      {"burnin", std::to_string(samples.burnin)},
      {"stationary", samples.stationary ? "1" : "0"},
      {"acceptance_a1", csv::format(samples.acceptance.a1)},
      {"acceptance_b1", csv::format(samples.acceptance.b1)},
      {"acceptance_a2", csv::format(samples.acceptance.a2)},
      {"acceptance_b2", csv::format(samples.acceptance.b2)},
      {"acceptance_nu", csv::format(samples.acceptance.nu)},
  };
  std::string days;
  for (std::size_t i = 0; i < samples.days.size(); ++i)
    days += (i ? "|" : "") + std::to_string(samples.days[i]);
  meta.emplace_back("days", days);
  meta.emplace_back("sites", join_sites(samples.sites));
  meta.insert(meta.end(), extra.begin(), extra.end());
  for (const auto& [k, v] : meta) out << "# " << k << '=' << v << '\n';

  out << "iter,tau2,omega2,a1,b1,a2,b2,nu";
  for (Eigen::Index t = 0; t < n_days; ++t)
    for (Eigen::Index m = 0; m < dim; ++m) out << ",beta_" << t << '_' << m;
  for (Eigen::Index i = 0; i < n_sites; ++i) out << ",w_" << i;
  out << '\n';
  for (std::size_t d = 0; d < samples.draws.size(); ++d) {
    const auto& s = samples.draws[d];
    out << samples.burnin + static_cast<int>(d) << ',' << csv::format(s.tau2) << ','
        << csv::format(s.omega2) << ',' << csv::format(s.coef.a1) << ',' << csv::format(s.coef.b1)
        << ',' << csv::format(s.coef.a2) << ',' << csv::format(s.coef.b2) << ','
        << csv::format(s.nu);
    for (Eigen::Index t = 0; t < n_days; ++t)
      for (Eigen::Index m = 0; m < dim; ++m) out << ',' << csv::format(s.beta(t, m));
    for (Eigen::Index i = 0; i < n_sites; ++i) out << ',' << csv::format(s.w(i));
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

SamplesFile read_samples_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  SamplesFile file;
  for (const auto& c : table.comments) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) continue;
    file.meta.emplace_back(std::string(csv::trim(c.substr(0, eq))), std::string(csv::trim(c.substr(eq + 1))));
  }
  auto& s = file.samples;
  s.seed = std::stoull(require_meta(file.meta, "seed"));
  s.niter = static_cast<int>(csv::parse_long(require_meta(file.meta, "niter"), "niter"));
  s.burnin = static_cast<int>(csv::parse_long(require_meta(file.meta, "burnin"), "burnin"));
  s.stationary = require_meta(file.meta, "stationary") == "1";
  s.acceptance = {csv::parse_double(require_meta(file.meta, "acceptance_a1"), "acceptance"),
                  csv::parse_double(require_meta(file.meta, "acceptance_b1"), "acceptance"),
                  csv::parse_double(require_meta(file.meta, "acceptance_a2"), "acceptance"),
                  csv::parse_double(require_meta(file.meta, "acceptance_b2"), "acceptance"),
                  csv::parse_double(require_meta(file.meta, "acceptance_nu"), "acceptance")};
  for (auto d : csv::split(require_meta(file.meta, "days"), '|')) s.days.push_back(csv::parse_long(d, "days"));
  s.sites = split_sites(require_meta(file.meta, "sites"));

  const auto n_days = static_cast<Eigen::Index>(s.days.size());
  const auto n_sites = static_cast<Eigen::Index>(s.sites.size());
  const auto fixed = Eigen::Index{8};
  const auto cols = static_cast<Eigen::Index>(table.header.size());
  if (n_days == 0 || (cols - fixed - n_sites) % n_days != 0 || cols - fixed - n_sites <= 0)
    throw Error(ErrorCode::ParseError, path.string() + ": column count does not match sites/days");
  const Eigen::Index dim = (cols - fixed - n_sites) / n_days;
  const std::string ctx = path.string();
  for (const auto& row : table.rows) {
    McmcState st;
    st.tau2 = csv::parse_double(row[1], ctx);
    st.omega2 = csv::parse_double(row[2], ctx);
    st.coef = {csv::parse_double(row[3], ctx), csv::parse_double(row[4], ctx),
               csv::parse_double(row[5], ctx), csv::parse_double(row[6], ctx)};
    st.nu = csv::parse_double(row[7], ctx);
    st.beta.resize(n_days, dim);
    std::size_t c = 8;
    for (Eigen::Index t = 0; t < n_days; ++t)
      for (Eigen::Index m = 0; m < dim; ++m) st.beta(t, m) = csv::parse_double(row[c++], ctx);
    st.w.resize(n_sites);
    for (Eigen::Index i = 0; i < n_sites; ++i) st.w(i) = csv::parse_double(row[c++], ctx);
    s.draws.push_back(std::move(st));
  }
  if (s.draws.empty()) throw Error(ErrorCode::NoSamples, path.string() + ": no draws");
  return file;
}

void write_predictions_csv(const std::filesystem::path& path, const PredictiveSummary& summary) {
  auto out = csv::open_for_write(path);
  out << "day,lon,lat,mean,sd,lo95,hi95\n";
  for (std::size_t i = 0; i < summary.points.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const auto& p = summary.points[i];
    out << p.day << ',' << csv::format(p.site.lon) << ',' << csv::format(p.site.lat) << ','
        << csv::format(summary.mean(k)) << ',' << csv::format(summary.sd(k)) << ','
        << csv::format(summary.lower95(k)) << ',' << csv::format(summary.upper95(k)) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

PredictiveSummary read_predictions_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cd = t.column("day"), clon = t.column("lon"), clat = t.column("lat"),
             cm = t.column("mean"), cs = t.column("sd"), cl = t.column("lo95"), ch = t.column("hi95");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw Error(ErrorCode::EmptyInput, path.string() + ": no predictions");
  PredictiveSummary s;
  s.mean.resize(n);
  s.sd.resize(n);
  s.lower95.resize(n);
  s.upper95.resize(n);
  const std::string ctx = path.string();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    s.points.push_back({csv::parse_long(r[cd], ctx),
                        {csv::parse_double(r[clon], ctx), csv::parse_double(r[clat], ctx)}});
    s.mean(i) = csv::parse_double(r[cm], ctx);
    s.sd(i) = csv::parse_double(r[cs], ctx);
    s.lower95(i) = csv::parse_double(r[cl], ctx);
    s.upper95(i) = csv::parse_double(r[ch], ctx);
  }
  s.at_training_site.assign(static_cast<std::size_t>(n), false);
  return s;
}

std::vector<PredictionPoint> read_points_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cd = t.column("day"), clon = t.column("lon"), clat = t.column("lat");
  std::vector<PredictionPoint> points;
  const std::string ctx = path.string();
  for (const auto& r : t.rows)
    points.push_back({csv::parse_long(r[cd], ctx),
                      {csv::parse_double(r[clon], ctx), csv::parse_double(r[clat], ctx)}});
  if (points.empty()) throw Error(ErrorCode::EmptyInput, path.string() + ": no points");
  return points;
}

}  // namespace nsgp
