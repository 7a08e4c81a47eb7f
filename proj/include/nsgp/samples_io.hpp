#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nsgp/bhm.hpp"

namespace nsgp {

// Ordered key=value pairs carried as '#' comment lines in the samples file.
using Metadata = std::vector<std::pair<std::string, std::string>>;

const std::string* find_meta(const Metadata& meta, const std::string& key);

// One row per retained draw: iter,tau2,omega2,a1,b1,a2,b2,nu,beta_<t>_<m>...,w_<i>...
// Sites, days, seed, counts and acceptance rates go into the metadata block.
void write_samples_csv(const std::filesystem::path& path, const PosteriorSamples& samples,
                       const Metadata& extra = {});

struct SamplesFile {
  PosteriorSamples samples;
  Metadata meta;  // everything, including the keys written by write_samples_csv
};
SamplesFile read_samples_csv(const std::filesystem::path& path);

// `day,lon,lat,mean,sd,lo95,hi95`
void write_predictions_csv(const std::filesystem::path& path, const PredictiveSummary& summary);
PredictiveSummary read_predictions_csv(const std::filesystem::path& path);

// `day,lon,lat[,...]`; extra columns are ignored.
std::vector<PredictionPoint> read_points_csv(const std::filesystem::path& path);

}  // namespace nsgp
