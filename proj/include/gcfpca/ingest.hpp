#pragma once

#include <string>
#include <vector>

#include "gcfpca/data.hpp"

namespace gcfpca {

// Raw multi-day measurements for a cohort together with the shared grid the
// day curves were sampled on.
struct MultiDayData {
  std::vector<MultiDayProfile> profiles;
  VectorXd grid;
};

// Threshold each day's curve at `threshold` and reduce across valid days to a
// single binary profile per subject: a grid point is active when at least
// half of the days with a usable value there are active (so an even-count tie
// resolves to active). Non-finite raw values drop out of that grid point's
// denominator; a grid point with no usable day at all becomes a masked cell.
// Subjects without any valid day are skipped and reported through `warnings`
// when a sink is provided.
LongDataset binarize_profiles(const std::vector<MultiDayProfile>& profiles,
                              const VectorXd& grid, double threshold = 10.558,
                              std::vector<std::string>* warnings = nullptr);

// Long CSV with header `subject_id,s,value[,x1..xp]`, one row per observed
// (subject, grid point). Covariates are per subject and must repeat exactly
// across a subject's rows. Every subject must cover the full grid unless
// `missing_at_random` is set, in which case absent pairs (and empty or NA
// value fields) become masked cells.
LongDataset load_long_csv(const std::string& path, bool missing_at_random = false);

// Multi-day CSV with header `subject_id,day,s,value`, one row per
// (subject, day, grid point). Empty or NA values become unusable minutes.
// Every day present in the file is treated as valid; upstream quality flags
// should prune rows before this loader sees them.
MultiDayData load_multiday_csv(const std::string& path);

}  // namespace gcfpca
