#pragma once

#include <vector>

#include "gcfpca/errors.hpp"

namespace gcfpca {

// One local estimation window: the grid index it is centered on plus the
// indices pooled into its fit. Non-cyclic windows are truncated at the domain
// edges; cyclic windows wrap around.
struct Bin {
  int center = 0;
  std::vector<int> members;
};

struct BinSet {
  int n_grid = 0;
  int half_width = 0;
  bool cyclic = false;
  std::vector<Bin> bins;  // one per grid index, in grid order
};

// Windows from a fractional width: the nominal window is round(w_fraction * K)
// points, symmetrized to center +/- ceil(w/2).
BinSet make_bins(int n_grid, double w_fraction, bool cyclic);

// Windows from an absolute nominal width in grid points.
BinSet make_bins_absolute(int n_grid, int window, bool cyclic);

}  // namespace gcfpca
