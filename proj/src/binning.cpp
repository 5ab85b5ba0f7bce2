#include "gcfpca/binning.hpp"

#include <cmath>
#include <string>

namespace gcfpca {

BinSet make_bins_absolute(int n_grid, int window, bool cyclic) {
  if (n_grid < 1) throw ValidationError("binning: n_grid must be positive");
  if (window < 1)
    throw ValidationError("binning: window must be at least 1 grid point, got " +
                          std::to_string(window));

  const int half = (window + 1) / 2;  // ceil(window / 2)
  if (2 * half + 1 > n_grid)
    throw ValidationError("binning: window of " + std::to_string(2 * half + 1) +
                          " points exceeds grid of " + std::to_string(n_grid) +
                          "; shrink the window fraction or refine the grid");

  BinSet set;
  set.n_grid = n_grid;
  set.half_width = half;
  set.cyclic = cyclic;
  set.bins.resize(n_grid);

  for (int k = 0; k < n_grid; ++k) {
    Bin& bin = set.bins[k];
    bin.center = k;
    bin.members.reserve(2 * half + 1);
    for (int d = -half; d <= half; ++d) {
      int idx = k + d;
      if (cyclic) {
        idx = ((idx % n_grid) + n_grid) % n_grid;
      } else if (idx < 0 || idx >= n_grid) {
        continue;  // truncate at the edges
      }
      bin.members.push_back(idx);
    }
  }
  return set;
}

BinSet make_bins(int n_grid, double w_fraction, bool cyclic) {
  if (!(w_fraction > 0.0) || w_fraction > 1.0)
    throw ValidationError("binning: window fraction must lie in (0, 1]");
  const int window = std::max(1, static_cast<int>(std::lround(w_fraction * n_grid)));
  return make_bins_absolute(n_grid, window, cyclic);
}

}  // namespace gcfpca
