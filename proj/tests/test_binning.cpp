#include <set>
#include <vector>

#include <doctest.h>

#include "gcfpca/binning.hpp"
#include "gcfpca/errors.hpp"

using gcfpca::BinSet;
using gcfpca::make_bins;
using gcfpca::make_bins_absolute;

namespace {

// Grid indices are 0-based in the API; the reference sets below are written
// 1-based to match how windows are usually described, then shifted.
std::vector<int> shifted(std::initializer_list<int> one_based) {
  std::vector<int> out;
  for (int v : one_based) out.push_back(v - 1);
  return out;
}

}  // namespace

TEST_CASE("five-percent window at an interior center") {
  const BinSet bins = make_bins(100, 0.05, false);
  REQUIRE(bins.bins.size() == 100);
  CHECK(bins.half_width == 3);  // ceil(5/2)
  // center 50 (1-based) -> members 47..53
  CHECK(bins.bins[49].members == shifted({47, 48, 49, 50, 51, 52, 53}));
  CHECK(bins.bins[49].center == 49);
}

TEST_CASE("cyclic window wraps at the first grid point") {
  const BinSet bins = make_bins(100, 0.05, true);
  CHECK(bins.bins[0].members == shifted({98, 99, 100, 1, 2, 3, 4}));
}

TEST_CASE("non-cyclic window truncates at the first grid point") {
  const BinSet bins = make_bins(100, 0.05, false);
  CHECK(bins.bins[0].members == shifted({1, 2, 3, 4}));
}

TEST_CASE("every center is a member of its own bin and the union covers the grid") {
  for (bool cyclic : {false, true}) {
    const BinSet bins = make_bins(60, 0.10, cyclic);
    std::set<int> seen;
    for (const auto& bin : bins.bins) {
      bool self = false;
      for (int m : bin.members) {
        seen.insert(m);
        if (m == bin.center) self = true;
      }
      CHECK(self);
    }
    CHECK(seen.size() == 60);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 59);
  }
}

TEST_CASE("member counts: constant when cyclic, bounded when truncated") {
  const int K = 100;
  const BinSet cyc = make_bins(K, 0.05, true);
  const int full = 2 * cyc.half_width + 1;
  for (const auto& bin : cyc.bins) CHECK(static_cast<int>(bin.members.size()) == full);

  const BinSet lin = make_bins(K, 0.05, false);
  for (const auto& bin : lin.bins) {
    const int n = static_cast<int>(bin.members.size());
    CHECK(n >= lin.half_width + 1);
    CHECK(n <= 2 * lin.half_width + 1);
  }
  // members stay inside the grid and strictly increase
  for (const auto& bin : lin.bins)
    for (std::size_t j = 0; j < bin.members.size(); ++j) {
      CHECK(bin.members[j] >= 0);
      CHECK(bin.members[j] < K);
      if (j > 0) CHECK(bin.members[j] > bin.members[j - 1]);
    }
}

TEST_CASE("window covering the whole domain is rejected") {
  CHECK_THROWS_AS(make_bins(10, 1.0, true), gcfpca::ValidationError);
  CHECK_THROWS_AS(make_bins_absolute(10, 11, false), gcfpca::ValidationError);
  CHECK_THROWS_AS(make_bins(0, 0.5, false), gcfpca::ValidationError);
  CHECK_THROWS_AS(make_bins(10, 0.0, false), gcfpca::ValidationError);
}

TEST_CASE("fractional width resolves to at least one point") {
  // round(0.004 * 100) = 0 would make an empty window; the plan keeps the
  // center itself.
  const BinSet bins = make_bins(100, 0.004, false);
  CHECK(bins.half_width >= 0);
  for (const auto& bin : bins.bins) CHECK(!bin.members.empty());
}

TEST_CASE("plans are deterministic and order-stable") {
  const BinSet a = make_bins(73, 0.07, true);
  const BinSet b = make_bins(73, 0.07, true);
  REQUIRE(a.bins.size() == b.bins.size());
  for (std::size_t k = 0; k < a.bins.size(); ++k) {
    CHECK(a.bins[k].center == static_cast<int>(k));
    CHECK(a.bins[k].members == b.bins[k].members);
  }
}

TEST_CASE("absolute and fractional construction agree") {
  const BinSet frac = make_bins(200, 0.05, true);  // w = 10
  const BinSet abs = make_bins_absolute(200, 10, true);
  REQUIRE(frac.bins.size() == abs.bins.size());
  CHECK(frac.half_width == abs.half_width);
  for (std::size_t k = 0; k < frac.bins.size(); ++k)
    CHECK(frac.bins[k].members == abs.bins[k].members);
}
