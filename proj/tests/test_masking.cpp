#include <queue>

#include "doctest.h"
#include "dpk/masking.hpp"

using dpk::MaskPattern;

namespace {

// Flood-fill over masked cells; returns the largest connected component.
int largest_component(const MaskPattern& m) {
  std::vector<bool> seen(m.size(), false);
  int best = 0;
  for (int start = 0; start < m.size(); ++start) {
    if (!m.flags[start] || seen[start]) continue;
    int count = 0;
    std::queue<int> q;
    q.push(start);
    seen[start] = true;
    while (!q.empty()) {
      const int cur = q.front();
      q.pop();
      ++count;
      const int r = cur / m.cols, c = cur % m.cols;
      const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= m.rows || nb[1] < 0 || nb[1] >= m.cols) continue;
        const int id = nb[0] * m.cols + nb[1];
        if (m.flags[id] && !seen[id]) {
          seen[id] = true;
          q.push(id);
        }
      }
    }
    best = std::max(best, count);
  }
  return best;
}

}  // namespace

TEST_CASE("random_mask exact counts") {
  dpk::Rng rng(1);
  CHECK(dpk::random_mask(14, 14, 0.75, rng).realized_count() == 147);
  CHECK(dpk::random_mask(14, 14, 0.0, rng).realized_count() == 0);
  CHECK(dpk::random_mask(14, 14, 1.0, rng).realized_count() == 196);
}

TEST_CASE("random_mask exact count over random ratios and grids") {
  dpk::Rng rng(2);
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 20);
  for (int t = 0; t < 500; ++t) {
    const int r = dim(rng), c = dim(rng);
    const double ratio = ur(rng);
    auto m = dpk::random_mask(r, c, ratio, rng);
    CHECK(m.realized_count() == static_cast<int>(std::lround(ratio * r * c)));
  }
}

TEST_CASE("random_mask per-position inclusion frequency is uniform") {
  dpk::Rng rng(3);
  const int n = 16;
  const double ratio = 0.5;
  const int draws = 10000;
  std::vector<int> hits(n, 0);
  for (int t = 0; t < draws; ++t) {
    auto m = dpk::random_mask(4, 4, ratio, rng);
    for (int i = 0; i < n; ++i)
      if (m.flags[i]) ++hits[i];
  }
  const double sigma = std::sqrt(draws * ratio * (1 - ratio));
  for (int i = 0; i < n; ++i) {
    CHECK(std::abs(hits[i] - draws * ratio) < 3.0 * sigma);
  }
}

TEST_CASE("block_mask trivial and exact-count cases") {
  dpk::Rng rng(4);
  CHECK(dpk::block_mask(8, 8, 0.0, rng).realized_count() == 0);
  CHECK(dpk::block_mask(8, 8, 1.0, rng).realized_count() == 64);
  for (int t = 0; t < 100; ++t) {
    std::uniform_real_distribution<double> ur(0.0, 1.0);
    const double ratio = ur(rng);
    CHECK(dpk::block_mask(8, 8, ratio, rng).realized_count() ==
          static_cast<int>(std::lround(ratio * 64)));
  }
}

TEST_CASE("block_mask produces contiguous structure") {
  dpk::Rng rng(5);
  auto m = dpk::block_mask(8, 8, 0.5, rng);
  CHECK(m.realized_count() == 32);
  // at least one 4-token block survives trimming
  CHECK(largest_component(m) >= 4);
}

TEST_CASE("block_mask falls back to random for tiny grids") {
  dpk::Rng rng(6);
  auto m = dpk::block_mask(1, 3, 2.0 / 3.0, rng);
  CHECK(m.realized_count() == 2);
}

TEST_CASE("grid_mask single cell and tiling") {
  auto m2 = dpk::grid_mask(2, 2);
  CHECK(m2.flags == std::vector<bool>{false, true, true, true});
  auto m4 = dpk::grid_mask(4, 4);
  CHECK(m4.realized_count() == 12);
  CHECK_FALSE(m4.at(0, 0));
  CHECK_FALSE(m4.at(0, 2));
  CHECK_FALSE(m4.at(2, 0));
  CHECK_FALSE(m4.at(2, 2));
  CHECK(dpk::grid_mask(14, 14).realized_count() == 147);
}

TEST_CASE("grid_mask deterministic and defined on odd grids") {
  CHECK(dpk::grid_mask(5, 7).flags == dpk::grid_mask(5, 7).flags);
  auto m = dpk::grid_mask(3, 3);
  // kept positions are exactly the even-even ones
  int kept = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!m.at(r, c)) {
        ++kept;
        CHECK(r % 2 == 0);
        CHECK(c % 2 == 0);
      }
  CHECK(kept == 4);
}

TEST_CASE("schedule_ratio strategies") {
  dpk::ScheduleState st;
  st.strategy = dpk::ScheduleStrategy::kExponential;
  st.pi0 = 1.0;
  st.epoch = 0;
  CHECK(dpk::schedule_ratio(st, std::nullopt) == 1.0);
  st.epoch = 14;
  CHECK(dpk::schedule_ratio(st, std::nullopt) == doctest::Approx(std::pow(0.95, 14)).epsilon(1e-12));

  st.strategy = dpk::ScheduleStrategy::kLinear;
  st.epoch = 2;
  CHECK(dpk::schedule_ratio(st, std::nullopt) == 0.0);
  st.epoch = 0;
  CHECK(dpk::schedule_ratio(st, std::nullopt) == 1.0);

  st.strategy = dpk::ScheduleStrategy::kFixed;
  st.pi0 = 0.35;
  CHECK(dpk::schedule_ratio(st, std::nullopt) == 0.35);

  st.strategy = dpk::ScheduleStrategy::kCka;
  CHECK(dpk::schedule_ratio(st, 0.35) == doctest::Approx(0.65));
  // missing similarity falls back to the last valid ratio
  CHECK(dpk::schedule_ratio(st, std::nullopt) == doctest::Approx(0.65));
}

TEST_CASE("exponential schedule strictly decreasing, always in [0,1]") {
  dpk::ScheduleState st;
  st.strategy = dpk::ScheduleStrategy::kExponential;
  st.pi0 = 1.0;
  double prev = 2.0;
  for (int e = 0; e < 50; ++e) {
    st.epoch = e;
    const double r = dpk::schedule_ratio(st, std::nullopt);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("masks reproducible from the same stream seed") {
  dpk::Rng a(42), b(42);
  CHECK(dpk::random_mask(6, 6, 0.4, a).flags == dpk::random_mask(6, 6, 0.4, b).flags);
  dpk::Rng c(42), d(42);
  CHECK(dpk::block_mask(6, 6, 0.4, c).flags == dpk::block_mask(6, 6, 0.4, d).flags);
}
