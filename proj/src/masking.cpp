#include "dpk/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpk/errors.hpp"
#include "dpk/similarity.hpp"

namespace dpk {

int MaskPattern::realized_count() const {
  return static_cast<int>(std::count(flags.begin(), flags.end(), true));
}

namespace {

int target_count(int n, double ratio) {
  return static_cast<int>(std::lround(ratio * n));
}

}  // namespace

MaskPattern random_mask(int rows, int cols, double ratio, Rng& rng) {
  if (rows < 1 || cols < 1) {
    throw SizeError("random_mask: empty grid");
  }
  const int n = rows * cols;
  const int count = target_count(n, ratio);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  MaskPattern m{rows, cols, std::vector<bool>(n, false)};
  for (int i = 0; i < count; ++i) {
    m.flags[order[i]] = true;
  }
  return m;
}

namespace {

// True cells adjacent to an unmasked cell or the grid edge.
std::vector<int> mask_boundary(const MaskPattern& m) {
  std::vector<int> boundary;
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (!m.at(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == m.rows - 1 || c == m.cols - 1;
      const bool open = (r > 0 && !m.at(r - 1, c)) || (r < m.rows - 1 && !m.at(r + 1, c)) ||
                        (c > 0 && !m.at(r, c - 1)) || (c < m.cols - 1 && !m.at(r, c + 1));
      if (edge || open) {
        boundary.push_back(r * m.cols + c);
      }
    }
  }
  return boundary;
}

}  // namespace

MaskPattern block_mask(int rows, int cols, double ratio, Rng& rng) {
  constexpr int kMinBlockTokens = 4;
  constexpr double kMinAspect = 0.3;
  if (rows < 2 || cols < 2) {
    return random_mask(rows, cols, ratio, rng);  // too small for blocks
  }
  const int n = rows * cols;
  const int count = target_count(n, ratio);
  MaskPattern m{rows, cols, std::vector<bool>(n, false)};
  if (count == 0) return m;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int realized = 0;
  int stall = 0;
  while (realized < count && stall < 10 * n) {
    const int remaining = count - realized;
    const int max_area = std::max(kMinBlockTokens, std::min(n / 2, remaining + kMinBlockTokens));
    std::uniform_int_distribution<int> area_dist(kMinBlockTokens, max_area);
    const int area = area_dist(rng);
    const double aspect = std::exp(std::log(kMinAspect) +
                                   unit(rng) * (std::log(1.0 / kMinAspect) - std::log(kMinAspect)));
    int bh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 2, rows);
    int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 2, cols);
    std::uniform_int_distribution<int> row_dist(0, rows - bh);
    std::uniform_int_distribution<int> col_dist(0, cols - bw);
    const int r0 = row_dist(rng);
    const int c0 = col_dist(rng);
    int added = 0;
    for (int r = r0; r < r0 + bh; ++r) {
      for (int c = c0; c < c0 + bw; ++c) {
        if (!m.flags[static_cast<size_t>(r) * cols + c]) {
          m.flags[static_cast<size_t>(r) * cols + c] = true;
          ++added;
        }
      }
    }
    realized += added;
    stall = added == 0 ? stall + 1 : 0;
  }
  // Degenerate aspect/grid combinations may stall short of the target;
  // top up with uniform draws.
  while (realized < count) {
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int idx = pick(rng);
    if (!m.flags[idx]) {
      m.flags[idx] = true;
      ++realized;
    }
  }
  // Trim overshoot from the mask boundary so the interior stays blocky.
  while (realized > count) {
    std::vector<int> boundary = mask_boundary(m);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(boundary.size()) - 1);
    m.flags[boundary[pick(rng)]] = false;
    --realized;
  }
  return m;
}

MaskPattern grid_mask(int rows, int cols) {
  if (rows < 1 || cols < 1) {
    throw SizeError("grid_mask: empty grid");
  }
  MaskPattern m{rows, cols, std::vector<bool>(static_cast<size_t>(rows) * cols, false)};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // Keep the (0,0) position of each 2x2 cell, mask the rest; partial
      // boundary cells follow the same rule.
      m.flags[static_cast<size_t>(r) * cols + c] = !(r % 2 == 0 && c % 2 == 0);
    }
  }
  return m;
}

ScheduleStrategy parse_schedule_strategy(const std::string& name) {
  if (name == "fixed") return ScheduleStrategy::kFixed;
  if (name == "exponential") return ScheduleStrategy::kExponential;
  if (name == "linear") return ScheduleStrategy::kLinear;
  if (name == "cka") return ScheduleStrategy::kCka;
  if (name == "cosine") return ScheduleStrategy::kCosine;
  throw ConfigError("unknown schedule strategy: " + name);
}

double schedule_ratio(ScheduleState& state, std::optional<double> similarity) {
  double ratio = state.last_valid_ratio;
  switch (state.strategy) {
    case ScheduleStrategy::kFixed:
      ratio = state.pi0;
      break;
    case ScheduleStrategy::kExponential:
      ratio = std::clamp(state.pi0 * std::pow(state.decay_factor, state.epoch), 0.0, 1.0);
      break;
    case ScheduleStrategy::kLinear:
      ratio = std::clamp(state.pi0 - state.epoch * state.linear_decrement, 0.0, 1.0);
      break;
    case ScheduleStrategy::kCka:
    case ScheduleStrategy::kCosine:
      if (similarity.has_value()) {
        ratio = dynamic_ratio(*similarity);
      }
      break;
  }
  state.last_valid_ratio = std::clamp(ratio, 0.0, 1.0);
  return state.last_valid_ratio;
}

}  // namespace dpk
