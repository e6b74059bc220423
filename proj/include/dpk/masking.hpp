#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpk/rng.hpp"

namespace dpk {

// Boolean mask over a token grid; true = position filled by the teacher.
struct MaskPattern {
  int rows = 0;
  int cols = 0;
  std::vector<bool> flags;  // row-major, length rows*cols

  int size() const { return rows * cols; }
  int realized_count() const;
  bool at(int r, int c) const { return flags[static_cast<size_t>(r) * cols + c]; }
};

// Exactly round(ratio*N) positions true, chosen by uniform shuffle.
MaskPattern random_mask(int rows, int cols, double ratio, Rng& rng);

// Union of rectangular blocks (>= 4 tokens each, aspect in [0.3, 1/0.3])
// grown until the target count is reached, then trimmed back to exactly
// round(ratio*N) by unmasking random boundary tokens. Grids too small for
// the minimum block fall back to random_mask.
MaskPattern block_mask(int rows, int cols, double ratio, Rng& rng);

// Deterministic: keeps the top-left position of every disjoint 2x2 cell,
// masks the rest. Boundary partial cells on odd grids keep only their
// (0,0) position.
MaskPattern grid_mask(int rows, int cols);

enum class ScheduleStrategy { kFixed, kExponential, kLinear, kCka, kCosine };

ScheduleStrategy parse_schedule_strategy(const std::string& name);

struct ScheduleState {
  ScheduleStrategy strategy = ScheduleStrategy::kFixed;
  double pi0 = 1.0;
  int epoch = 0;
  double last_valid_ratio = 0.5;  // initial fallback before any valid estimate
  double linear_decrement = 0.95;
  double decay_factor = 0.95;
};

// Resolves the mask ratio for the current step; similarity is required for
// the cka/cosine strategies (absent -> last_valid_ratio). The result is
// stored back as last_valid_ratio.
double schedule_ratio(ScheduleState& state, std::optional<double> similarity);

}  // namespace dpk
