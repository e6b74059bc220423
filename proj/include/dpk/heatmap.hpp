#pragma once

#include <string>
#include <vector>

namespace dpk::heatmap {

// Ranks the values, reshapes them into a near-square grid, and writes a
// viridis-colored binary PPM. Values are clamped to [lo, hi].
void write_heatmap_ppm(const std::string& path, std::vector<double> values, double lo = 0.0,
                       double hi = 1.0, int cell_px = 8);

}  // namespace dpk::heatmap
