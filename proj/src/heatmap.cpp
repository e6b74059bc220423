#include "dpk/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dpk::heatmap {

namespace {

// compact viridis approximation via control-point interpolation
const double kStops[6][3] = {
    {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
    {0.164, 0.471, 0.558}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144},
};

void colormap(double t, unsigned char rgb[3]) {
  t = std::clamp(t, 0.0, 1.0) * 5.0;
  const int i = std::min(4, static_cast<int>(t));
  const double f = t - i;
  for (int c = 0; c < 3; ++c) {
    const double v = kStops[i][c] + f * (kStops[i + 1][c] - kStops[i][c]);
    rgb[c] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  }
}

}  // namespace

void write_heatmap_ppm(const std::string& path, std::vector<double> values, double lo, double hi,
                       int cell_px) {
  std::sort(values.begin(), values.end());
  const int n = static_cast<int>(values.size());
  const int side = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
  const int px = side * cell_px;
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << px << ' ' << px << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < px; ++y) {
    for (int x = 0; x < px; ++x) {
      const int idx = (y / cell_px) * side + (x / cell_px);
      unsigned char rgb[3] = {0, 0, 0};
      if (idx < n) colormap((values[idx] - lo) / span, rgb);
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
}

}  // namespace dpk::heatmap
