#include "gridbayes/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "gridbayes/error.hpp"

namespace gridbayes {

Rgb class_color(std::uint8_t cls) {
  switch (cls) {
    case 0: return {0, 200, 0};
    case 1: return {230, 210, 0};
    case 2: return {220, 0, 0};
    case 3: return {128, 128, 128};
  }
  throw ConfigError("no color for class " + std::to_string(cls));
}

double darkening_factor(double entropy, std::size_t classes) {
  if (classes < 2) throw ConfigError("darkening needs at least two classes");
  return std::clamp(1.0 - entropy / std::log(static_cast<double>(classes)), 0.0, 1.0);
}

std::vector<std::uint8_t> render_ppm(std::span<const std::uint8_t> pred, std::size_t rows,
                                     std::size_t cols, std::size_t classes,
                                     std::span<const double> entropy, std::size_t scale) {
  if (pred.size() != rows * cols) {
    throw ConfigError("render: " + std::to_string(pred.size()) + " predictions for a " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  if (!entropy.empty() && entropy.size() != pred.size()) {
    throw ConfigError("render: entropy map size " + std::to_string(entropy.size()) + " != " +
                      std::to_string(pred.size()));
  }
  if (scale == 0) throw ConfigError("render: scale must be >= 1");
  const std::size_t w = cols * scale, h = rows * scale;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + w * h * 3);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t r = rows - 1 - y / scale;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = r * cols + x / scale;
      Rgb px = class_color(pred[i]);
      if (!entropy.empty()) {
        const double f = darkening_factor(entropy[i], classes);
        for (auto& ch : px) ch = static_cast<std::uint8_t>(std::lround(ch * f));
      }
      out.insert(out.end(), px.begin(), px.end());
    }
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace gridbayes
