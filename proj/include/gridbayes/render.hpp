#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gridbayes {

using Rgb = std::array<std::uint8_t, 3>;

// free green, occupied yellow, moving red, unknown gray
Rgb class_color(std::uint8_t cls);

// 1 - H / ln C, clamped to [0, 1].
double darkening_factor(double entropy, std::size_t classes);

// Binary PPM (P6) of a predicted class grid. Grid row 0 (rear-most) lands on
// the bottom image row. With `entropy`, every cell is scaled by its
// darkening factor. Each cell becomes a scale x scale block.
std::vector<std::uint8_t> render_ppm(std::span<const std::uint8_t> pred, std::size_t rows,
                                     std::size_t cols, std::size_t classes,
                                     std::span<const double> entropy = {}, std::size_t scale = 1);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace gridbayes
