#include "gridbayes/scene_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gridbayes/error.hpp"

namespace gridbayes {

std::string class_name(CellClass cls) {
  switch (cls) {
    case CellClass::kFree: return "free";
    case CellClass::kOccupied: return "occupied";
    case CellClass::kMoving: return "moving";
    case CellClass::kUnknown: return "unknown";
  }
  return "invalid";
}

Point2 to_world(const Pose2D& pose, Point2 local) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  return {pose.x + c * local.x - s * local.y, pose.y + s * local.x + c * local.y};
}

Point2 to_local(const Pose2D& pose, Point2 world) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const double dx = world.x - pose.x, dy = world.y - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

void GridSpec::validate() const {
  if (rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0) {
    throw ConfigError("grid dimensions must be even and positive, got " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw ConfigError("grid cell size must be positive");
  }
}

std::optional<CellIndex> GridSpec::cell_of(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
  const double r = std::floor((x + length() / 2.0) / cell_size);
  const double c = std::floor((y + width() / 2.0) / cell_size);
  if (r < 0.0 || c < 0.0 || r >= static_cast<double>(rows) || c >= static_cast<double>(cols)) {
    return std::nullopt;
  }
  return CellIndex{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
}

Point2 GridSpec::cell_center(CellIndex cell) const {
  return {(static_cast<double>(cell.row) + 0.5) * cell_size - length() / 2.0,
          (static_cast<double>(cell.col) + 0.5) * cell_size - width() / 2.0};
}

std::vector<RadarDetection> ego_motion_compensate(std::span<const RadarFrame> frames,
                                                  const Pose2D& reference_pose,
                                                  double reference_time) {
  std::vector<RadarDetection> merged;
  std::size_t total = 0;
  for (const RadarFrame& f : frames) total += f.detections.size();
  merged.reserve(total);
  for (const RadarFrame& f : frames) {
    const double age = std::max(0.0, reference_time - f.timestamp);
    for (const RadarDetection& d : f.detections) {
      const Point2 p = to_local(reference_pose, to_world(f.ego_pose, {d.x, d.y}));
      RadarDetection out = d;
      out.x = p.x;
      out.y = p.y;
      out.t_rel = age;
      merged.push_back(out);
    }
  }
  return merged;
}

FeatureGrid grid_project(std::span<const RadarDetection> detections, const GridSpec& spec) {
  spec.validate();
  FeatureGrid grid(spec.rows, spec.cols);
  // accumulate sums in double, then divide
  std::vector<double> acc(kInputFeatures * spec.cell_count(), 0.0);
  const std::size_t plane = spec.cell_count();
  for (const RadarDetection& d : detections) {
    const auto cell = spec.cell_of(d.x, d.y);
    if (!cell) continue;
    const std::size_t k = cell->row * spec.cols + cell->col;
    acc[kFeatureCount * plane + k] += 1.0;
    acc[kFeatureDoppler * plane + k] += std::abs(d.doppler);
    acc[kFeatureRcs * plane + k] += d.rcs;
    acc[kFeatureTime * plane + k] += d.t_rel;
  }
  for (std::size_t k = 0; k < plane; ++k) {
    const double n = acc[kFeatureCount * plane + k];
    if (n == 0.0) continue;
    grid.values[kFeatureCount * plane + k] = static_cast<float>(n);
    for (std::size_t f = 1; f < kInputFeatures; ++f) {
      grid.values[f * plane + k] = static_cast<float>(acc[f * plane + k] / n);
    }
  }
  return grid;
}

FeatureGrid normalize_features(const FeatureGrid& raw, const FeatureRanges& ranges) {
  for (std::size_t f = 0; f < kInputFeatures; ++f) {
    if (!(ranges[f].max > ranges[f].min)) {
      throw ConfigError("degenerate normalization range for feature " + std::to_string(f) +
                        ": [" + std::to_string(ranges[f].min) + ", " +
                        std::to_string(ranges[f].max) + "]");
    }
  }
  if (raw.values.size() != kInputFeatures * raw.rows * raw.cols) {
    throw ConfigError("feature grid has " + std::to_string(raw.values.size()) +
                      " values, expected " +
                      std::to_string(kInputFeatures * raw.rows * raw.cols));
  }
  FeatureGrid out(raw.rows, raw.cols);
  const std::size_t plane = raw.rows * raw.cols;
  for (std::size_t f = 0; f < kInputFeatures; ++f) {
    const double lo = ranges[f].min, span = ranges[f].max - ranges[f].min;
    for (std::size_t k = 0; k < plane; ++k) {
      double v = (static_cast<double>(raw.values[f * plane + k]) - lo) / span;
      if (!(v >= 0.0)) v = 0.0;  // also maps NaN to 0
      out.values[f * plane + k] = static_cast<float>(std::min(v, 1.0));
    }
  }
  return out;
}

LabelGrid label_grid(std::span<const LidarPoint> points, const GridSpec& spec) {
  spec.validate();
  std::vector<std::array<std::uint32_t, 3>> votes(spec.cell_count(), {0, 0, 0});
  for (const LidarPoint& p : points) {
    if (p.cls == CellClass::kUnknown) {
      throw ConfigError("lidar points must be free, occupied or moving");
    }
    const auto cell = spec.cell_of(p.x, p.y);
    if (!cell) continue;
    ++votes[cell->row * spec.cols + cell->col][static_cast<std::size_t>(p.cls)];
  }
  LabelGrid grid(spec.rows, spec.cols, CellClass::kUnknown);
  for (std::size_t k = 0; k < votes.size(); ++k) {
    const auto& v = votes[k];
    if (v[0] + v[1] + v[2] == 0) continue;
    CellClass best = CellClass::kMoving;
    std::uint32_t best_n = v[2];
    if (v[1] > best_n) { best = CellClass::kOccupied; best_n = v[1]; }
    if (v[0] > best_n) best = CellClass::kFree;
    grid.labels[k] = static_cast<std::uint8_t>(best);
  }
  return grid;
}

std::vector<CellCrossing> supercover_cells(Point2 a, Point2 b, const GridSpec& spec) {
  spec.validate();
  std::vector<CellCrossing> out;
  // grid coordinates in cell units: u along rows, v along columns
  const double u0 = (a.x + spec.length() / 2.0) / spec.cell_size;
  const double v0 = (a.y + spec.width() / 2.0) / spec.cell_size;
  const double du = (b.x - a.x) / spec.cell_size;
  const double dv = (b.y - a.y) / spec.cell_size;
  const double nu = static_cast<double>(spec.rows), nv = static_cast<double>(spec.cols);

  // Liang-Barsky clip against [0, nu] x [0, nv]
  double t0 = 0.0, t1 = 1.0;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    const double r = q / p;
    if (p < 0.0) {
      if (r > t1) return false;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return false;
      t1 = std::min(t1, r);
    }
    return true;
  };
  if (!clip(-du, u0) || !clip(du, nu - u0) || !clip(-dv, v0) || !clip(dv, nv - v0)) {
    return out;
  }
  if (t0 > t1) return out;

  const double su = u0 + t0 * du, sv = v0 + t0 * dv;
  long r = std::clamp(static_cast<long>(std::floor(su)), 0L, static_cast<long>(spec.rows) - 1);
  long c = std::clamp(static_cast<long>(std::floor(sv)), 0L, static_cast<long>(spec.cols) - 1);
  // a segment starting exactly on a boundary while moving backwards belongs
  // to the lower cell
  if (du < 0.0 && su == std::floor(su) && r > 0 && su <= static_cast<double>(r)) --r;
  if (dv < 0.0 && sv == std::floor(sv) && c > 0 && sv <= static_cast<double>(c)) --c;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int step_r = du > 0.0 ? 1 : (du < 0.0 ? -1 : 0);
  const int step_c = dv > 0.0 ? 1 : (dv < 0.0 ? -1 : 0);
  const double delta_r = step_r != 0 ? 1.0 / std::abs(du) : kInf;
  const double delta_c = step_c != 0 ? 1.0 / std::abs(dv) : kInf;
  double next_r = kInf, next_c = kInf;
  if (step_r > 0) next_r = (static_cast<double>(r + 1) - u0) / du;
  if (step_r < 0) next_r = (static_cast<double>(r) - u0) / du;
  if (step_c > 0) next_c = (static_cast<double>(c + 1) - v0) / dv;
  if (step_c < 0) next_c = (static_cast<double>(c) - v0) / dv;

  const long max_r = static_cast<long>(spec.rows), max_c = static_cast<long>(spec.cols);
  auto inside = [&](long rr, long cc) { return rr >= 0 && cc >= 0 && rr < max_r && cc < max_c; };
  auto push = [&](long rr, long cc, double t) {
    out.push_back({{static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)}, t});
  };

  double t = t0;
  push(r, c, t);
  constexpr double kCornerTol = 1e-12;
  while (true) {
    const double tn = std::min(next_r, next_c);
    if (tn > t1) break;
    if (std::abs(next_r - next_c) <= kCornerTol * std::max(1.0, tn)) {
      // passes through a corner: both edge neighbours are touched
      if (inside(r + step_r, c)) push(r + step_r, c, tn);
      if (inside(r, c + step_c)) push(r, c + step_c, tn);
      r += step_r;
      c += step_c;
      next_r += delta_r;
      next_c += delta_c;
    } else if (next_r < next_c) {
      r += step_r;
      next_r += delta_r;
    } else {
      c += step_c;
      next_c += delta_c;
    }
    t = tn;
    if (!inside(r, c)) break;
    push(r, c, t);
  }
  return out;
}

WeightGrid observability_weights(std::span<const Point2> sensors,
                                 std::span<const Point2> endpoints, const GridSpec& spec) {
  spec.validate();
  if (sensors.empty()) throw ConfigError("observability_weights needs at least one sensor");
  std::vector<std::uint32_t> traversed(spec.cell_count(), 0);
  std::vector<std::uint32_t> candidate(spec.cell_count(), 0);
  std::vector<std::uint32_t> last_seen(spec.cell_count(), 0);
  const double reach = 2.0 * std::hypot(spec.length(), spec.width());
  std::uint32_t ray_id = 0;

  for (const Point2& s : sensors) {
    for (const Point2& e : endpoints) {
      const double len = std::hypot(e.x - s.x, e.y - s.y);
      if (!(len > 0.0)) continue;
      // extend far enough to leave the grid from any start point inside reach
      const double k = std::max(1.0, (reach + len) / len);
      const Point2 far{s.x + (e.x - s.x) * k, s.y + (e.y - s.y) * k};
      ++ray_id;
      for (const CellCrossing& x : supercover_cells(s, far, spec)) {
        const std::size_t idx = x.cell.row * spec.cols + x.cell.col;
        if (last_seen[idx] == ray_id) continue;  // corner duplicates
        last_seen[idx] = ray_id;
        ++candidate[idx];
        if (x.t_enter * k <= 1.0 + 1e-12) ++traversed[idx];
      }
    }
  }
  WeightGrid out(spec.rows, spec.cols);
  for (std::size_t i = 0; i < out.weights.size(); ++i) {
    if (candidate[i] == 0) continue;
    out.weights[i] = std::clamp(
        static_cast<float>(static_cast<double>(traversed[i]) / candidate[i]), 0.0f, 1.0f);
  }
  return out;
}

}  // namespace gridbayes
