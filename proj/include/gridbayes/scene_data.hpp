#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gridbayes {

enum class CellClass : std::uint8_t { kFree = 0, kOccupied = 1, kMoving = 2, kUnknown = 3 };

inline constexpr std::size_t kClassCount = 4;
std::string class_name(CellClass cls);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Rigid 2D transform of the ego vehicle in the world frame.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

Point2 to_world(const Pose2D& pose, Point2 local);
Point2 to_local(const Pose2D& pose, Point2 world);

struct RadarDetection {
  double x = 0.0;        // meters
  double y = 0.0;
  double doppler = 0.0;  // ego-motion compensated radial velocity, m/s
  double rcs = 0.0;      // dBsm
  double t_rel = 0.0;    // seconds before the reference time
  int sensor_id = 0;
};

// One radar scan, detections expressed in the ego frame at capture time.
struct RadarFrame {
  Pose2D ego_pose;
  double timestamp = 0.0;
  std::vector<RadarDetection> detections;
};

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

// Ego-centered grid. Rows run along x (row 0 is rear-most), columns along y
// (column 0 is the right-most, most negative y).
struct GridSpec {
  std::size_t rows = 64;  // c_l
  std::size_t cols = 64;  // c_w
  double cell_size = 0.5;

  double length() const { return static_cast<double>(rows) * cell_size; }
  double width() const { return static_cast<double>(cols) * cell_size; }
  std::size_t cell_count() const { return rows * cols; }
  std::optional<CellIndex> cell_of(double x, double y) const;
  Point2 cell_center(CellIndex cell) const;
  void validate() const;
};

enum Feature : std::size_t { kFeatureCount = 0, kFeatureDoppler = 1, kFeatureRcs = 2, kFeatureTime = 3 };
inline constexpr std::size_t kInputFeatures = 4;

// Feature-major: values[f * rows * cols + row * cols + col].
struct FeatureGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  FeatureGrid() = default;
  FeatureGrid(std::size_t r, std::size_t c)
      : rows(r), cols(c), values(kInputFeatures * r * c, 0.0f) {}
  float& at(std::size_t f, std::size_t row, std::size_t col) {
    return values[(f * rows + row) * cols + col];
  }
  float at(std::size_t f, std::size_t row, std::size_t col) const {
    return values[(f * rows + row) * cols + col];
  }
};

struct LabelGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> labels;  // CellClass values, row-major

  LabelGrid() = default;
  LabelGrid(std::size_t r, std::size_t c, CellClass fill = CellClass::kUnknown)
      : rows(r), cols(c), labels(r * c, static_cast<std::uint8_t>(fill)) {}
  CellClass at(std::size_t row, std::size_t col) const {
    return static_cast<CellClass>(labels[row * cols + col]);
  }
};

struct WeightGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> weights;  // row-major, each in [0, 1]

  WeightGrid() = default;
  WeightGrid(std::size_t r, std::size_t c) : rows(r), cols(c), weights(r * c, 0.0f) {}
  float at(std::size_t row, std::size_t col) const { return weights[row * cols + col]; }
};

struct FeatureRange {
  double min = 0.0;
  double max = 1.0;
};
using FeatureRanges = std::array<FeatureRange, kInputFeatures>;

struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  CellClass cls = CellClass::kFree;
};

// Expresses every frame's detections in the reference ego frame and
// concatenates them; t_rel becomes reference_time - frame timestamp.
std::vector<RadarDetection> ego_motion_compensate(std::span<const RadarFrame> frames,
                                                  const Pose2D& reference_pose,
                                                  double reference_time);

// Per-cell detection count, mean |doppler|, mean rcs and mean t_rel.
// Detections outside the grid are dropped; empty cells stay zero.
FeatureGrid grid_project(std::span<const RadarDetection> detections, const GridSpec& spec);

// clamp((v - min) / (max - min), 0, 1) per feature channel.
FeatureGrid normalize_features(const FeatureGrid& raw, const FeatureRanges& ranges);

// Majority vote over the projected lidar points of each cell. Ties go to
// moving, then occupied, then free. Cells without points are unknown.
LabelGrid label_grid(std::span<const LidarPoint> points, const GridSpec& spec);

struct CellCrossing {
  CellIndex cell;
  double t_enter = 0.0;  // parameter along the segment where the cell is entered
};

// Supercover traversal: every cell the segment a->b touches, clipped to the
// grid, in order along the segment. Both neighbours are reported when the
// segment passes exactly through a cell corner.
std::vector<CellCrossing> supercover_cells(Point2 a, Point2 b, const GridSpec& spec);

// For every cell: (# sensor->endpoint rays traversing it) / (# rays whose
// unobstructed continuation to the grid border would traverse it).
WeightGrid observability_weights(std::span<const Point2> sensors,
                                 std::span<const Point2> endpoints, const GridSpec& spec);

}  // namespace gridbayes
