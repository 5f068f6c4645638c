#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridbayes/dataset.hpp"
#include "gridbayes/rng.hpp"
#include "gridbayes/scene_data.hpp"
#include "json.hpp"

namespace gridbayes {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CountRange {
  int lo = 0;
  int hi = 0;
};

struct RcsModel {
  double mean = 0.0;
  double stddev = 1.0;
};

struct RadarMount {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // boresight, radians
};

struct ScenarioConfig {
  std::uint64_t seed = 42;
  GridSpec grid;
  std::size_t frame_count = 5;
  double frame_dt = 0.1;  // seconds between radar scans

  Range ego_speed{0.0, 10.0};
  Range ego_yaw_rate{-0.15, 0.15};
  double world_extent = 22.0;  // objects are placed within +-extent meters
  double keep_out_x = 5.0;     // clear box around the ego at the reference time
  double keep_out_y = 2.5;

  CountRange walls{1, 3};
  Range wall_length{5.0, 18.0};
  Range wall_thickness{0.3, 0.6};
  CountRange boxes{5, 12};
  Range box_length{1.0, 4.8};
  Range box_width{0.8, 2.0};
  CountRange cars{5, 9};
  Range car_speed{3.0, 12.0};
  CountRange pedestrians{2, 5};
  Range pedestrian_speed{0.8, 2.0};
  double clutter_rate = 3.0;  // mean clutter detections per sensor and scan

  std::vector<RadarMount> radar_mounts;  // empty -> four ego corners
  double radar_fov = 150.0;              // degrees
  double radar_angular_resolution = 1.0;
  double radar_max_range = 30.0;
  double detection_probability = 0.5;
  double position_sigma = 0.15;
  double doppler_sigma = 0.3;
  RcsModel rcs_wall{6.0, 3.0};
  RcsModel rcs_box{10.0, 3.0};
  RcsModel rcs_car{10.0, 3.0};
  RcsModel rcs_pedestrian{-3.0, 3.0};
  RcsModel rcs_clutter{-8.0, 4.0};

  double lidar_angular_resolution = 1.0;  // degrees
  double lidar_max_range = 30.0;
  double lidar_ground_range = 12.0;   // free-space returns stop here
  double lidar_ground_spacing = 0.4;  // meters between free points on a ray
  std::size_t lidar_layers = 3;       // points per object hit
  double lidar_dropout = 0.02;

  // Out-of-distribution injection; only ever applied to test scenes.
  bool ood_enabled = true;
  std::string ood_type = "bollard";
  int ood_count = 2;
  Range ood_radius{0.12, 0.15};
  Range ood_distance{3.0, 10.0};
  RcsModel rcs_ood{25.0, 2.0};

  std::vector<RadarMount> mounts() const;
  void validate() const;
};

nlohmann::json to_json(const ScenarioConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ScenarioConfig scenario_from_json(const nlohmann::json& j);

enum class ShapeKind { kBox, kDisc };
enum class ObjectClass { kWall, kBox, kCar, kPedestrian, kOod };

struct WorldObject {
  ShapeKind shape = ShapeKind::kBox;
  ObjectClass cls = ObjectClass::kBox;
  double x = 0.0;  // center at the reference time, world frame
  double y = 0.0;
  double heading = 0.0;
  double half_length = 0.5;  // box
  double half_width = 0.5;
  double radius = 0.5;  // disc
  double vx = 0.0;
  double vy = 0.0;
  bool lidar_visible = true;
};

struct SceneTruth {
  std::vector<WorldObject> objects;
  double ego_speed = 0.0;
  double ego_yaw_rate = 0.0;
  std::vector<Pose2D> ego_poses;  // one per frame, world frame; last is the reference
  std::vector<double> timestamps;
};

// Distance along the ray to the first surface of `obj` at time `t`, or +inf.
double ray_hit(const WorldObject& obj, double t, Point2 origin, double angle);

SceneTruth sample_world(const ScenarioConfig& cfg, bool training, RngStream& rng);
SceneRecord render_scene(const ScenarioConfig& cfg, const SceneTruth& truth, RngStream& rng,
                         const std::string& id);
SceneRecord generate_scene(const ScenarioConfig& cfg, bool training, RngStream& rng,
                           const std::string& id);

struct DatasetSummary {
  std::size_t train_scenes = 0;
  std::size_t test_scenes = 0;
  FeatureRanges ranges{};
};

// Scene i of a split uses substream (seed, split, i), so output does not
// depend on `threads`.
DatasetSummary generate_dataset(const ScenarioConfig& cfg, std::size_t n_train, std::size_t n_test,
                                const std::filesystem::path& out_dir, std::size_t threads = 1);

}  // namespace gridbayes
