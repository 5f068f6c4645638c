#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gridbayes/scene_data.hpp"
#include "json.hpp"

namespace gridbayes {

inline constexpr int kDatasetFormatVersion = 1;

// Ground-truth marker for an injected out-of-distribution object.
struct OodObject {
  std::string type;
  double x = 0.0;  // reference ego frame
  double y = 0.0;
  double radius = 0.0;
};

// One merged scan with its ground truth, as stored on disk.
struct SceneRecord {
  std::string id;
  Pose2D reference_pose;
  double reference_time = 0.0;
  std::vector<RadarFrame> frames;      // oldest first
  std::vector<Point2> radar_sensors;   // reference ego frame
  Point2 lidar_origin;
  std::vector<LidarPoint> lidar_points;  // object returns only
  std::vector<Point2> lidar_endpoints;   // one per ray, max range when nothing was hit
  LabelGrid labels;
  WeightGrid observability;
  std::vector<OodObject> ood_objects;
};

enum class Split { kTrain, kTest };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Manifest {
  int version = kDatasetFormatVersion;
  GridSpec grid;
  FeatureRanges ranges{};
  std::vector<std::string> class_names;
  std::size_t frame_count = 5;
  std::uint64_t seed = 0;
  nlohmann::json scenario;  // generator settings, informational
  std::vector<std::string> train;  // scene file names relative to the dataset dir
  std::vector<std::string> test;

  const std::vector<std::string>& split(Split s) const { return s == Split::kTrain ? train : test; }
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneRecord& scene);
SceneRecord scene_from_json(const nlohmann::json& j, const GridSpec& grid);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

void save_manifest(const Manifest& m, const std::filesystem::path& dir);
Manifest load_manifest(const std::filesystem::path& dir);
SceneRecord load_scene(const std::filesystem::path& path, const GridSpec& grid);

// Network-ready form of a scene.
struct Sample {
  std::string id;
  FeatureGrid features;  // normalized
  LabelGrid labels;
  WeightGrid weights;
  std::vector<OodObject> ood_objects;
};

FeatureGrid scene_features(const SceneRecord& scene, const Manifest& m);
Sample make_sample(const SceneRecord& scene, const Manifest& m);
std::vector<Sample> load_split(const std::filesystem::path& dir, const Manifest& m, Split split);

}  // namespace gridbayes
