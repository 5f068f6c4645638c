#include "gridbayes/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gridbayes/error.hpp"

namespace gridbayes {

using nlohmann::json;

namespace {

json pose_json(const Pose2D& p) { return json{{"x", p.x}, {"y", p.y}, {"yaw", p.yaw}}; }

Pose2D pose_from(const json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("yaw").get<double>()};
}

template <typename Fn>
auto guarded(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

json to_json(const Manifest& m) {
  json ranges = json::array();
  for (const FeatureRange& r : m.ranges) ranges.push_back(json::array({r.min, r.max}));
  return json{
      {"format", "gridbayes-dataset"},
      {"version", m.version},
      {"grid", {{"rows", m.grid.rows}, {"cols", m.grid.cols}, {"cell_size", m.grid.cell_size}}},
      {"feature_names", {"count", "doppler_abs_mean", "rcs_mean", "t_rel_mean"}},
      {"feature_ranges", ranges},
      {"class_names", m.class_names},
      {"frame_count", m.frame_count},
      {"seed", m.seed},
      {"scenario", m.scenario},
      {"splits", {{"train", m.train}, {"test", m.test}}},
  };
}

Manifest manifest_from_json(const json& j) {
  return guarded("manifest", [&] {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetFormatVersion) {
      throw DataError("dataset format version " + std::to_string(m.version) +
                      " is not supported (expected " +
                      std::to_string(kDatasetFormatVersion) + ")");
    }
    const json& g = j.at("grid");
    m.grid.rows = g.at("rows").get<std::size_t>();
    m.grid.cols = g.at("cols").get<std::size_t>();
    m.grid.cell_size = g.at("cell_size").get<double>();
    m.grid.validate();
    const json& r = j.at("feature_ranges");
    if (r.size() != kInputFeatures) throw DataError("manifest needs 4 feature ranges");
    for (std::size_t f = 0; f < kInputFeatures; ++f) {
      m.ranges[f] = {r[f].at(0).get<double>(), r[f].at(1).get<double>()};
    }
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.frame_count = j.at("frame_count").get<std::size_t>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.scenario = j.value("scenario", json::object());
    m.train = j.at("splits").at("train").get<std::vector<std::string>>();
    m.test = j.at("splits").at("test").get<std::vector<std::string>>();
    return m;
  });
}

json to_json(const SceneRecord& s) {
  json frames = json::array();
  for (const RadarFrame& f : s.frames) {
    json dets = json::array();
    for (const RadarDetection& d : f.detections) {
      dets.push_back(json::array({d.x, d.y, d.doppler, d.rcs, d.sensor_id}));
    }
    frames.push_back(json{{"timestamp", f.timestamp},
                          {"ego_pose", pose_json(f.ego_pose)},
                          {"detections", std::move(dets)}});
  }
  json sensors = json::array();
  for (const Point2& p : s.radar_sensors) sensors.push_back(json::array({p.x, p.y}));
  json lidar = json::array();
  for (const LidarPoint& p : s.lidar_points) {
    lidar.push_back(json::array({p.x, p.y, static_cast<int>(p.cls)}));
  }
  json endpoints = json::array();
  for (const Point2& p : s.lidar_endpoints) endpoints.push_back(json::array({p.x, p.y}));
  json ood = json::array();
  for (const OodObject& o : s.ood_objects) {
    ood.push_back(json{{"type", o.type}, {"x", o.x}, {"y", o.y}, {"radius", o.radius}});
  }
  return json{
      {"id", s.id},
      {"reference_time", s.reference_time},
      {"reference_pose", pose_json(s.reference_pose)},
      {"frames", std::move(frames)},
      {"radar_sensors", std::move(sensors)},
      {"lidar_origin", json::array({s.lidar_origin.x, s.lidar_origin.y})},
      {"lidar_points", std::move(lidar)},
      {"lidar_endpoints", std::move(endpoints)},
      {"labels", s.labels.labels},
      {"observability", s.observability.weights},
      {"ood_objects", std::move(ood)},
  };
}

SceneRecord scene_from_json(const json& j, const GridSpec& grid) {
  return guarded("scene", [&] {
    SceneRecord s;
    s.id = j.at("id").get<std::string>();
    s.reference_time = j.at("reference_time").get<double>();
    s.reference_pose = pose_from(j.at("reference_pose"));
    for (const json& f : j.at("frames")) {
      RadarFrame frame;
      frame.timestamp = f.at("timestamp").get<double>();
      frame.ego_pose = pose_from(f.at("ego_pose"));
      for (const json& d : f.at("detections")) {
        RadarDetection det;
        det.x = d.at(0).get<double>();
        det.y = d.at(1).get<double>();
        det.doppler = d.at(2).get<double>();
        det.rcs = d.at(3).get<double>();
        det.sensor_id = d.at(4).get<int>();
        det.t_rel = std::max(0.0, s.reference_time - frame.timestamp);
        frame.detections.push_back(det);
      }
      s.frames.push_back(std::move(frame));
    }
    for (const json& p : j.at("radar_sensors")) {
      s.radar_sensors.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    const json& o = j.at("lidar_origin");
    s.lidar_origin = {o.at(0).get<double>(), o.at(1).get<double>()};
    for (const json& p : j.at("lidar_points")) {
      const int cls = p.at(2).get<int>();
      if (cls < 0 || cls > 2) throw DataError("scene " + s.id + ": bad lidar class " + std::to_string(cls));
      s.lidar_points.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                                static_cast<CellClass>(cls)});
    }
    for (const json& p : j.at("lidar_endpoints")) {
      s.lidar_endpoints.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    s.labels = LabelGrid(grid.rows, grid.cols);
    s.labels.labels = j.at("labels").get<std::vector<std::uint8_t>>();
    s.observability = WeightGrid(grid.rows, grid.cols);
    s.observability.weights = j.at("observability").get<std::vector<float>>();
    if (s.labels.labels.size() != grid.cell_count() ||
        s.observability.weights.size() != grid.cell_count()) {
      throw DataError("scene " + s.id + ": grid payload does not match " +
                      std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
    }
    for (std::uint8_t l : s.labels.labels) {
      if (l >= kClassCount) throw DataError("scene " + s.id + ": label out of range");
    }
    for (float w : s.observability.weights) {
      if (!(w >= 0.0f && w <= 1.0f)) throw DataError("scene " + s.id + ": weight outside [0,1]");
    }
    if (j.contains("ood_objects")) {
      for (const json& x : j.at("ood_objects")) {
        s.ood_objects.push_back({x.at("type").get<std::string>(), x.at("x").get<double>(),
                                 x.at("y").get<double>(), x.at("radius").get<double>()});
      }
    }
    return s;
  });
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_manifest(const Manifest& m, const std::filesystem::path& dir) {
  write_json_file(dir / "manifest.json", to_json(m));
}

Manifest load_manifest(const std::filesystem::path& dir) {
  return manifest_from_json(read_json_file(dir / "manifest.json"));
}

SceneRecord load_scene(const std::filesystem::path& path, const GridSpec& grid) {
  return scene_from_json(read_json_file(path), grid);
}

FeatureGrid scene_features(const SceneRecord& scene, const Manifest& m) {
  const auto merged = ego_motion_compensate(scene.frames, scene.reference_pose, scene.reference_time);
  return normalize_features(grid_project(merged, m.grid), m.ranges);
}

Sample make_sample(const SceneRecord& scene, const Manifest& m) {
  return Sample{scene.id, scene_features(scene, m), scene.labels, scene.observability,
                scene.ood_objects};
}

std::vector<Sample> load_split(const std::filesystem::path& dir, const Manifest& m, Split split) {
  std::vector<Sample> out;
  for (const std::string& name : m.split(split)) {
    out.push_back(make_sample(load_scene(dir / name, m.grid), m));
  }
  return out;
}

}  // namespace gridbayes
