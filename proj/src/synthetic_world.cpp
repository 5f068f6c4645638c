#include "gridbayes/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>

#include "gridbayes/error.hpp"
#include "gridbayes/parallel.hpp"

namespace gridbayes {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDeg = std::numbers::pi / 180.0;

json range_json(Range r) { return json::array({r.lo, r.hi}); }
json range_json(CountRange r) { return json::array({r.lo, r.hi}); }
json rcs_json(RcsModel m) { return json{{"mean", m.mean}, {"stddev", m.stddev}}; }

Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
CountRange count_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }
RcsModel rcs_from(const json& j) { return {j.at("mean").get<double>(), j.at("stddev").get<double>()}; }

void reject_unknown_keys(const json& given, const json& known, const std::string& where) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!known.contains(it.key())) {
      throw ConfigError("unknown scenario key '" + where + it.key() + "'");
    }
    if (it->is_object() && known.at(it.key()).is_object()) {
      reject_unknown_keys(*it, known.at(it.key()), where + it.key() + ".");
    }
  }
}

void check_range(Range r, const char* name, bool positive = false) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || r.lo < 0.0 ||
      (positive && r.lo <= 0.0)) {
    throw ConfigError(std::string("scenario range '") + name + "' is invalid: [" +
                      std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  }
}

void check_count(CountRange r, const char* name) {
  if (r.lo < 0 || r.lo > r.hi) {
    throw ConfigError(std::string("scenario count '") + name + "' is invalid: [" +
                      std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  }
}

double quantize(double v) { return std::round(v * 1e4) / 1e4; }

Pose2D ego_pose_at(double speed, double yaw_rate, double tau) {
  Pose2D p;
  p.yaw = yaw_rate * tau;
  if (std::abs(yaw_rate) < 1e-9) {
    p.x = speed * tau;
  } else {
    p.x = speed / yaw_rate * std::sin(yaw_rate * tau);
    p.y = speed / yaw_rate * (1.0 - std::cos(yaw_rate * tau));
  }
  return p;
}

Point2 center_at(const WorldObject& o, double tau) { return {o.x + o.vx * tau, o.y + o.vy * tau}; }

// Distance from a point to the object's surface (negative inside for discs,
// zero inside for boxes).
double surface_distance(const WorldObject& o, Point2 p) {
  if (o.shape == ShapeKind::kDisc) return std::hypot(p.x - o.x, p.y - o.y) - o.radius;
  const double c = std::cos(o.heading), s = std::sin(o.heading);
  const double dx = p.x - o.x, dy = p.y - o.y;
  const double lx = std::abs(c * dx + s * dy) - o.half_length;
  const double ly = std::abs(-s * dx + c * dy) - o.half_width;
  return std::hypot(std::max(lx, 0.0), std::max(ly, 0.0));
}

bool is_moving(ObjectClass cls) { return cls == ObjectClass::kCar || cls == ObjectClass::kPedestrian; }

const RcsModel& rcs_model(const ScenarioConfig& cfg, ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kWall: return cfg.rcs_wall;
    case ObjectClass::kBox: return cfg.rcs_box;
    case ObjectClass::kCar: return cfg.rcs_car;
    case ObjectClass::kPedestrian: return cfg.rcs_pedestrian;
    case ObjectClass::kOod: return cfg.rcs_ood;
  }
  return cfg.rcs_box;
}

struct Hit {
  double distance = kInf;
  const WorldObject* object = nullptr;
};

Hit cast(const std::vector<WorldObject>& objects, double tau, Point2 origin, double angle,
         double max_range, bool lidar) {
  Hit best;
  for (const WorldObject& o : objects) {
    if (lidar && !o.lidar_visible) continue;
    const double d = ray_hit(o, tau, origin, angle);
    if (d < best.distance) best = {d, &o};
  }
  if (best.distance > max_range) return {};
  return best;
}

// Length of the chord the ray cuts through `o` after entering at `entry`.
double ray_depth(const WorldObject& o, Point2 origin, double angle, double entry) {
  const double step = 0.02;
  double s = entry + step;
  const double ux = std::cos(angle), uy = std::sin(angle);
  while (s - entry < 2.0 && surface_distance(o, {origin.x + s * ux, origin.y + s * uy}) <= 0.0) {
    s += step;
  }
  return std::max(0.0, s - step - entry);
}

}  // namespace

std::vector<RadarMount> ScenarioConfig::mounts() const {
  if (!radar_mounts.empty()) return radar_mounts;
  const double q = std::numbers::pi / 4.0;
  return {{2.0, 0.9, q}, {2.0, -0.9, -q}, {-2.0, 0.9, 3.0 * q}, {-2.0, -0.9, -3.0 * q}};
}

void ScenarioConfig::validate() const {
  grid.validate();
  if (frame_count == 0) throw ConfigError("scenario frame_count must be >= 1");
  if (!(frame_dt > 0.0)) throw ConfigError("scenario frame_dt must be positive");
  check_range(ego_speed, "ego_speed");
  if (!(ego_yaw_rate.lo <= ego_yaw_rate.hi)) throw ConfigError("scenario range 'ego_yaw_rate' is invalid");
  if (!(world_extent > 0.0) || keep_out_x < 0.0 || keep_out_y < 0.0 ||
      keep_out_x >= world_extent || keep_out_y >= world_extent) {
    throw ConfigError("scenario world_extent / keep_out are inconsistent");
  }
  check_count(walls, "walls");
  check_count(boxes, "boxes");
  check_count(cars, "cars");
  check_count(pedestrians, "pedestrians");
  check_range(wall_length, "wall_length", true);
  check_range(wall_thickness, "wall_thickness", true);
  check_range(box_length, "box_length", true);
  check_range(box_width, "box_width", true);
  check_range(car_speed, "car_speed");
  check_range(pedestrian_speed, "pedestrian_speed");
  if (car_speed.lo <= 0.5 || pedestrian_speed.lo <= 0.5) {
    throw ConfigError("moving objects need speeds above 0.5 m/s");
  }
  if (clutter_rate < 0.0) throw ConfigError("scenario clutter_rate must be >= 0");
  if (!(radar_fov > 0.0 && radar_fov <= 360.0)) throw ConfigError("scenario radar_fov must be in (0, 360]");
  if (!(radar_angular_resolution > 0.0) || !(lidar_angular_resolution > 0.0)) {
    throw ConfigError("angular resolutions must be positive");
  }
  if (!(radar_max_range > 0.0) || !(lidar_max_range > 0.0) || lidar_ground_range < 0.0) {
    throw ConfigError("sensor ranges must be positive");
  }
  if (!(lidar_ground_spacing > 0.0)) throw ConfigError("lidar_ground_spacing must be positive");
  if (lidar_layers == 0) throw ConfigError("lidar_layers must be >= 1");
  for (double p : {detection_probability, lidar_dropout}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities must lie in [0, 1]");
  }
  if (position_sigma < 0.0 || doppler_sigma < 0.0) throw ConfigError("noise sigmas must be >= 0");
  for (const RcsModel* m : {&rcs_wall, &rcs_box, &rcs_car, &rcs_pedestrian, &rcs_clutter, &rcs_ood}) {
    if (m->stddev < 0.0 || !std::isfinite(m->mean)) throw ConfigError("rcs stddev must be >= 0");
  }
  if (ood_count < 0) throw ConfigError("ood_count must be >= 0");
  check_range(ood_radius, "ood_radius", true);
  check_range(ood_distance, "ood_distance");
}

json to_json(const ScenarioConfig& c) {
  json mounts = json::array();
  for (const RadarMount& m : c.radar_mounts) {
    mounts.push_back(json{{"x", m.x}, {"y", m.y}, {"yaw_deg", m.yaw / kDeg}});
  }
  return json{
      {"seed", c.seed},
      {"grid", {{"rows", c.grid.rows}, {"cols", c.grid.cols}, {"cell_size", c.grid.cell_size}}},
      {"frame_count", c.frame_count},
      {"frame_dt", c.frame_dt},
      {"ego_speed", range_json(c.ego_speed)},
      {"ego_yaw_rate", range_json(c.ego_yaw_rate)},
      {"world_extent", c.world_extent},
      {"keep_out_x", c.keep_out_x},
      {"keep_out_y", c.keep_out_y},
      {"walls", range_json(c.walls)},
      {"wall_length", range_json(c.wall_length)},
      {"wall_thickness", range_json(c.wall_thickness)},
      {"boxes", range_json(c.boxes)},
      {"box_length", range_json(c.box_length)},
      {"box_width", range_json(c.box_width)},
      {"cars", range_json(c.cars)},
      {"car_speed", range_json(c.car_speed)},
      {"pedestrians", range_json(c.pedestrians)},
      {"pedestrian_speed", range_json(c.pedestrian_speed)},
      {"clutter_rate", c.clutter_rate},
      {"radar_mounts", mounts},
      {"radar_fov", c.radar_fov},
      {"radar_angular_resolution", c.radar_angular_resolution},
      {"radar_max_range", c.radar_max_range},
      {"detection_probability", c.detection_probability},
      {"position_sigma", c.position_sigma},
      {"doppler_sigma", c.doppler_sigma},
      {"rcs", {{"wall", rcs_json(c.rcs_wall)},
               {"box", rcs_json(c.rcs_box)},
               {"car", rcs_json(c.rcs_car)},
               {"pedestrian", rcs_json(c.rcs_pedestrian)},
               {"clutter", rcs_json(c.rcs_clutter)},
               {"ood", rcs_json(c.rcs_ood)}}},
      {"lidar_angular_resolution", c.lidar_angular_resolution},
      {"lidar_max_range", c.lidar_max_range},
      {"lidar_ground_range", c.lidar_ground_range},
      {"lidar_ground_spacing", c.lidar_ground_spacing},
      {"lidar_layers", c.lidar_layers},
      {"lidar_dropout", c.lidar_dropout},
      {"ood", {{"enabled", c.ood_enabled},
               {"type", c.ood_type},
               {"count", c.ood_count},
               {"radius", range_json(c.ood_radius)},
               {"distance", range_json(c.ood_distance)}}},
  };
}

ScenarioConfig scenario_from_json(const json& given) {
  if (!given.is_object()) throw ConfigError("scenario config must be a JSON object");
  const json defaults = to_json(ScenarioConfig{});
  reject_unknown_keys(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);
  try {
    ScenarioConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.grid.rows = j.at("grid").at("rows").get<std::size_t>();
    c.grid.cols = j.at("grid").at("cols").get<std::size_t>();
    c.grid.cell_size = j.at("grid").at("cell_size").get<double>();
    c.frame_count = j.at("frame_count").get<std::size_t>();
    c.frame_dt = j.at("frame_dt").get<double>();
    c.ego_speed = range_from(j.at("ego_speed"));
    c.ego_yaw_rate = range_from(j.at("ego_yaw_rate"));
    c.world_extent = j.at("world_extent").get<double>();
    c.keep_out_x = j.at("keep_out_x").get<double>();
    c.keep_out_y = j.at("keep_out_y").get<double>();
    c.walls = count_from(j.at("walls"));
    c.wall_length = range_from(j.at("wall_length"));
    c.wall_thickness = range_from(j.at("wall_thickness"));
    c.boxes = count_from(j.at("boxes"));
    c.box_length = range_from(j.at("box_length"));
    c.box_width = range_from(j.at("box_width"));
    c.cars = count_from(j.at("cars"));
    c.car_speed = range_from(j.at("car_speed"));
    c.pedestrians = count_from(j.at("pedestrians"));
    c.pedestrian_speed = range_from(j.at("pedestrian_speed"));
    c.clutter_rate = j.at("clutter_rate").get<double>();
    for (const json& m : j.at("radar_mounts")) {
      c.radar_mounts.push_back(
          {m.at("x").get<double>(), m.at("y").get<double>(), m.at("yaw_deg").get<double>() * kDeg});
    }
    c.radar_fov = j.at("radar_fov").get<double>();
    c.radar_angular_resolution = j.at("radar_angular_resolution").get<double>();
    c.radar_max_range = j.at("radar_max_range").get<double>();
    c.detection_probability = j.at("detection_probability").get<double>();
    c.position_sigma = j.at("position_sigma").get<double>();
    c.doppler_sigma = j.at("doppler_sigma").get<double>();
    const json& r = j.at("rcs");
    c.rcs_wall = rcs_from(r.at("wall"));
    c.rcs_box = rcs_from(r.at("box"));
    c.rcs_car = rcs_from(r.at("car"));
    c.rcs_pedestrian = rcs_from(r.at("pedestrian"));
    c.rcs_clutter = rcs_from(r.at("clutter"));
    c.rcs_ood = rcs_from(r.at("ood"));
    c.lidar_angular_resolution = j.at("lidar_angular_resolution").get<double>();
    c.lidar_max_range = j.at("lidar_max_range").get<double>();
    c.lidar_ground_range = j.at("lidar_ground_range").get<double>();
    c.lidar_ground_spacing = j.at("lidar_ground_spacing").get<double>();
    c.lidar_layers = j.at("lidar_layers").get<std::size_t>();
    c.lidar_dropout = j.at("lidar_dropout").get<double>();
    const json& o = j.at("ood");
    c.ood_enabled = o.at("enabled").get<bool>();
    c.ood_type = o.at("type").get<std::string>();
    c.ood_count = o.at("count").get<int>();
    c.ood_radius = range_from(o.at("radius"));
    c.ood_distance = range_from(o.at("distance"));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
}

double ray_hit(const WorldObject& o, double tau, Point2 origin, double angle) {
  const Point2 c = center_at(o, tau);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double ox = origin.x - c.x, oy = origin.y - c.y;
  if (o.shape == ShapeKind::kDisc) {
    const double b = ox * dx + oy * dy;
    const double cc = ox * ox + oy * oy - o.radius * o.radius;
    if (cc <= 0.0) return kInf;  // origin inside
    const double disc = b * b - cc;
    if (disc < 0.0) return kInf;
    const double t = -b - std::sqrt(disc);
    return t > 0.0 ? t : kInf;
  }
  // slab test in the box frame
  const double ch = std::cos(o.heading), sh = std::sin(o.heading);
  const double lox = ch * ox + sh * oy, loy = -sh * ox + ch * oy;
  const double ldx = ch * dx + sh * dy, ldy = -sh * dx + ch * dy;
  if (std::abs(lox) <= o.half_length && std::abs(loy) <= o.half_width) return kInf;
  double t0 = -kInf, t1 = kInf;
  auto slab = [&](double p, double d, double h) {
    if (std::abs(d) < 1e-15) return std::abs(p) <= h;
    double a = (-h - p) / d, b = (h - p) / d;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 <= t1;
  };
  if (!slab(lox, ldx, o.half_length) || !slab(loy, ldy, o.half_width)) return kInf;
  return t0 > 0.0 ? t0 : kInf;
}

SceneTruth sample_world(const ScenarioConfig& cfg, bool training, RngStream& rng) {
  cfg.validate();
  SceneTruth truth;
  truth.ego_speed = rng.uniform(cfg.ego_speed.lo, cfg.ego_speed.hi);
  truth.ego_yaw_rate = rng.uniform(cfg.ego_yaw_rate.lo, cfg.ego_yaw_rate.hi);
  const double t_ref = static_cast<double>(cfg.frame_count - 1) * cfg.frame_dt;
  for (std::size_t k = 0; k < cfg.frame_count; ++k) {
    const double ts = static_cast<double>(k) * cfg.frame_dt;
    truth.timestamps.push_back(ts);
    truth.ego_poses.push_back(ego_pose_at(truth.ego_speed, truth.ego_yaw_rate, ts - t_ref));
  }

  const double e = cfg.world_extent;
  auto position = [&]() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double x = rng.uniform(-e, e), y = rng.uniform(-e, e);
      if (std::abs(x) > cfg.keep_out_x || std::abs(y) > cfg.keep_out_y) return Point2{x, y};
    }
    return Point2{e, e};
  };
  auto count = [&](CountRange r) { return static_cast<int>(rng.uniform_int(r.lo, r.hi)); };

  const int n_walls = count(cfg.walls);
  for (int i = 0; i < n_walls; ++i) {
    WorldObject w;
    w.cls = ObjectClass::kWall;
    const Point2 p = position();
    w.x = p.x;
    w.y = p.y;
    w.heading = (rng.bernoulli(0.7) ? 0.0 : std::numbers::pi / 2.0) + rng.uniform(-0.15, 0.15);
    w.half_length = rng.uniform(cfg.wall_length.lo, cfg.wall_length.hi) / 2.0;
    w.half_width = rng.uniform(cfg.wall_thickness.lo, cfg.wall_thickness.hi) / 2.0;
    // long walls must not swallow the ego
    if (surface_distance(w, {0.0, 0.0}) < 1.5) continue;
    truth.objects.push_back(w);
  }
  const int n_boxes = count(cfg.boxes);
  for (int i = 0; i < n_boxes; ++i) {
    WorldObject b;
    b.cls = ObjectClass::kBox;
    const Point2 p = position();
    b.x = p.x;
    b.y = p.y;
    b.heading = rng.uniform(0.0, std::numbers::pi);
    b.half_length = rng.uniform(cfg.box_length.lo, cfg.box_length.hi) / 2.0;
    b.half_width = rng.uniform(cfg.box_width.lo, cfg.box_width.hi) / 2.0;
    truth.objects.push_back(b);
  }
  const int n_cars = count(cfg.cars);
  for (int i = 0; i < n_cars; ++i) {
    WorldObject c;
    c.cls = ObjectClass::kCar;
    const Point2 p = position();
    c.x = p.x;
    c.y = p.y;
    c.heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    c.half_length = rng.uniform(3.8, 4.8) / 2.0;
    c.half_width = rng.uniform(1.6, 2.0) / 2.0;
    const double v = rng.uniform(cfg.car_speed.lo, cfg.car_speed.hi);
    c.vx = v * std::cos(c.heading);
    c.vy = v * std::sin(c.heading);
    truth.objects.push_back(c);
  }
  const int n_peds = count(cfg.pedestrians);
  for (int i = 0; i < n_peds; ++i) {
    WorldObject d;
    d.shape = ShapeKind::kDisc;
    d.cls = ObjectClass::kPedestrian;
    const Point2 p = position();
    d.x = p.x;
    d.y = p.y;
    d.radius = 0.3;
    const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double v = rng.uniform(cfg.pedestrian_speed.lo, cfg.pedestrian_speed.hi);
    d.vx = v * std::cos(heading);
    d.vy = v * std::sin(heading);
    truth.objects.push_back(d);
  }

  if (!training && cfg.ood_enabled) {
    for (int i = 0; i < cfg.ood_count; ++i) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double r = rng.uniform(cfg.ood_distance.lo, cfg.ood_distance.hi);
        const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const Point2 p{r * std::cos(a), r * std::sin(a)};
        const bool clear = std::all_of(truth.objects.begin(), truth.objects.end(),
                                       [&](const WorldObject& o) { return surface_distance(o, p) > 1.5; });
        if (!clear) continue;
        WorldObject b;
        b.shape = ShapeKind::kDisc;
        b.cls = ObjectClass::kOod;
        b.x = p.x;
        b.y = p.y;
        b.radius = rng.uniform(cfg.ood_radius.lo, cfg.ood_radius.hi);
        b.lidar_visible = false;  // too thin for the ground-truth lidar
        truth.objects.push_back(b);
        break;
      }
    }
  }
  return truth;
}

SceneRecord render_scene(const ScenarioConfig& cfg, const SceneTruth& truth, RngStream& rng,
                         const std::string& id) {
  SceneRecord scene;
  scene.id = id;
  const std::size_t k_ref = truth.ego_poses.size() - 1;
  scene.reference_pose = truth.ego_poses[k_ref];
  scene.reference_time = truth.timestamps[k_ref];
  const std::vector<RadarMount> mounts = cfg.mounts();
  const double fov = cfg.radar_fov * kDeg, res = cfg.radar_angular_resolution * kDeg;
  const int n_rays = static_cast<int>(std::floor(fov / res + 1e-9)) + 1;

  for (std::size_t k = 0; k < truth.ego_poses.size(); ++k) {
    RadarFrame frame;
    frame.ego_pose = truth.ego_poses[k];
    frame.timestamp = truth.timestamps[k];
    const double tau = frame.timestamp - scene.reference_time;
    for (std::size_t m = 0; m < mounts.size(); ++m) {
      const Point2 origin = to_world(frame.ego_pose, {mounts[m].x, mounts[m].y});
      const double boresight = frame.ego_pose.yaw + mounts[m].yaw;
      for (int r = 0; r < n_rays; ++r) {
        const double angle = boresight - fov / 2.0 + r * res;
        const Hit hit = cast(truth.objects, tau, origin, angle, cfg.radar_max_range, false);
        if (!hit.object || !rng.bernoulli(cfg.detection_probability)) continue;
        const double ux = std::cos(angle), uy = std::sin(angle);
        const Point2 p{origin.x + hit.distance * ux + rng.normal(0.0, cfg.position_sigma),
                       origin.y + hit.distance * uy + rng.normal(0.0, cfg.position_sigma)};
        const double radial = hit.object->vx * ux + hit.object->vy * uy;
        const RcsModel& rcs = rcs_model(cfg, hit.object->cls);
        const Point2 local = to_local(frame.ego_pose, p);
        RadarDetection d;
        d.x = quantize(local.x);
        d.y = quantize(local.y);
        d.doppler = quantize(radial + rng.normal(0.0, cfg.doppler_sigma));
        d.rcs = quantize(rng.normal(rcs.mean, rcs.stddev));
        d.t_rel = scene.reference_time - frame.timestamp;
        d.sensor_id = static_cast<int>(m);
        frame.detections.push_back(d);
      }
      std::poisson_distribution<int> clutter(cfg.clutter_rate);
      const int n_clutter = cfg.clutter_rate > 0.0 ? clutter(rng.engine()) : 0;
      for (int c = 0; c < n_clutter; ++c) {
        const double angle = boresight + rng.uniform(-fov / 2.0, fov / 2.0);
        const double dist = rng.uniform(1.0, cfg.radar_max_range);
        const Point2 local = to_local(frame.ego_pose, {origin.x + dist * std::cos(angle),
                                                      origin.y + dist * std::sin(angle)});
        RadarDetection d;
        d.x = quantize(local.x);
        d.y = quantize(local.y);
        d.doppler = quantize(rng.normal(0.0, cfg.doppler_sigma));
        d.rcs = quantize(rng.normal(cfg.rcs_clutter.mean, cfg.rcs_clutter.stddev));
        d.t_rel = scene.reference_time - frame.timestamp;
        d.sensor_id = static_cast<int>(m);
        frame.detections.push_back(d);
      }
    }
    scene.frames.push_back(std::move(frame));
  }

  // Everything below lives in the reference ego frame, which is the world
  // frame at tau = 0 up to the reference pose.
  for (const RadarMount& m : mounts) scene.radar_sensors.push_back({m.x, m.y});
  scene.lidar_origin = {0.0, 0.0};
  std::vector<LidarPoint> all_points;
  const double lres = cfg.lidar_angular_resolution * kDeg;
  const int n_lidar = static_cast<int>(std::floor(2.0 * std::numbers::pi / lres + 1e-9));
  for (int r = 0; r < n_lidar; ++r) {
    if (rng.bernoulli(cfg.lidar_dropout)) continue;
    const double local_angle = r * lres;
    const double angle = scene.reference_pose.yaw + local_angle;
    const Point2 world_origin{scene.reference_pose.x, scene.reference_pose.y};
    const Hit hit = cast(truth.objects, 0.0, world_origin, angle, cfg.lidar_max_range, true);
    const double ux = std::cos(local_angle), uy = std::sin(local_angle);
    const double reach = hit.object ? hit.distance : cfg.lidar_max_range;
    scene.lidar_endpoints.push_back({quantize(reach * ux), quantize(reach * uy)});
    const double free_end = std::min(hit.object ? hit.distance - 0.3 : kInf, cfg.lidar_ground_range);
    for (double s = 0.25; s < free_end; s += cfg.lidar_ground_spacing) {
      all_points.push_back({s * ux, s * uy, CellClass::kFree});
    }
    if (hit.object) {
      const CellClass cls = is_moving(hit.object->cls) ? CellClass::kMoving : CellClass::kOccupied;
      // upper layers land further into the object (roofs, tops)
      const double depth = ray_depth(*hit.object, world_origin, angle, hit.distance);
      for (std::size_t l = 0; l < cfg.lidar_layers; ++l) {
        const double s = hit.distance + std::min(0.25 * static_cast<double>(l), depth);
        LidarPoint p{quantize(s * ux), quantize(s * uy), cls};
        scene.lidar_points.push_back(p);
        all_points.push_back(p);
      }
    }
  }
  scene.labels = label_grid(all_points, cfg.grid);
  scene.observability = observability_weights(scene.radar_sensors, scene.lidar_endpoints, cfg.grid);

  for (const WorldObject& o : truth.objects) {
    if (o.cls != ObjectClass::kOod) continue;
    const Point2 p = to_local(scene.reference_pose, {o.x, o.y});
    scene.ood_objects.push_back({cfg.ood_type, quantize(p.x), quantize(p.y), quantize(o.radius)});
  }
  return scene;
}

SceneRecord generate_scene(const ScenarioConfig& cfg, bool training, RngStream& rng,
                           const std::string& id) {
  const SceneTruth truth = sample_world(cfg, training, rng);
  return render_scene(cfg, truth, rng, id);
}

DatasetSummary generate_dataset(const ScenarioConfig& cfg, std::size_t n_train, std::size_t n_test,
                                const std::filesystem::path& out_dir, std::size_t threads) {
  cfg.validate();
  if (n_train == 0 || n_test == 0) throw ConfigError("n_train and n_test must both be > 0");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create dataset directory " + out_dir.string() +
                  (ec ? ": " + ec.message() : ""));
  }

  Manifest manifest;
  manifest.grid = cfg.grid;
  manifest.frame_count = cfg.frame_count;
  manifest.seed = cfg.seed;
  manifest.scenario = to_json(cfg);
  for (std::size_t c = 0; c < kClassCount; ++c) manifest.class_names.push_back(class_name(static_cast<CellClass>(c)));

  std::vector<FeatureRanges> per_scene(n_train);
  auto run_split = [&](Split split, std::size_t n, std::vector<std::string>& names) {
    const RngStream base = RngStream(cfg.seed).substream(split == Split::kTrain ? 0 : 1);
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "%s_%05zu.json", to_string(split).c_str(), i);
      names.emplace_back(buf);
    }
    parallel_for(n, threads, [&](std::size_t i) {
      RngStream rng = base.substream(i);
      const std::string id = names[i].substr(0, names[i].size() - 5);
      const SceneRecord scene = generate_scene(cfg, split == Split::kTrain, rng, id);
      write_json_file(out_dir / names[i], to_json(scene));
      if (split != Split::kTrain) return;
      const auto merged = ego_motion_compensate(scene.frames, scene.reference_pose, scene.reference_time);
      const FeatureGrid raw = grid_project(merged, cfg.grid);
      const std::size_t plane = cfg.grid.cell_count();
      FeatureRanges& r = per_scene[i];
      for (std::size_t f = 0; f < kInputFeatures; ++f) {
        const auto first = raw.values.begin() + static_cast<std::ptrdiff_t>(f * plane);
        const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(plane));
        r[f] = {*lo, *hi};
      }
    });
  };
  run_split(Split::kTrain, n_train, manifest.train);
  run_split(Split::kTest, n_test, manifest.test);

  FeatureRanges ranges = per_scene.front();
  for (const FeatureRanges& r : per_scene) {
    for (std::size_t f = 0; f < kInputFeatures; ++f) {
      ranges[f].min = std::min(ranges[f].min, r[f].min);
      ranges[f].max = std::max(ranges[f].max, r[f].max);
    }
  }
  for (FeatureRange& r : ranges) {
    if (!(r.max > r.min)) r.max = r.min + 1.0;  // e.g. t_rel with a single frame
  }
  manifest.ranges = ranges;
  save_manifest(manifest, out_dir);
  return {n_train, n_test, ranges};
}

}  // namespace gridbayes
