#include "mmq/scene.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mmq/errors.hpp"
#include "mmq/random.hpp"

namespace mmq {

std::vector<ClassPrior> default_class_priors() {
  return {{"car", {1.9, 4.5, 1.6}, 0.5}, {"pedestrian", {0.7, 0.7, 1.8}, 0.3}, {"truck", {2.5, 8.0, 3.2}, 0.2}};
}

std::vector<CameraModel> make_rig(const RigConfig& rig) {
  std::vector<CameraModel> cams;
  const double hfov = rig.hfov_deg * std::numbers::pi / 180.0;
  const double yaw = rig.yaw_deg * std::numbers::pi / 180.0;
  for (int i = 0; i < rig.cameras; ++i) {
    // Spread evenly over [+yaw, -yaw]; a single camera looks straight ahead.
    const double t = rig.cameras == 1 ? 0.5 : static_cast<double>(i) / (rig.cameras - 1);
    const double cam_yaw = yaw * (1.0 - 2.0 * t);
    cams.push_back(make_camera(cam_yaw, rig.mount, rig.width, rig.height, hfov));
  }
  return cams;
}

void SceneConfig::validate() const {
  range.validate();
  if (classes.empty()) throw ConfigError("scene config needs at least one class");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
  if (ground_points < 0) throw ConfigError("ground_points must be non-negative");
  if (2.0 * placement_margin >= range.x_max - range.x_min || 2.0 * placement_margin >= range.y_max - range.y_min) {
    throw ConfigError("placement margin leaves no room for objects");
  }
}

namespace {

void sample_box_surface(const Box3D& box, int n, Rng& rng, std::vector<Vec3>& out) {
  const double w = box.size[0], l = box.size[1], h = box.size[2];
  // Four sides plus the roof, chosen by area.
  const double areas[5] = {l * h, l * h, w * h, w * h, l * w};
  double total = 0.0;
  for (double a : areas) total += a;
  const Mat3 r = rot_z(box.yaw);
  for (int i = 0; i < n; ++i) {
    double pick = rng.uniform() * total;
    int face = 0;
    while (face < 4 && pick >= areas[face]) pick -= areas[face++];
    const double a = rng.uniform(-0.5, 0.5), b = rng.uniform(-0.5, 0.5);
    Vec3 local{};
    switch (face) {
      case 0: local = {a * l, 0.5 * w, b * h}; break;
      case 1: local = {a * l, -0.5 * w, b * h}; break;
      case 2: local = {0.5 * l, a * w, b * h}; break;
      case 3: local = {-0.5 * l, a * w, b * h}; break;
      default: local = {a * l, b * w, 0.5 * h}; break;
    }
    out.push_back(box.center + r * local);
  }
}

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0x5ce0e));
  Scene scene;
  scene.seed = seed;
  scene.id = "scene-" + std::to_string(seed);
  scene.rig = make_rig(config.rig);

  const auto& rg = config.range;
  const int count = static_cast<int>(rng.integer(config.min_objects, config.max_objects));
  double weight_total = 0.0;
  for (const auto& c : config.classes) weight_total += c.weight;

  for (int k = 0; k < count; ++k) {
    double pick = rng.uniform() * weight_total;
    int cls = 0;
    while (cls + 1 < config.num_classes() && pick >= config.classes[cls].weight) pick -= config.classes[cls++].weight;
    const auto& prior = config.classes[cls];
    bool placed = false;
    for (int attempt = 0; attempt < config.max_placement_retries && !placed; ++attempt) {
      Box3D box;
      box.class_id = cls;
      for (int i = 0; i < 3; ++i) box.size[i] = prior.size[i] * (1.0 + rng.uniform(-config.size_jitter, config.size_jitter));
      box.center = {rng.uniform(rg.x_min + config.placement_margin, rg.x_max - config.placement_margin),
                    rng.uniform(rg.y_min + config.placement_margin, rg.y_max - config.placement_margin),
                    0.5 * box.size[2]};
      box.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
      // Keep the sensor origin clear.
      if (std::hypot(box.center[0], box.center[1]) < 3.0) continue;
      bool clear = true;
      for (const auto& other : scene.gt_boxes) {
        if (bev_iou(box, other) > config.max_overlap_iou) {
          clear = false;
          break;
        }
      }
      if (clear) {
        scene.gt_boxes.push_back(box);
        placed = true;
      }
    }
    if (!placed) {
      throw GenerationError("could not place object " + std::to_string(k + 1) + " of " + std::to_string(count) +
                            " after " + std::to_string(config.max_placement_retries) + " attempts");
    }
  }

  const Vec3 sensor{0.0, 0.0, config.lidar_height};
  for (const auto& box : scene.gt_boxes) {
    const double w = box.size[0], l = box.size[1], h = box.size[2];
    const double area = 2.0 * (l * h + w * h) + l * w;
    const double r = bev_distance(box.center, sensor);
    const double falloff = 1.0 + (r / config.density_range) * (r / config.density_range);
    const int n = std::max(8, static_cast<int>(std::lround(config.surface_density * area * 4.0 / falloff)));
    sample_box_surface(box, n, rng, scene.lidar_points);
  }

  // Ground returns: uniform in polar radius, so areal density decays ~1/r.
  const double r_max = std::hypot(std::max(std::fabs(rg.x_min), std::fabs(rg.x_max)),
                                  std::max(std::fabs(rg.y_min), std::fabs(rg.y_max)));
  int placed = 0;
  while (placed < config.ground_points) {
    const double r = 1.0 + rng.uniform() * (r_max - 1.0);
    const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double z = rng.normal(0.0, 0.03);
    const Vec3 p{r * std::cos(th), r * std::sin(th), z};
    if (!rg.contains(p[0], p[1])) continue;
    scene.lidar_points.push_back(p);
    ++placed;
  }
  if (scene.lidar_points.empty()) scene.lidar_points.push_back({0.0, 0.0, 0.0});
  return scene;
}

namespace {

nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json rot = nlohmann::json::array();
  for (const auto& row : p.rotation) rot.push_back({row[0], row[1], row[2]});
  return {{"rotation", rot}, {"translation", {p.translation[0], p.translation[1], p.translation[2]}}};
}

Vec3 vec3_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : scene.gt_boxes) {
    boxes.push_back({{"center", {b.center[0], b.center[1], b.center[2]}},
                     {"size", {b.size[0], b.size[1], b.size[2]}},
                     {"yaw", b.yaw},
                     {"class_id", b.class_id}});
  }
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : scene.lidar_points) points.push_back({p[0], p[1], p[2]});
  nlohmann::json rig = nlohmann::json::array();
  for (const auto& c : scene.rig) {
    rig.push_back({{"fx", c.fx},
                   {"fy", c.fy},
                   {"cx", c.cx},
                   {"cy", c.cy},
                   {"width", c.width},
                   {"height", c.height},
                   {"extrinsic", pose_to_json(c.extrinsic)}});
  }
  return {{"schema", kSceneSchema}, {"version", kSceneSchemaVersion}, {"id", scene.id}, {"seed", scene.seed},
          {"gt_boxes", boxes},      {"lidar_points", points},          {"rig", rig}};
}

Scene scene_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kSceneSchema) throw std::runtime_error("not a scene document (schema mismatch)");
  if (j.at("version").get<int>() != kSceneSchemaVersion) {
    throw std::runtime_error("unsupported scene schema version " + j.at("version").dump());
  }
  Scene s;
  s.id = j.at("id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& b : j.at("gt_boxes")) {
    Box3D box;
    box.center = vec3_from(b.at("center"));
    box.size = vec3_from(b.at("size"));
    box.yaw = b.at("yaw").get<double>();
    box.class_id = b.at("class_id").get<int>();
    s.gt_boxes.push_back(box);
  }
  for (const auto& p : j.at("lidar_points")) s.lidar_points.push_back(vec3_from(p));
  for (const auto& c : j.at("rig")) {
    CameraModel cam;
    cam.fx = c.at("fx").get<double>();
    cam.fy = c.at("fy").get<double>();
    cam.cx = c.at("cx").get<double>();
    cam.cy = c.at("cy").get<double>();
    cam.width = c.at("width").get<int>();
    cam.height = c.at("height").get<int>();
    const auto& e = c.at("extrinsic");
    for (int r = 0; r < 3; ++r) cam.extrinsic.rotation[r] = vec3_from(e.at("rotation").at(r));
    cam.extrinsic.translation = vec3_from(e.at("translation"));
    cam.validate();
    s.rig.push_back(cam);
  }
  if (s.lidar_points.empty()) throw std::runtime_error("scene " + s.id + " has no LiDAR points");
  return s;
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << scene_to_json(scene).dump() << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return scene_from_json(nlohmann::json::parse(is));
}

}  // namespace mmq
