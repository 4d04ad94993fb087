#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmq/geometry.hpp"

namespace mmq {

struct ClassPrior {
  std::string name;
  Vec3 size;  // mean (w, l, h)
  double weight = 1.0;
};

std::vector<ClassPrior> default_class_priors();

struct RigConfig {
  int cameras = 2;
  int width = 192;
  int height = 128;
  double hfov_deg = 90.0;
  /// Cameras fan out symmetrically at +-yaw_deg around the ego heading.
  double yaw_deg = 35.0;
  Vec3 mount{1.5, 0.0, 1.6};
};

std::vector<CameraModel> make_rig(const RigConfig& rig);

struct SceneConfig {
  BevGridSpec range;  // detection range; object centers land inside it
  std::vector<ClassPrior> classes = default_class_priors();
  int min_objects = 1;
  int max_objects = 20;
  double size_jitter = 0.1;
  double placement_margin = 1.0;
  double max_overlap_iou = 0.1;
  int max_placement_retries = 200;
  int ground_points = 3000;
  double surface_density = 4.0;  // points per m^2 at the reference range
  double density_range = 10.0;   // meters; density halves at this range
  double lidar_height = 1.8;
  RigConfig rig;

  int num_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<Box3D> gt_boxes;
  std::vector<Vec3> lidar_points;
  std::vector<CameraModel> rig;
};

/// Fully determined by (config, seed). Throws GenerationError when the
/// requested object count cannot be placed within the retry budget.
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

inline constexpr const char* kSceneSchema = "mmq.scene";
inline constexpr int kSceneSchemaVersion = 1;

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

}  // namespace mmq
