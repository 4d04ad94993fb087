#pragma once

// Deterministic stand-ins for the LiDAR and camera backbones. Both compute a
// handful of hand-designed raw channels and lift them to the configured width
// with a fixed seeded random linear map.

#include <cstdint>
#include <string>
#include <vector>

#include "mmq/geometry.hpp"
#include "mmq/scene.hpp"
#include "mmq/tensor.hpp"

namespace mmq {

struct Modalities {
  bool lidar = true;
  bool camera = true;

  bool empty() const { return !lidar && !camera; }
  bool operator==(const Modalities&) const = default;
  /// "l", "c" or "lc".
  std::string str() const;
  static Modalities parse(const std::string& s);
};

inline constexpr std::size_t kLidarRawChannels = 11;

struct LidarStubConfig {
  BevGridSpec map;  // BEV feature map lattice, usually finer than the proposal grid
  std::size_t channels = 16;
  double elevated_z = 0.3;
  double context_radius = 3.0;
  std::uint64_t seed = 11;
};

struct CameraStubConfig {
  int stride = 8;
  std::size_t channels = 16;
  /// Boxes with any corner closer than this are skipped (straddling the image plane).
  double near_clip = 0.1;
  std::uint64_t seed = 23;
};

struct FeatureMapSet {
  Tensor lidar;  // [ny x nx x d_L]
  BevGridSpec lidar_spec;
  std::vector<Tensor> camera;  // per camera [H/stride x W/stride x d_C]
  std::vector<CameraModel> cameras;
  int camera_stride = 8;

  std::size_t lidar_channels() const { return lidar.defined() ? lidar.dim(2) : 0; }
  std::size_t camera_channels() const { return camera.empty() ? 0 : camera.front().dim(2); }
};

/// Per-cell raw channels before projection, [ny x nx x kLidarRawChannels]:
/// log(1+count), mean z, max z, z variance, occupancy, log(1+elevated count),
/// then neighborhood context of elevated points within context_radius: mean
/// dx/R, mean dy/R, log(1+count), max z, planar spread/R. Empty cells are zero.
std::vector<double> lidar_raw_channels(const std::vector<Vec3>& points, const LidarStubConfig& config);

Tensor lidar_stub_backbone(const Scene& scene, const LidarStubConfig& config);

/// Raw raster, [H/stride x W/stride x (K + 2)]: per-class inverse-depth
/// intensity, coverage, depth/30. Nearer boxes overwrite farther ones.
std::vector<double> camera_raw_raster(const Scene& scene, const CameraModel& cam, int stride, int num_classes,
                                      double near_clip = 0.1);

Tensor camera_stub_backbone(const Scene& scene, const CameraModel& cam, int num_classes,
                            const CameraStubConfig& config);

FeatureMapSet build_feature_maps(const Scene& scene, int num_classes, const LidarStubConfig& lidar,
                                 const CameraStubConfig& camera);

/// Fixed seeded projection [rows x cols], entries N(0, 1/rows).
std::vector<double> random_projection(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace mmq
