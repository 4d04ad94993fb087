#pragma once

// Ego frame: x forward, y left, z up (meters). Camera frame: x right, y down,
// z along the optical axis.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mmq {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(const Mat3& m, const Vec3& v);
Mat3 transpose(const Mat3& m);
double det(const Mat3& m);
Mat3 identity3();
/// Rotation about +z.
Mat3 rot_z(double yaw);

/// Rigid transform p' = R p + t.
struct Pose {
  Mat3 rotation = identity3();
  Vec3 translation{0.0, 0.0, 0.0};

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  /// RᵀR = I and det R = +1 within `tol`.
  bool is_rigid(double tol = 1e-9) const;
};

struct CameraModel {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Pose extrinsic;  // ego -> camera

  void validate() const;
};

struct ImagePoint {
  double u = 0.0, v = 0.0, depth = 0.0;
  bool valid = false;
};

/// Pinhole projection of an ego-frame point. Behind-camera points come back
/// with valid = false and finite (possibly meaningless) u, v.
ImagePoint project_to_image(const Vec3& p_ego, const CameraModel& cam);

/// Camera looking horizontally along ego heading `yaw`, mounted at `position`.
CameraModel make_camera(double yaw, const Vec3& position, int width, int height, double hfov_rad);

inline constexpr std::size_t kRegressionDim = 8;

struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};  // (w, l, h): lateral, along heading, vertical
  double yaw = 0.0;
  int class_id = 0;

  std::array<Vec3, 8> corners() const;
  /// BEV footprint corners, counter-clockwise.
  std::array<std::array<double, 2>, 4> footprint() const;
};

double wrap_angle(double a);

/// (dx, dy, dz, log w, log l, log h, sin yaw, cos yaw) relative to `anchor`.
std::array<double, kRegressionDim> encode_box(const Box3D& box, const Vec3& anchor);
Box3D decode_box(std::span<const double> r, const Vec3& anchor, int class_id = 0);

double bev_iou(const Box3D& a, const Box3D& b);
double bev_distance(const Vec3& a, const Vec3& b);

struct GridCoord {
  double gx = 0.0, gy = 0.0;
  bool valid = false;
};

/// Axis-aligned BEV lattice. Cell (ix, iy) spans [ix, ix+1) x [iy, iy+1) in
/// continuous grid coordinates.
struct BevGridSpec {
  double x_min = -24.0, x_max = 24.0;
  double y_min = -24.0, y_max = 24.0;
  std::size_t nx = 24, ny = 24;
  double fixed_z = 0.0;
  /// Vertical span used only to normalize positional embeddings.
  double z_min = -1.0, z_max = 3.0;

  std::size_t cells() const { return nx * ny; }
  double pitch_x() const { return (x_max - x_min) / static_cast<double>(nx); }
  double pitch_y() const { return (y_max - y_min) / static_cast<double>(ny); }
  bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  void validate() const;
  /// Canonical cell index of a world point (clamped to the grid).
  std::size_t cell_of(double x, double y) const;
  Vec3 cell_center(std::size_t index) const;
};

GridCoord world_to_bev(const Vec3& p, const BevGridSpec& spec);

/// Cell centers in canonical order (index = iy * nx + ix), all at fixed_z.
std::vector<Vec3> grid_proposal_locations(const BevGridSpec& spec);

}  // namespace mmq
