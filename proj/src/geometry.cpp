#include "mmq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mmq/errors.hpp"

namespace mmq {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 operator*(const Mat3& m, const Vec3& v) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i) out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
  return out;
}

Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

double det(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Mat3 identity3() { return Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 rot_z(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return Mat3{{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = transpose(rotation);
  Vec3 t = inv.rotation * translation;
  inv.translation = {-t[0], -t[1], -t[2]};
  return inv;
}

bool Pose::is_rigid(double tol) const {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rotation[k][i] * rotation[k][j];
      if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  }
  return std::fabs(det(rotation) - 1.0) <= tol;
}

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    throw ConfigError("camera principal point outside the image");
  }
  if (!extrinsic.is_rigid()) throw ConfigError("camera extrinsic is not a rigid transform");
}

ImagePoint project_to_image(const Vec3& p_ego, const CameraModel& cam) {
  const Vec3 pc = cam.extrinsic.apply(p_ego);
  ImagePoint ip;
  ip.depth = pc[2];
  if (!(pc[2] > 0.0)) return ip;
  ip.u = cam.fx * pc[0] / pc[2] + cam.cx;
  ip.v = cam.fy * pc[1] / pc[2] + cam.cy;
  ip.valid = ip.u >= 0.0 && ip.u < cam.width && ip.v >= 0.0 && ip.v < cam.height;
  return ip;
}

CameraModel make_camera(double yaw, const Vec3& position, int width, int height, double hfov_rad) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.fx = 0.5 * width / std::tan(0.5 * hfov_rad);
  cam.fy = cam.fx;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  const double c = std::cos(yaw), s = std::sin(yaw);
  cam.extrinsic.rotation = Mat3{{{s, -c, 0.0}, {0.0, 0.0, -1.0}, {c, s, 0.0}}};
  const Vec3 t = cam.extrinsic.rotation * position;
  cam.extrinsic.translation = {-t[0], -t[1], -t[2]};
  return cam;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0.0) a += 2.0 * pi;
  a -= pi;
  // fmod lands exactly on -pi for odd multiples; the principal branch is (-pi, pi].
  return a <= -pi ? pi : a;
}

std::array<Vec3, 8> Box3D::corners() const {
  const Mat3 r = rot_z(yaw);
  std::array<Vec3, 8> out{};
  std::size_t k = 0;
  for (double sx : {-0.5, 0.5})
    for (double sy : {-0.5, 0.5})
      for (double sz : {-0.5, 0.5}) out[k++] = center + r * Vec3{sx * size[1], sy * size[0], sz * size[2]};
  return out;
}

std::array<std::array<double, 2>, 4> Box3D::footprint() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = 0.5 * size[1], hw = 0.5 * size[0];
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {center[0] + c * local[i][0] - s * local[i][1], center[1] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

std::array<double, kRegressionDim> encode_box(const Box3D& box, const Vec3& anchor) {
  for (double s : box.size) {
    if (!(s > 0.0)) throw DomainError("box size must be positive, got " + std::to_string(s));
  }
  return {box.center[0] - anchor[0], box.center[1] - anchor[1], box.center[2] - anchor[2],
          std::log(box.size[0]),     std::log(box.size[1]),     std::log(box.size[2]),
          std::sin(box.yaw),         std::cos(box.yaw)};
}

Box3D decode_box(std::span<const double> r, const Vec3& anchor, int class_id) {
  if (r.size() != kRegressionDim) throw ShapeError("decode_box needs an 8-dim regression vector");
  Box3D b;
  b.center = {anchor[0] + r[0], anchor[1] + r[1], anchor[2] + r[2]};
  b.size = {std::exp(r[3]), std::exp(r[4]), std::exp(r[5])};
  b.yaw = wrap_angle(std::atan2(r[6], r[7]));
  b.class_id = class_id;
  return b;
}

namespace {

using Poly = std::vector<std::array<double, 2>>;

double cross2(const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double poly_area(const Poly& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - v[0] * u[1];
  }
  return 0.5 * std::fabs(a);
}

// Sutherland-Hodgman against a convex counter-clockwise clip polygon.
Poly clip(const Poly& subject, const Poly& clipper) {
  Poly out = subject;
  for (std::size_t i = 0; i < clipper.size() && !out.empty(); ++i) {
    const auto& a = clipper[i];
    const auto& b = clipper[(i + 1) % clipper.size()];
    Poly in = std::move(out);
    out.clear();
    for (std::size_t j = 0; j < in.size(); ++j) {
      const auto& p = in[j];
      const auto& q = in[(j + 1) % in.size()];
      const double sp = cross2(a, b, p), sq = cross2(a, b, q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
  }
  return out;
}

}  // namespace

double bev_iou(const Box3D& a, const Box3D& b) {
  const auto fa = a.footprint();
  const auto fb = b.footprint();
  Poly pa(fa.begin(), fa.end()), pb(fb.begin(), fb.end());
  const double inter = poly_area(clip(pa, pb));
  const double uni = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double bev_distance(const Vec3& a, const Vec3& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void BevGridSpec::validate() const {
  if (!(x_max > x_min && y_max > y_min)) throw ConfigError("BEV range must be non-empty");
  if (nx == 0 || ny == 0) throw ConfigError("BEV grid needs at least one cell per axis");
  if (!std::isfinite(fixed_z)) throw ConfigError("fixed_z must be finite");
  if (!(z_max > z_min)) throw ConfigError("z range must be non-empty");
}

std::size_t BevGridSpec::cell_of(double x, double y) const {
  auto ix = static_cast<long>(std::floor((x - x_min) / pitch_x()));
  auto iy = static_cast<long>(std::floor((y - y_min) / pitch_y()));
  ix = std::clamp<long>(ix, 0, static_cast<long>(nx) - 1);
  iy = std::clamp<long>(iy, 0, static_cast<long>(ny) - 1);
  return static_cast<std::size_t>(iy) * nx + static_cast<std::size_t>(ix);
}

Vec3 BevGridSpec::cell_center(std::size_t index) const {
  const std::size_t ix = index % nx, iy = index / nx;
  return {x_min + (static_cast<double>(ix) + 0.5) * pitch_x(), y_min + (static_cast<double>(iy) + 0.5) * pitch_y(),
          fixed_z};
}

GridCoord world_to_bev(const Vec3& p, const BevGridSpec& spec) {
  GridCoord g;
  g.gx = (p[0] - spec.x_min) / spec.pitch_x();
  g.gy = (p[1] - spec.y_min) / spec.pitch_y();
  g.valid = spec.contains(p[0], p[1]);
  return g;
}

std::vector<Vec3> grid_proposal_locations(const BevGridSpec& spec) {
  spec.validate();
  std::vector<Vec3> out;
  out.reserve(spec.cells());
  for (std::size_t i = 0; i < spec.cells(); ++i) out.push_back(spec.cell_center(i));
  return out;
}

}  // namespace mmq
