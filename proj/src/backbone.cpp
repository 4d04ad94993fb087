#include "mmq/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmq/errors.hpp"
#include "mmq/random.hpp"

namespace mmq {

std::string Modalities::str() const {
  std::string s;
  if (lidar) s += 'l';
  if (camera) s += 'c';
  return s;
}

Modalities Modalities::parse(const std::string& s) {
  if (s == "l") return {true, false};
  if (s == "c") return {false, true};
  if (s == "lc" || s == "cl") return {true, true};
  throw ConfigError("unknown modality set '" + s + "' (expected l, c or lc)");
}

std::vector<double> random_projection(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9a0));
  std::vector<double> m(rows * cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : m) v = rng.normal() * s;
  return m;
}

namespace {

std::vector<double> project_channels(const std::vector<double>& raw, std::size_t pixels, std::size_t raw_c,
                                     std::size_t out_c, std::uint64_t seed) {
  const auto proj = random_projection(raw_c, out_c, seed);
  std::vector<double> out(pixels * out_c, 0.0);
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t r = 0; r < raw_c; ++r) {
      const double v = raw[p * raw_c + r];
      if (v == 0.0) continue;
      for (std::size_t c = 0; c < out_c; ++c) out[p * out_c + c] += v * proj[r * out_c + c];
    }
  return out;
}

}  // namespace

std::vector<double> lidar_raw_channels(const std::vector<Vec3>& points, const LidarStubConfig& config) {
  const auto& g = config.map;
  g.validate();
  const std::size_t nx = g.nx, ny = g.ny, R = kLidarRawChannels;
  // Canonical point order makes every accumulation independent of input order.
  std::vector<Vec3> pts;
  pts.reserve(points.size());
  for (const auto& p : points)
    if (g.contains(p[0], p[1])) pts.push_back(p);
  std::sort(pts.begin(), pts.end());

  std::vector<std::vector<std::size_t>> bucket(nx * ny), elevated(nx * ny);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto cell = g.cell_of(pts[i][0], pts[i][1]);
    bucket[cell].push_back(i);
    if (pts[i][2] > config.elevated_z) elevated[cell].push_back(i);
  }

  std::vector<double> raw(nx * ny * R, 0.0);
  const double radius = config.context_radius;
  const auto reach_x = static_cast<long>(std::ceil(radius / g.pitch_x()));
  const auto reach_y = static_cast<long>(std::ceil(radius / g.pitch_y()));
  for (std::size_t cell = 0; cell < nx * ny; ++cell) {
    const auto& b = bucket[cell];
    if (b.empty()) continue;
    double* f = raw.data() + cell * R;
    double zsum = 0.0, zmax = -1e300;
    for (auto i : b) {
      zsum += pts[i][2];
      zmax = std::max(zmax, pts[i][2]);
    }
    const double n = static_cast<double>(b.size());
    const double zmean = zsum / n;
    double zvar = 0.0;
    for (auto i : b) zvar += (pts[i][2] - zmean) * (pts[i][2] - zmean);
    f[0] = std::log1p(n);
    f[1] = zmean;
    f[2] = zmax;
    f[3] = zvar / n;
    f[4] = 1.0;
    f[5] = std::log1p(static_cast<double>(elevated[cell].size()));

    const Vec3 c = g.cell_center(cell);
    const long ix = static_cast<long>(cell % nx), iy = static_cast<long>(cell / nx);
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, hmax = 0.0;
    std::size_t count = 0;
    for (long y = std::max(0L, iy - reach_y); y <= std::min<long>(static_cast<long>(ny) - 1, iy + reach_y); ++y) {
      for (long x = std::max(0L, ix - reach_x); x <= std::min<long>(static_cast<long>(nx) - 1, ix + reach_x); ++x) {
        for (auto i : elevated[static_cast<std::size_t>(y) * nx + static_cast<std::size_t>(x)]) {
          const double dx = pts[i][0] - c[0], dy = pts[i][1] - c[1];
          if (dx * dx + dy * dy > radius * radius) continue;
          sx += dx;
          sy += dy;
          sxx += dx * dx;
          syy += dy * dy;
          hmax = std::max(hmax, pts[i][2]);
          ++count;
        }
      }
    }
    if (count > 0) {
      const double k = static_cast<double>(count);
      const double mx = sx / k, my = sy / k;
      f[6] = mx / radius;
      f[7] = my / radius;
      f[8] = std::log1p(k);
      f[9] = hmax;
      f[10] = std::sqrt(std::max(0.0, sxx / k - mx * mx + syy / k - my * my)) / radius;
    }
  }
  return raw;
}

Tensor lidar_stub_backbone(const Scene& scene, const LidarStubConfig& config) {
  const auto raw = lidar_raw_channels(scene.lidar_points, config);
  const std::size_t pixels = config.map.nx * config.map.ny;
  return Tensor::from({config.map.ny, config.map.nx, config.channels},
                      project_channels(raw, pixels, kLidarRawChannels, config.channels, config.seed));
}

namespace {

using P2 = std::array<double, 2>;

double cross(const P2& o, const P2& a, const P2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<P2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<P2>& hull, const P2& p) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0.0) return false;
  }
  return true;
}

}  // namespace

std::vector<double> camera_raw_raster(const Scene& scene, const CameraModel& cam, int stride, int num_classes,
                                      double near_clip) {
  if (stride <= 0 || cam.width % stride != 0 || cam.height % stride != 0) {
    throw ConfigError("camera stride " + std::to_string(stride) + " does not divide image size " +
                      std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
  const int w = cam.width / stride, h = cam.height / stride;
  const std::size_t C = static_cast<std::size_t>(num_classes) + 2;
  std::vector<double> raw(static_cast<std::size_t>(w * h) * C, 0.0);

  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < scene.gt_boxes.size(); ++i) {
    order.emplace_back(cam.extrinsic.apply(scene.gt_boxes[i].center)[2], i);
  }
  // Painter's algorithm: far to near, index breaks ties.
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });

  for (const auto& [depth, idx] : order) {
    const auto& box = scene.gt_boxes[idx];
    std::vector<P2> proj;
    bool usable = depth > near_clip;
    for (const auto& corner : box.corners()) {
      const Vec3 pc = cam.extrinsic.apply(corner);
      if (pc[2] < near_clip) {
        usable = false;
        break;
      }
      proj.push_back({(cam.fx * pc[0] / pc[2] + cam.cx) / stride, (cam.fy * pc[1] / pc[2] + cam.cy) / stride});
    }
    if (!usable) continue;
    const auto hull = convex_hull(proj);
    if (hull.size() < 3) continue;
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (const auto& p : hull) {
      umin = std::min(umin, p[0]);
      umax = std::max(umax, p[0]);
      vmin = std::min(vmin, p[1]);
      vmax = std::max(vmax, p[1]);
    }
    const int i0 = std::max(0, static_cast<int>(std::floor(umin - 0.5)));
    const int i1 = std::min(w - 1, static_cast<int>(std::ceil(umax - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5)));
    const int j1 = std::min(h - 1, static_cast<int>(std::ceil(vmax - 0.5)));
    const double intensity = std::min(1.0, 5.0 / depth);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        if (!inside_hull(hull, {i + 0.5, j + 0.5})) continue;
        double* f = raw.data() + (static_cast<std::size_t>(j) * w + i) * C;
        std::fill(f, f + C, 0.0);
        f[box.class_id] = intensity;
        f[num_classes] = 1.0;
        f[num_classes + 1] = depth / 30.0;
      }
    }
  }
  return raw;
}

Tensor camera_stub_backbone(const Scene& scene, const CameraModel& cam, int num_classes,
                            const CameraStubConfig& config) {
  const auto raw = camera_raw_raster(scene, cam, config.stride, num_classes, config.near_clip);
  const std::size_t w = static_cast<std::size_t>(cam.width / config.stride);
  const std::size_t h = static_cast<std::size_t>(cam.height / config.stride);
  const std::size_t C = static_cast<std::size_t>(num_classes) + 2;
  return Tensor::from({h, w, config.channels}, project_channels(raw, w * h, C, config.channels, config.seed));
}

FeatureMapSet build_feature_maps(const Scene& scene, int num_classes, const LidarStubConfig& lidar,
                                 const CameraStubConfig& camera) {
  FeatureMapSet maps;
  maps.lidar = lidar_stub_backbone(scene, lidar);
  maps.lidar_spec = lidar.map;
  maps.cameras = scene.rig;
  maps.camera_stride = camera.stride;
  for (const auto& cam : scene.rig) maps.camera.push_back(camera_stub_backbone(scene, cam, num_classes, camera));
  return maps;
}

}  // namespace mmq
