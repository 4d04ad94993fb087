#include "mmq/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmq/errors.hpp"

namespace mmq {

void add_bilinear_taps(RowMix& mix, std::size_t width, std::size_t height, double gx, double gy, double weight) {
  const double max_x = static_cast<double>(width) - 1.0, max_y = static_cast<double>(height) - 1.0;
  if (!(gx >= 0.0 && gx <= max_x && gy >= 0.0 && gy <= max_y)) {
    throw ContractError("bilinear sample at (" + std::to_string(gx) + ", " + std::to_string(gy) +
                        ") outside a " + std::to_string(width) + "x" + std::to_string(height) + " map");
  }
  std::size_t x0 = static_cast<std::size_t>(std::floor(gx));
  std::size_t y0 = static_cast<std::size_t>(std::floor(gy));
  if (width > 1) x0 = std::min(x0, width - 2);
  if (height > 1) y0 = std::min(y0, height - 2);
  const std::size_t x1 = width > 1 ? x0 + 1 : x0;
  const std::size_t y1 = height > 1 ? y0 + 1 : y0;
  const double fx = width > 1 ? gx - static_cast<double>(x0) : 0.0;
  const double fy = height > 1 ? gy - static_cast<double>(y0) : 0.0;
  const double taps[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const std::size_t rows[4] = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  for (int k = 0; k < 4; ++k) {
    if (taps[k] != 0.0) mix.add(rows[k], weight * taps[k]);
  }
}

Tensor bilinear_sample(const Tensor& map, double gx, double gy) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample needs an [H x W x c] map, got " + shape_str(map.shape()));
  RowMix mix;
  add_bilinear_taps(mix, map.dim(1), map.dim(0), gx, gy, 1.0);
  mix.finish_row();
  return reshape(mix_rows(map, mix), {map.dim(2)});
}

std::size_t SampledFeatures::rows() const {
  if (lidar.defined()) return lidar.dim(0);
  if (camera.defined()) return camera.dim(0);
  return 0;
}

namespace {

void add_pattern(RowMix& mix, std::size_t w, std::size_t h, double gx, double gy, double weight,
                 SamplingPattern pattern) {
  const double mx = static_cast<double>(w) - 1.0, my = static_cast<double>(h) - 1.0;
  gx = std::clamp(gx, 0.0, mx);
  gy = std::clamp(gy, 0.0, my);
  if (pattern == SamplingPattern::kPoint) {
    add_bilinear_taps(mix, w, h, gx, gy, weight);
    return;
  }
  const double offsets[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (const auto& o : offsets) {
    add_bilinear_taps(mix, w, h, std::clamp(gx + o[0], 0.0, mx), std::clamp(gy + o[1], 0.0, my), 0.25 * weight);
  }
}

}  // namespace

SampledFeatures sample_all_modalities(const std::vector<Vec3>& locations, const FeatureMapSet& maps,
                                      const Modalities& active, SamplingPattern pattern) {
  if (active.empty()) throw ConfigError("sampling needs at least one active modality");
  SampledFeatures out;
  const std::size_t n = locations.size();
  if (active.lidar) {
    if (!maps.lidar.defined()) throw ConfigError("LiDAR modality active but no LiDAR feature map");
    const std::size_t w = maps.lidar.dim(1), h = maps.lidar.dim(0);
    RowMix mix;
    out.lidar_valid.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = world_to_bev(locations[i], maps.lidar_spec);
      if (g.valid) {
        // Map nodes sit at cell centers.
        add_pattern(mix, w, h, g.gx - 0.5, g.gy - 0.5, 1.0, pattern);
        out.lidar_valid[i] = 1;
      }
      mix.finish_row();
    }
    out.lidar = mix_rows(maps.lidar, mix);
  }
  if (active.camera) {
    if (maps.camera.empty()) throw ConfigError("camera modality active but no camera feature maps");
    const std::size_t nc = maps.camera.size();
    std::vector<std::vector<ImagePoint>> hits(nc, std::vector<ImagePoint>(n));
    std::vector<int> valid_count(n, 0);
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t i = 0; i < n; ++i) {
        hits[c][i] = project_to_image(locations[i], maps.cameras[c]);
        valid_count[i] += hits[c][i].valid ? 1 : 0;
      }
    out.camera_valid.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) out.camera_valid[i] = valid_count[i] > 0;
    const double s = static_cast<double>(maps.camera_stride);
    for (std::size_t c = 0; c < nc; ++c) {
      const auto& map = maps.camera[c];
      const std::size_t w = map.dim(1), h = map.dim(0);
      RowMix mix;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& ip = hits[c][i];
        if (ip.valid) add_pattern(mix, w, h, ip.u / s - 0.5, ip.v / s - 0.5, 1.0 / valid_count[i], pattern);
        mix.finish_row();
      }
      auto part = mix_rows(map, mix);
      out.camera = c == 0 ? part : add(out.camera, part);
    }
  }
  return out;
}

SampledFeatures sample_all_modalities(const Vec3& location, const FeatureMapSet& maps, const Modalities& active,
                                      SamplingPattern pattern) {
  return sample_all_modalities(std::vector<Vec3>{location}, maps, active, pattern);
}

FusionMlp::FusionMlp(const Modalities& modalities, std::size_t lidar_width, std::size_t camera_width,
                     std::size_t out_width, Rng& rng)
    : modalities_(modalities) {
  if (modalities.empty()) throw ConfigError("fusion needs at least one modality");
  const std::size_t in = (modalities.lidar ? lidar_width : 0) + (modalities.camera ? camera_width : 0);
  first_ = Linear(in, out_width, rng);
  if (modalities.lidar && modalities.camera) second_ = Linear(out_width, out_width, rng);
}

std::size_t FusionMlp::output_width() const {
  return is_linear() ? first_.out_features() : second_.out_features();
}

Tensor FusionMlp::operator()(const SampledFeatures& f) const {
  std::vector<Tensor> parts;
  if (f.lidar.defined()) parts.push_back(f.lidar);
  if (f.camera.defined()) parts.push_back(f.camera);
  if (parts.empty()) throw ShapeError("fusion received no sampled features");
  Tensor x = parts.size() == 1 ? parts.front() : concat_cols(parts);
  const Modalities given{f.lidar.defined(), f.camera.defined()};
  if (x.dim(1) != input_width() || !(given == modalities_)) {
    throw ShapeError("fusion input width mismatch: network expects " + std::to_string(input_width()) + " (" +
                     modalities_.str() + ") but sampled features are " + std::to_string(x.dim(1)) + " wide (" +
                     given.str() + ")");
  }
  Tensor y = first_(x);
  if (is_linear()) return y;
  return second_(relu(y));
}

NamedParams FusionMlp::parameters() const {
  NamedParams out;
  append_params(out, "0.", first_.parameters());
  if (!is_linear()) append_params(out, "1.", second_.parameters());
  return out;
}

std::vector<double> sine_positional_embedding(const Vec3& location, const BevGridSpec& range, std::size_t d) {
  if (d == 0 || d % 6 != 0) {
    throw ConfigError("positional embedding width " + std::to_string(d) + " is not a multiple of 6");
  }
  const std::size_t per_axis = d / 3, pairs = per_axis / 2;
  const double lo[3] = {range.x_min, range.y_min, range.z_min};
  const double hi[3] = {range.x_max, range.y_max, range.z_max};
  constexpr double two_pi = 6.283185307179586476925286766559;
  std::vector<double> out(d);
  for (std::size_t a = 0; a < 3; ++a) {
    const double t = (location[a] - lo[a]) / (hi[a] - lo[a]) * two_pi;
    for (std::size_t k = 0; k < pairs; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(per_axis));
      out[a * per_axis + 2 * k] = std::sin(t * freq);
      out[a * per_axis + 2 * k + 1] = std::cos(t * freq);
    }
  }
  return out;
}

Tensor positional_embeddings(const std::vector<Vec3>& locations, const BevGridSpec& range, std::size_t d) {
  std::vector<double> values;
  values.reserve(locations.size() * d);
  for (const auto& l : locations) {
    auto pe = sine_positional_embedding(l, range, d);
    values.insert(values.end(), pe.begin(), pe.end());
  }
  return Tensor::from({locations.size(), d}, std::move(values));
}

}  // namespace mmq
