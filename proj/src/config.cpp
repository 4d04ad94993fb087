#include "mmq/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "mmq/errors.hpp"

namespace mmq {

using nlohmann::json;

namespace {

/// Reads optional keys of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

void read_vec3(ObjectReader& r, const std::string& key, Vec3& out) {
  std::vector<double> v;
  r.get(key, v);
  if (!r.has(key)) return;
  if (v.size() != 3) throw ConfigError(r.where(key) + " must have three entries");
  out = {v[0], v[1], v[2]};
}

json grid_json(const BevGridSpec& g) {
  return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min}, {"y_max", g.y_max}, {"nx", g.nx},
          {"ny", g.ny},       {"fixed_z", g.fixed_z}, {"z_min", g.z_min}, {"z_max", g.z_max}};
}

void read_grid(const json& j, const std::string& path, BevGridSpec& g) {
  ObjectReader r(j, path);
  r.get("x_min", g.x_min);
  r.get("x_max", g.x_max);
  r.get("y_min", g.y_min);
  r.get("y_max", g.y_max);
  r.get("nx", g.nx);
  r.get("ny", g.ny);
  r.get("fixed_z", g.fixed_z);
  r.get("z_min", g.z_min);
  r.get("z_max", g.z_max);
  r.finish();
}

json scene_json(const SceneConfig& s) {
  json classes = json::array();
  for (const auto& c : s.classes) classes.push_back({{"name", c.name}, {"size", vec3_json(c.size)}, {"weight", c.weight}});
  const auto& r = s.rig;
  return {{"range", grid_json(s.range)},
          {"classes", classes},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"size_jitter", s.size_jitter},
          {"placement_margin", s.placement_margin},
          {"max_overlap_iou", s.max_overlap_iou},
          {"max_placement_retries", s.max_placement_retries},
          {"ground_points", s.ground_points},
          {"surface_density", s.surface_density},
          {"density_range", s.density_range},
          {"lidar_height", s.lidar_height},
          {"rig",
           {{"cameras", r.cameras},
            {"width", r.width},
            {"height", r.height},
            {"hfov_deg", r.hfov_deg},
            {"yaw_deg", r.yaw_deg},
            {"mount", vec3_json(r.mount)}}}};
}

void read_scene(const json& j, SceneConfig& s) {
  ObjectReader r(j, "scene");
  if (const json* g = r.child("range")) read_grid(*g, "scene.range", s.range);
  if (const json* cls = r.child("classes")) {
    if (!cls->is_array() || cls->empty()) throw ConfigError("scene.classes must be a non-empty array");
    s.classes.clear();
    for (std::size_t i = 0; i < cls->size(); ++i) {
      ObjectReader cr(cls->at(i), "scene.classes[" + std::to_string(i) + "]");
      ClassPrior p;
      cr.get("name", p.name);
      read_vec3(cr, "size", p.size);
      cr.get("weight", p.weight);
      cr.finish();
      s.classes.push_back(p);
    }
  }
  r.get("min_objects", s.min_objects);
  r.get("max_objects", s.max_objects);
  r.get("size_jitter", s.size_jitter);
  r.get("placement_margin", s.placement_margin);
  r.get("max_overlap_iou", s.max_overlap_iou);
  r.get("max_placement_retries", s.max_placement_retries);
  r.get("ground_points", s.ground_points);
  r.get("surface_density", s.surface_density);
  r.get("density_range", s.density_range);
  r.get("lidar_height", s.lidar_height);
  if (const json* rig = r.child("rig")) {
    ObjectReader rr(*rig, "scene.rig");
    rr.get("cameras", s.rig.cameras);
    rr.get("width", s.rig.width);
    rr.get("height", s.rig.height);
    rr.get("hfov_deg", s.rig.hfov_deg);
    rr.get("yaw_deg", s.rig.yaw_deg);
    read_vec3(rr, "mount", s.rig.mount);
    rr.finish();
  }
  r.finish();
}

std::string pattern_name(SamplingPattern p) { return p == SamplingPattern::kPoint ? "point" : "cross"; }

SamplingPattern parse_pattern(const std::string& s) {
  if (s == "point") return SamplingPattern::kPoint;
  if (s == "cross") return SamplingPattern::kCross;
  throw ConfigError("model.sampling must be 'point' or 'cross', got '" + s + "'");
}

json model_json(const ModelConfig& m) {
  return {{"grid", grid_json(m.grid)},
          {"dense_proposals", m.grid.cells()},
          {"lidar",
           {{"map", grid_json(m.lidar.map)},
            {"channels", m.lidar.channels},
            {"elevated_z", m.lidar.elevated_z},
            {"context_radius", m.lidar.context_radius},
            {"seed", m.lidar.seed}}},
          {"camera",
           {{"stride", m.camera.stride},
            {"channels", m.camera.channels},
            {"near_clip", m.camera.near_clip},
            {"seed", m.camera.seed}}},
          {"modalities", m.modalities.str()},
          {"init", to_string(m.init)},
          {"queries", m.queries},
          {"width", m.width},
          {"heads", m.heads},
          {"layers", m.layers},
          {"num_classes", m.num_classes},
          {"refine_locations", m.refine_locations},
          {"sampling", pattern_name(m.pattern)},
          {"prior_prob", m.prior_prob},
          {"seed", m.seed}};
}

void read_model(const json& j, ModelConfig& m) {
  ObjectReader r(j, "model");
  if (const json* g = r.child("grid")) read_grid(*g, "model.grid", m.grid);
  if (const json* l = r.child("lidar")) {
    ObjectReader lr(*l, "model.lidar");
    if (const json* g = lr.child("map")) read_grid(*g, "model.lidar.map", m.lidar.map);
    lr.get("channels", m.lidar.channels);
    lr.get("elevated_z", m.lidar.elevated_z);
    lr.get("context_radius", m.lidar.context_radius);
    lr.get("seed", m.lidar.seed);
    lr.finish();
  }
  if (const json* c = r.child("camera")) {
    ObjectReader cr(*c, "model.camera");
    cr.get("stride", m.camera.stride);
    cr.get("channels", m.camera.channels);
    cr.get("near_clip", m.camera.near_clip);
    cr.get("seed", m.camera.seed);
    cr.finish();
  }
  std::string text = m.modalities.str();
  r.get("modalities", text);
  try {
    m.modalities = Modalities::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model.modalities: ") + e.what());
  }
  text = to_string(m.init);
  r.get("init", text);
  m.init = parse_init_strategy(text);
  r.get("queries", m.queries);
  r.get("width", m.width);
  r.get("heads", m.heads);
  r.get("layers", m.layers);
  r.get("refine_locations", m.refine_locations);
  text = pattern_name(m.pattern);
  r.get("sampling", text);
  m.pattern = parse_pattern(text);
  r.get("prior_prob", m.prior_prob);
  r.get("seed", m.seed);
  // Derived fields are accepted when consistent.
  std::size_t dense = m.grid.cells();
  r.get("dense_proposals", dense);
  if (dense != m.grid.cells()) {
    throw ConfigError("model.dense_proposals = " + std::to_string(dense) + " disagrees with grid " +
                      std::to_string(m.grid.nx) + " x " + std::to_string(m.grid.ny));
  }
  int k = m.num_classes;
  r.get("num_classes", k);
  m.num_classes = k;
  r.finish();
}

json train_json(const TrainConfig& t) {
  const auto& w = t.loss;
  return {{"epochs", t.epochs},
          {"max_steps", t.max_steps},
          {"shuffle_seed", t.shuffle_seed},
          {"checkpoint_every", t.checkpoint_every},
          {"adam", {{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
          {"loss",
           {{"cls", w.cls},
            {"reg", w.reg},
            {"heatmap", w.heatmap},
            {"dense", w.dense},
            {"layer", w.layer},
            {"focal_alpha", w.focal_alpha},
            {"focal_gamma", w.focal_gamma},
            {"heatmap_gamma", w.heatmap_gamma},
            {"heatmap_beta", w.heatmap_beta},
            {"background_focal", w.background_focal},
            {"use_heatmap", w.use_heatmap}}},
          {"heatmap_target", {{"min_overlap", t.heatmap.min_overlap}, {"min_radius", t.heatmap.min_radius}}}};
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.get("epochs", t.epochs);
  r.get("max_steps", t.max_steps);
  r.get("shuffle_seed", t.shuffle_seed);
  r.get("checkpoint_every", t.checkpoint_every);
  if (const json* a = r.child("adam")) {
    ObjectReader ar(*a, "train.adam");
    ar.get("lr", t.adam.lr);
    ar.get("beta1", t.adam.beta1);
    ar.get("beta2", t.adam.beta2);
    ar.get("eps", t.adam.eps);
    ar.finish();
  }
  if (const json* l = r.child("loss")) {
    ObjectReader lr(*l, "train.loss");
    auto& w = t.loss;
    lr.get("cls", w.cls);
    lr.get("reg", w.reg);
    lr.get("heatmap", w.heatmap);
    lr.get("dense", w.dense);
    lr.get("layer", w.layer);
    lr.get("focal_alpha", w.focal_alpha);
    lr.get("focal_gamma", w.focal_gamma);
    lr.get("heatmap_gamma", w.heatmap_gamma);
    lr.get("heatmap_beta", w.heatmap_beta);
    lr.get("background_focal", w.background_focal);
    lr.get("use_heatmap", w.use_heatmap);
    lr.finish();
  }
  if (const json* h = r.child("heatmap_target")) {
    ObjectReader hr(*h, "train.heatmap_target");
    hr.get("min_overlap", t.heatmap.min_overlap);
    hr.get("min_radius", t.heatmap.min_radius);
    hr.finish();
  }
  r.finish();
}

}  // namespace

void RunConfig::resolve() {
  scene.validate();
  model.num_classes = scene.num_classes();
  model.validate();
  train.validate();
  if (eval.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (double t : eval.thresholds) {
    if (!(t > 0.0)) throw ConfigError("eval.thresholds must be positive");
  }
  if (!(eval.recall_radius > 0.0)) throw ConfigError("eval.recall_radius must be positive");
  if (bench.reps == 0 || bench.scenes == 0) throw ConfigError("bench.reps and bench.scenes must be positive");
}

json config_to_json(const RunConfig& c) {
  return {{"scene", scene_json(c.scene)},
          {"model", model_json(c.model)},
          {"train", train_json(c.train)},
          {"eval", {{"thresholds", c.eval.thresholds}, {"recall_radius", c.eval.recall_radius}}},
          {"bench", {{"reps", c.bench.reps}, {"warmup", c.bench.warmup}, {"scenes", c.bench.scenes}}},
          {"paths", {{"scenes", c.paths.scenes}, {"weights", c.paths.weights}, {"output", c.paths.output}}},
          {"threads", c.threads}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  if (const json* s = r.child("scene")) read_scene(*s, c.scene);
  if (const json* m = r.child("model")) read_model(*m, c.model);
  if (const json* t = r.child("train")) read_train(*t, c.train);
  if (const json* e = r.child("eval")) {
    ObjectReader er(*e, "eval");
    er.get("thresholds", c.eval.thresholds);
    er.get("recall_radius", c.eval.recall_radius);
    er.finish();
  }
  if (const json* b = r.child("bench")) {
    ObjectReader br(*b, "bench");
    br.get("reps", c.bench.reps);
    br.get("warmup", c.bench.warmup);
    br.get("scenes", c.bench.scenes);
    br.finish();
  }
  if (const json* p = r.child("paths")) {
    ObjectReader pr(*p, "paths");
    pr.get("scenes", c.paths.scenes);
    pr.get("weights", c.paths.weights);
    pr.get("output", c.paths.output);
    pr.finish();
  }
  r.get("threads", c.threads);
  r.finish();
  const int declared = c.model.num_classes;
  c.resolve();
  if (j.contains("model") && j.at("model").contains("num_classes") && declared != c.model.num_classes) {
    throw ConfigError("model.num_classes = " + std::to_string(declared) + " disagrees with " +
                      std::to_string(c.model.num_classes) + " scene classes");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& config) { return fnv1a_hex(config_to_json(config).dump()); }

std::string scene_config_hash(const SceneConfig& config) { return fnv1a_hex(scene_json(config).dump()); }

}  // namespace mmq
