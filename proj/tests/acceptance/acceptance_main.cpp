// Acceptance harness: one PASS/FAIL line per criterion, plus a JSON summary
// in the work directory. Exit status is 0 when every criterion was evaluated
// and reported; --strict additionally fails on any FAIL line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "mmq/evalbench.hpp"
#include "mmq/gradcheck.hpp"
#include "mmq/hungarian.hpp"
#include "mmq/losses.hpp"
#include "mmq/model.hpp"
#include "mmq/random.hpp"
#include "mmq/sampling.hpp"
#include "mmq/scene.hpp"
#include "mmq/train.hpp"

namespace {

using namespace mmq;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

// ---------------------------------------------------------------------------
// Shared experiment fixtures.

constexpr std::size_t kTrainScenes = 200;
constexpr std::uint64_t kTrainSeed = 1000;
constexpr std::size_t kTestScenes = 100;
constexpr std::uint64_t kTestSeed = 5000;
constexpr std::uint64_t kRecallSeed = 9000;
constexpr std::size_t kEpochs = 10;

std::vector<Scene> scene_range(const SceneConfig& sc, std::uint64_t first, std::size_t n) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(sc, first + i));
  return out;
}

std::vector<TrainSample> samples_for(const Model& model, const std::vector<Scene>& scenes) {
  std::vector<TrainSample> out;
  for (const auto& s : scenes) out.push_back(make_sample(model, s));
  return out;
}

struct Trained {
  std::unique_ptr<Model> model;
  double seconds = 0.0;
  bool diverged = false;
  std::string message;
};

Trained train(const ModelConfig& mc, const TrainConfig& tc, const std::vector<TrainSample>& samples) {
  Trained t;
  t.model = std::make_unique<Model>(mc);
  Trainer trainer(*t.model, tc);
  const auto t0 = Clock::now();
  const TrainResult r = trainer.run(samples);
  t.seconds = seconds_since(t0);
  t.diverged = r.diverged;
  t.message = r.message;
  return t;
}

TrainConfig train_config(std::size_t epochs, std::uint64_t shuffle_seed = 5) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.shuffle_seed = shuffle_seed;
  return tc;
}

ModelConfig cell_config(InitStrategy init, std::size_t queries, std::size_t layers) {
  ModelConfig mc;
  mc.init = init;
  mc.queries = queries;
  mc.layers = layers;
  return mc;
}

// Held-out scenes in the samples layout of the default backbone, shared by
// every experiment that uses the default sensor set.
struct Data {
  std::vector<TrainSample> train, test, recall;
};

Data& default_data() {
  static Data d = [] {
    const Model probe{ModelConfig{}};
    SceneConfig sc;
    Data out;
    out.train = samples_for(probe, scene_range(sc, kTrainSeed, kTrainScenes));
    out.test = samples_for(probe, scene_range(sc, kTestSeed, kTestScenes));
    SceneConfig few = sc;
    few.max_objects = 10;
    out.recall = samples_for(probe, scene_range(few, kRecallSeed, kTestScenes));
    return out;
  }();
  return d;
}

// Trained models reused across criteria, keyed by (strategy, M, L).
struct CellKey {
  InitStrategy init;
  std::size_t queries, layers;
  bool operator<(const CellKey& o) const {
    return std::tie(init, queries, layers) < std::tie(o.init, o.queries, o.layers);
  }
};

std::map<CellKey, Trained>& cells() {
  static std::map<CellKey, Trained> m;
  return m;
}

const Trained& cell(InitStrategy init, std::size_t queries, std::size_t layers) {
  auto& m = cells();
  const CellKey key{init, queries, layers};
  auto it = m.find(key);
  if (it == m.end()) {
    std::cerr << "  training " << to_string(init) << " M=" << queries << " L=" << layers << " ..." << std::flush;
    Trained t = train(cell_config(init, queries, layers), train_config(kEpochs), default_data().train);
    std::cerr << fmt(" %.1f s\n", t.seconds);
    it = m.emplace(key, std::move(t)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// 1. Hungarian oracle equivalence.

double exhaustive_min(const std::vector<double>& c, std::size_t rows, std::size_t cols) {
  const bool flip = rows > cols;
  const std::size_t n = flip ? cols : rows, m = flip ? rows : cols;
  auto at = [&](std::size_t i, std::size_t j) { return flip ? c[j * cols + i] : c[i * cols + j]; };
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> by_row(rows);
  double best = INFINITY;
  // Every injective map is a prefix of some permutation. Sums run in original
  // row order so equal assignments give bit-equal totals.
  do {
    std::fill(by_row.begin(), by_row.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) by_row[flip ? perm[i] : i] = at(i, perm[i]);
    double s = 0;
    for (double v : by_row) s += v;
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome criterion_hungarian() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto rows = static_cast<std::size_t>(rng.integer(1, 7));
    const auto cols = static_cast<std::size_t>(rng.integer(1, 7));
    std::vector<double> c(rows * cols);
    // Every third matrix has small integers, which makes ties common.
    for (auto& v : c) v = trial % 3 == 0 ? static_cast<double>(rng.integer(0, 4)) : rng.uniform(-50, 50);
    if (hungarian(c, rows, cols).total_cost != exhaustive_min(c, rows, cols)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mismatches == 0 && secs < 10.0;
  o.detail = fmt("1000 matrices (n, m <= 7), %zu mismatches, %.2f s", mismatches, secs);
  o.data = {{"mismatches", mismatches}, {"seconds", secs}};
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient suite.

// Scalar probe of a tensor-valued op: sum(y * w) with fixed random w.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = rng.uniform(-1, 1);
  return sum(mul(y, Tensor::from(y.shape(), w)));
}

Tensor rand_t(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), v, true);
}

// Values bounded away from zero, so relu and abs stay off their kink.
Tensor rand_off_zero(Shape shape, Rng& rng) {
  Tensor t = rand_t(std::move(shape), rng, 0.1, 1.0);
  for (auto& v : t.mutable_data())
    if (rng.uniform() < 0.5) v = -v;
  return t;
}

struct GradCase {
  std::string name;
  std::function<Tensor()> f;
  std::vector<NamedTensor> inputs;
  GradCheckOptions options{};
};

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  Rng rng(77);
  const Tensor a = rand_t({3, 4}, rng), b = rand_t({4, 5}, rng), c = rand_t({3, 4}, rng);
  const Tensor pos = rand_t({3, 4}, rng, 0.2, 2.0), off = rand_off_zero({3, 4}, rng);
  cases.push_back({"matmul", [=] { return probe(matmul(a, b), 1); }, {{"a", a}, {"b", b}}});
  cases.push_back({"transpose", [=] { return probe(transpose(a), 2); }, {{"a", a}}});
  cases.push_back({"add", [=] { return probe(add(a, c), 3); }, {{"a", a}, {"c", c}}});
  cases.push_back({"sub", [=] { return probe(sub(a, c), 4); }, {{"a", a}, {"c", c}}});
  cases.push_back({"mul", [=] { return probe(mul(a, c), 5); }, {{"a", a}, {"c", c}}});
  cases.push_back({"scale", [=] { return probe(scale(a, -2.5), 6); }, {{"a", a}}});
  cases.push_back({"add_scalar", [=] { return probe(add_scalar(a, 0.7), 7); }, {{"a", a}}});
  cases.push_back({"relu", [=] { return probe(relu(off), 8); }, {{"x", off}}});
  cases.push_back({"sigmoid", [=] { return probe(sigmoid(a), 9); }, {{"x", a}}});
  cases.push_back({"exp", [=] { return probe(exp(a), 10); }, {{"x", a}}});
  cases.push_back({"log", [=] { return probe(log(pos), 11); }, {{"x", pos}}});
  cases.push_back({"sin", [=] { return probe(sin(a), 12); }, {{"x", a}}});
  cases.push_back({"cos", [=] { return probe(cos(a), 13); }, {{"x", a}}});
  cases.push_back({"abs", [=] { return probe(abs(off), 14); }, {{"x", off}}});
  cases.push_back({"softmax_rows", [=] { return probe(softmax(a, 1), 15); }, {{"x", a}}});
  cases.push_back({"softmax_cols", [=] { return probe(softmax(a, 0), 16); }, {{"x", a}}});
  cases.push_back({"sum", [=] { return sum(mul(a, a)); }, {{"x", a}}});
  cases.push_back({"mean", [=] { return mean(mul(a, c)); }, {{"a", a}, {"c", c}}});
  cases.push_back({"reshape", [=] { return probe(reshape(a, {2, 6}), 17); }, {{"x", a}}});
  cases.push_back({"concat_cols", [=] { return probe(concat_cols({a, c}), 18); }, {{"a", a}, {"c", c}}});
  cases.push_back({"slice_cols", [=] { return probe(slice_cols(a, 1, 3), 19); }, {{"x", a}}});
  cases.push_back({"gather_rows", [=] { return probe(gather_rows(a, {2, 0, 2, 1}), 20); }, {{"x", a}}});
  cases.push_back({"scatter_rows", [=] { return probe(scatter_rows(a, {4, 0, 2}, 5), 21); }, {{"x", a}}});
  {
    const Tensor gain = rand_t({4}, rng, 0.5, 1.5), bias = rand_t({4}, rng);
    cases.push_back({"layer_norm", [=] { return probe(layer_norm(a, gain, bias), 22); },
                     {{"x", a}, {"gain", gain}, {"bias", bias}}});
  }
  {
    RowMix mix;
    mix.add(0, 0.25), mix.add(2, 0.75), mix.finish_row();
    mix.add(1, -1.0), mix.finish_row();
    mix.add(2, 0.5), mix.add(2, 0.5), mix.add(0, 2.0), mix.finish_row();
    cases.push_back({"mix_rows", [=] { return probe(mix_rows(a, mix), 23); }, {{"table", a}}});
  }
  {
    const Tensor map = rand_t({6, 7, 3}, rng);
    cases.push_back({"bilinear_sample", [=] { return probe(bilinear_sample(map, 2.3, 3.6), 24); }, {{"map", map}}});
  }
  {
    const Tensor prob = rand_t({5, 3}, rng, 0.05, 0.95);
    std::vector<double> target(15), mask(15);
    for (auto& t : target) t = rng.uniform() < 0.3 ? 1.0 : 0.0;
    for (auto& m : mask) m = rng.uniform() < 0.8 ? 1.0 : 0.0;
    cases.push_back({"focal_loss_sum", [=] { return focal_loss_sum(prob, target, mask, 0.25, 2.0); }, {{"prob", prob}}});
    std::vector<double> heat(15);
    for (auto& h : heat) h = rng.uniform();
    heat[4] = heat[11] = 1.0;
    cases.push_back({"penalty_reduced_focal", [=] { return penalty_reduced_focal(prob, heat, 2.0, 4.0); },
                     {{"pred", prob}}});
  }
  {
    Rng mr(5);
    const FusionMlp fusion(Modalities{true, true}, 6, 5, 12, mr);
    SampledFeatures sf;
    sf.lidar = rand_t({4, 6}, rng);
    sf.camera = rand_t({4, 5}, rng);
    std::vector<NamedTensor> in{{"lidar", sf.lidar}, {"camera", sf.camera}};
    for (const auto& p : fusion.parameters()) in.push_back(p);
    cases.push_back({"fusion_mlp", [=] { return probe(fusion(sf), 25); }, in});
  }
  {
    Rng mr(6);
    const Heads heads(12, 3, 0.01, mr);
    const Tensor x = rand_t({4, 12}, rng);
    std::vector<NamedTensor> in{{"x", x}};
    for (const auto& p : heads.parameters()) in.push_back(p);
    cases.push_back({"heads", [=] {
                       const HeadOutput h = heads(x);
                       return add(probe(h.probs, 26), probe(h.reg, 27));
                     },
                     in});
  }
  {
    Rng mr(7);
    const InputAgnosticQueries q(4, 12, mr);
    const BevGridSpec range;
    // The positional embedding reads detached locations, so features are
    // checked against the embedding and locations against the logits.
    cases.push_back({"input_agnostic_features", [=] { return probe(q(range).features, 28); },
                     {{"embedding", q.embedding}}});
    cases.push_back({"input_agnostic_locations", [=] { return probe(q(range).location_param, 29); },
                     {{"location_logits", q.location_logits}}});
  }
  {
    // Sampling into the real stub maps of a scene.
    ModelConfig mc;
    mc.lidar.map.nx = mc.lidar.map.ny = 12;
    mc.lidar.channels = 6;
    mc.camera.channels = 5;
    const Model model(mc);
    FeatureMapSet maps = model.feature_maps(generate_scene(SceneConfig{}, 31));
    maps.lidar = maps.lidar.clone(true);
    std::vector<NamedTensor> in{{"lidar_map", maps.lidar}};
    for (std::size_t k = 0; k < maps.camera.size(); ++k) {
      maps.camera[k] = maps.camera[k].clone(true);
      in.emplace_back("camera_map_" + std::to_string(k), maps.camera[k]);
    }
    const std::vector<Vec3> locs{{3.3, -2.1, 0.4}, {-10.7, 8.2, 1.0}, {12.5, 0.3, 0.0}};
    GradCheckOptions opt;
    opt.max_coords = 60;
    cases.push_back({"sample_all_modalities",
                     [=] {
                       const SampledFeatures sf = sample_all_modalities(locs, maps, Modalities{true, true});
                       return add(probe(sf.lidar, 30), probe(sf.camera, 31));
                     },
                     in, opt});
  }
  {
    Rng mr(8);
    const DecoderLayer layer(12, 2, {true, true}, 6, 5, mr);
    const Tensor x = rand_t({5, 12}, rng), pe = rand_t({5, 12}, rng);
    std::vector<NamedTensor> in{{"x", x}};
    for (const auto& p : layer.parameters()) in.push_back(p);
    cases.push_back({"self_attention", [=] { return probe(layer.self_attention(x, pe), 32); }, in});
  }
  return cases;
}

// Dense stage + heatmap + 2 decoder layers on a 2-object scene at the
// desk-scale defaults. Query locations are sampling coordinates and are
// held at the values selected by a forward pass.
GradCase total_loss_case(std::size_t& num_params) {
  ModelConfig mc;
  mc.layers = 2;
  auto model = std::make_shared<Model>(mc);
  model->decoder().refine_locations = false;
  SceneConfig sc;
  sc.min_objects = sc.max_objects = 2;
  const Scene scene = generate_scene(sc, 6);
  const auto maps = model->feature_maps(scene);
  QuerySet fixed;
  {
    NoGradGuard guard;
    fixed = model->forward(maps).queries;
  }
  const LossWeights w;
  GradCheckOptions opt;
  opt.max_coords = 6;
  opt.seed = 7;
  num_params = model->parameters().size();
  return {"total_loss",
          [=] {
            const auto& stage = *model->proposal();
            const DenseOutput dense = stage.dense_forward(maps, mc.modalities);
            QuerySet qs = fixed;
            qs.features = stage.embed(fixed.locations, maps, mc.modalities);
            std::vector<SetPrediction> layers;
            for (const auto& l : model->decoder().decode(qs, maps, mc.modalities))
              layers.push_back({l.heads.probs, l.heads.reg, l.anchors});
            const SetPrediction d{dense.heads.probs, dense.heads.reg, dense.anchor_tensor};
            return total_loss(&d, mc.grid, layers, scene.gt_boxes, w).value;
          },
          model->parameters(), opt};
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  auto cases = gradient_cases();
  std::size_t num_params = 0;
  cases.push_back(total_loss_case(num_params));
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  std::string worst_name, failures;
  json per_case = json::object();
  for (auto& c : cases) {
    const auto rep = check_gradients(c.f, c.inputs, c.options);
    per_case[c.name] = rep.max_rel_error;
    if (rep.max_rel_error > worst) worst = rep.max_rel_error, worst_name = c.name;
    if (!rep.passed || !(rep.max_rel_error < 1e-4)) {
      o.pass = false;
      failures += " " + c.name;
      std::cerr << "  gradient case " << c.name << " failed: " << rep.diagnostic << '\n';
    }
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 60.0;
  o.detail = fmt("%zu cases incl. total_loss over %zu parameter tensors, max rel err %.2e (%s), %.1f s", cases.size(),
                 num_params, worst, worst_name.c_str(), secs);
  if (!failures.empty()) o.detail += "; failed:" + failures;
  o.data = {{"max_rel_error", worst}, {"seconds", secs}, {"cases", per_case}};
  return o;
}

// ---------------------------------------------------------------------------
// 3. Definitional invariants.

Outcome criterion_invariants() {
  std::vector<std::string> broken;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) broken.push_back(what);
  };

  // c' - c = dx exactly, and re-sampled features equal embed(c').
  {
    const Model model{ModelConfig{}};
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto maps = model.feature_maps(generate_scene(SceneConfig{}, 400 + s));
      NoGradGuard guard;
      DenseOutput dense;
      const auto qs = initialize_queries(maps, *model.proposal(), 32, model.config().modalities, &dense);
      bool exact = true;
      for (std::size_t i = 0; i < qs.size(); ++i) {
        const std::size_t o = qs.origin[i];
        for (std::size_t k = 0; k < 3; ++k) {
          exact = exact && qs.offsets[i][k] == dense.heads.reg.at(o, k) &&
                  qs.locations[i][k] == dense.anchors[o][k] + dense.heads.reg.at(o, k);
        }
      }
      check(exact, "location update");
      const Tensor again = model.proposal()->embed(qs.locations, maps, model.config().modalities);
      check(std::equal(again.data().begin(), again.data().end(), qs.features.data().begin()), "re-sampling");
    }
  }
  // Top-M equals a full stable sort on (confidence desc, index asc).
  {
    Rng rng(3);
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
      const auto rows = static_cast<std::size_t>(rng.integer(1, 60));
      const std::size_t k = 3;
      const auto m = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(rows)));
      std::vector<double> scores(rows * k);
      for (auto& v : scores) v = trial % 2 ? rng.uniform() : 0.25 * static_cast<double>(rng.integer(0, 4));
      std::vector<std::size_t> order(rows);
      std::iota(order.begin(), order.end(), 0);
      auto conf = [&](std::size_t r) { return *std::max_element(&scores[r * k], &scores[r * k] + k); };
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return conf(x) > conf(y); });
      order.resize(m);
      ok = select_top_m(scores, rows, k, m).indices == order;
    }
    check(ok, "top-M oracle");
  }
  // Bilinear exactness at nodes.
  {
    Rng rng(4);
    const Tensor map = rand_t({9, 11, 4}, rng);
    bool ok = true;
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 11; ++x) {
        const Tensor v = bilinear_sample(map, static_cast<double>(x), static_cast<double>(y));
        for (std::size_t c = 0; c < 4; ++c) ok = ok && v[c] == map.data()[(y * 11 + x) * 4 + c];
      }
    check(ok, "bilinear nodes");
  }
  // Encode/decode round trip.
  double roundtrip = 0.0;
  {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
      const Box3D b{{rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-1, 3)},
                    {rng.uniform(0.3, 5), rng.uniform(0.3, 12), rng.uniform(0.5, 4)},
                    rng.uniform(-M_PI, M_PI),
                    0};
      const Vec3 anchor{rng.uniform(-30, 30), rng.uniform(-30, 30), 0};
      const auto r = encode_box(b, anchor);
      const Box3D d = decode_box(r, anchor);
      for (std::size_t k = 0; k < 3; ++k) {
        roundtrip = std::max(roundtrip, std::abs(d.center[k] - b.center[k]));
        roundtrip = std::max(roundtrip, std::abs(d.size[k] - b.size[k]));
      }
      roundtrip = std::max(roundtrip, std::abs(wrap_angle(d.yaw - b.yaw)));
    }
    check(roundtrip < 1e-9, "box round trip");
  }
  // Decoder permutation equivariance.
  double equivariance = 0.0;
  {
    ModelConfig mc;
    mc.layers = 3;
    const Model model(mc);
    const auto maps = model.feature_maps(generate_scene(SceneConfig{}, 9));
    NoGradGuard guard;
    const QuerySet qs = model.forward(maps).queries;
    std::vector<std::size_t> perm(qs.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(6);
    for (std::size_t i = perm.size(); i-- > 1;) std::swap(perm[i], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
    QuerySet pq;
    pq.features = gather_rows(qs.features, perm).detach();
    for (auto p : perm) pq.locations.push_back(qs.locations[p]), pq.origin.push_back(qs.origin[p]);
    const auto a = model.decoder().decode(qs, maps, mc.modalities);
    const auto b = model.decoder().decode(pq, maps, mc.modalities);
    auto compare = [&](const Tensor& x, const Tensor& y) {
      for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t k = 0; k < x.dim(1); ++k)
          equivariance = std::max(equivariance, std::abs(y.at(i, k) - x.at(perm[i], k)));
    };
    for (std::size_t l = 0; l < a.size(); ++l) {
      compare(a[l].features, b[l].features);
      compare(a[l].heads.probs, b[l].heads.probs);
      compare(a[l].heads.reg, b[l].heads.reg);
    }
    check(equivariance < 1e-10, "decoder equivariance");
  }
  // Determinism: two training runs with the same seeds are bit-identical.
  {
    SceneConfig sc;
    const auto scenes = scene_range(sc, 700, 6);
    auto run = [&] {
      ModelConfig mc;
      mc.layers = 2;
      auto t = train(mc, train_config(2), samples_for(Model(mc), scenes));
      NoGradGuard guard;
      std::vector<double> out;
      for (const auto& [n, p] : t.model->parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
      for (const auto& d : t.model->forward(t.model->feature_maps(scenes[0])).detections())
        out.insert(out.end(), {d.score, d.box.center[0], d.box.center[1], d.box.yaw});
      return out;
    };
    check(run() == run(), "determinism");
    check(generate_scene(sc, 42).lidar_points == generate_scene(sc, 42).lidar_points, "scene determinism");
  }
  Outcome o;
  o.pass = broken.empty();
  o.detail = fmt("location update, top-M oracle, bilinear nodes, round trip %.1e, equivariance %.1e, determinism",
                 roundtrip, equivariance);
  for (const auto& b : broken) o.detail += "; broken: " + b;
  o.data = {{"roundtrip", roundtrip}, {"equivariance", equivariance}, {"broken", broken}};
  return o;
}

// ---------------------------------------------------------------------------
// 4. Strategy comparison grid.

Outcome criterion_strategy_grid() {
  json table = json::array();
  double max_secs = 0.0;
  std::map<CellKey, double> map;
  for (InitStrategy s : {InitStrategy::kProposed, InitStrategy::kInputAgnostic})
    for (std::size_t m : {32u, 96u})
      for (std::size_t l : {1u, 3u}) {
        const Trained& t = cell(s, m, l);
        const EvalReport rep = evaluate_model(*t.model, default_data().test);
        map[{s, m, l}] = rep.map;
        max_secs = std::max(max_secs, t.seconds);
        table.push_back({{"strategy", to_string(s)}, {"queries", m}, {"layers", l}, {"map", rep.map},
                         {"init_recall", rep.init_recall}, {"train_seconds", t.seconds}, {"diverged", t.diverged}});
        std::cerr << fmt("  %-14s M=%-3zu L=%zu  mAP %.3f  recall %.3f  (%.0f s)\n", to_string(s).c_str(), m, l,
                         rep.map, rep.init_recall, t.seconds);
      }
  const auto P = InitStrategy::kProposed, A = InitStrategy::kInputAgnostic;
  const double gap = map[{P, 32, 1}] - map[{A, 32, 1}];
  double worst_excess = INFINITY;
  std::string drops;
  for (std::size_t l : {1u, 3u}) {
    const double drop_a = map[{A, 96, l}] - map[{A, 32, l}];
    const double drop_p = map[{P, 96, l}] - map[{P, 32, l}];
    worst_excess = std::min(worst_excess, drop_a - drop_p);
    drops += fmt(" L=%zu: agnostic %.3f vs proposed %.3f;", l, drop_a, drop_p);
  }
  Outcome o;
  o.pass = gap >= 0.10 && worst_excess >= 0.05 && max_secs < 600.0;
  o.detail = fmt("proposed - agnostic @ (32, 1) = %.3f (need >= 0.10); M 96->32 drops:%s excess %.3f (need >= 0.05 "
                 "at every L); slowest cell %.0f s",
                 gap, drops.c_str(), worst_excess, max_secs);
  o.data = {{"cells", table}, {"gap", gap}, {"drop_excess", worst_excess}};
  return o;
}

// ---------------------------------------------------------------------------
// 5. Initial-query recall.

Outcome criterion_init_recall() {
  const auto& recall = default_data().recall;
  const double p = evaluate_model(*cell(InitStrategy::kProposed, 32, 1).model, recall).init_recall;
  const double a = evaluate_model(*cell(InitStrategy::kInputAgnostic, 32, 1).model, recall).init_recall;
  Outcome o;
  o.pass = p >= 0.9 && a <= p - 0.10;
  o.detail = fmt("radius 2 m, 100 held-out scenes with <= 10 objects, M=32: proposed %.3f (need >= 0.9), "
                 "input-agnostic %.3f (need <= %.3f)",
                 p, a, p - 0.10);
  o.data = {{"proposed", p}, {"input_agnostic", a}};
  return o;
}

// ---------------------------------------------------------------------------
// 6. Modularity.

constexpr std::size_t kModalityEpochs = 20;

Outcome criterion_modularity() {
  json rows = json::object();
  std::map<std::string, double> map;
  std::set<std::vector<Shape>> shapes;
  SceneConfig sc;
  const auto train_scenes = scene_range(sc, kTrainSeed, kTrainScenes);
  const auto test_scenes = scene_range(sc, kTestSeed, kTestScenes);
  for (const char* m : {"l", "c", "lc"}) {
    ModelConfig mc = cell_config(InitStrategy::kProposed, 32, 1);
    mc.modalities = Modalities::parse(m);
    const Model probe(mc);
    std::cerr << "  training modalities " << m << " ..." << std::flush;
    Trained t = train(mc, train_config(kModalityEpochs), samples_for(probe, train_scenes));
    std::cerr << fmt(" %.1f s\n", t.seconds);
    const auto test = samples_for(probe, test_scenes);
    map[m] = evaluate_model(*t.model, test).map;
    NoGradGuard guard;
    const auto res = t.model->forward(test[0].maps);
    std::vector<Shape> s{res.queries.features.shape()};
    for (const auto& l : res.layers) s.push_back(l.heads.probs.shape()), s.push_back(l.heads.reg.shape());
    if (res.dense) s.push_back(res.dense->heads.probs.shape()), s.push_back(res.dense->heads.reg.shape());
    shapes.insert(s);
    rows[m] = {{"map", map[m]}, {"train_seconds", t.seconds}, {"diverged", t.diverged}};
  }
  const double best_uni = std::max(map["l"], map["c"]);
  Outcome o;
  o.pass = shapes.size() == 1 && map["lc"] >= best_uni - 0.02;
  o.detail = fmt("%zu epochs, mAP l %.3f, c %.3f, lc %.3f (need >= %.3f); output shapes %s", kModalityEpochs, map["l"],
                 map["c"], map["lc"], best_uni - 0.02, shapes.size() == 1 ? "identical" : "DIFFER");
  o.data = rows;
  return o;
}

// ---------------------------------------------------------------------------
// 7. Latency.

Outcome criterion_latency() {
  const auto scenes = scene_range(SceneConfig{}, kTestSeed, 10);
  json rows = json::array();
  double default_ratio = 0.0;
  std::string detail;
  for (std::size_t layers : {1u, 3u}) {
    for (InitStrategy s : {InitStrategy::kProposed, InitStrategy::kInputAgnostic}) {
      const Model model(cell_config(s, 32, layers));
      const LatencyReport r = bench_latency(model, scenes, 20, 3);
      rows.push_back({{"strategy", to_string(s)},
                      {"layers", layers},
                      {"backbone_ms", r.backbone.median},
                      {"init_ms", r.init.median},
                      {"decoder_ms", r.decoder.median},
                      {"heads_ms", r.heads.median},
                      {"total_ms", r.total.median},
                      {"init_ratio", r.init_ratio}});
      std::cerr << fmt("  %-14s L=%zu  backbone %.3f  init %.3f  decoder %.3f  heads %.3f  total %.3f ms  ratio %.3f\n",
                       to_string(s).c_str(), layers, r.backbone.median, r.init.median, r.decoder.median,
                       r.heads.median, r.total.median, r.init_ratio);
      if (s == InitStrategy::kProposed) {
        detail += fmt(" L=%zu: init %.2f of %.2f ms (%.1f%%);", layers, r.init.median, r.total.median,
                      100 * r.init_ratio);
        if (layers == 1) default_ratio = r.init_ratio;
      }
    }
  }
  Outcome o;
  o.pass = default_ratio < 0.10;
  o.detail = "proposed init share of end-to-end median, desk-scale default L=1 must be < 10%:" + detail;
  o.data = {{"rows", rows}, {"default_ratio", default_ratio}};
  return o;
}

// ---------------------------------------------------------------------------
// 8. Heatmap-loss necessity.

Outcome criterion_heatmap() {
  std::vector<double> with, without;
  std::size_t without_failed = 0, without_diverged = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool heatmap : {true, false}) {
      ModelConfig mc = cell_config(InitStrategy::kProposed, 32, 1);
      mc.seed = seed;
      TrainConfig tc = train_config(kEpochs, seed);
      tc.loss.use_heatmap = heatmap;
      std::cerr << "  training seed " << seed << (heatmap ? " with" : " without") << " heatmap ..." << std::flush;
      Trained t = train(mc, tc, default_data().train);
      const double r = evaluate_model(*t.model, default_data().recall).init_recall;
      std::cerr << fmt(" %.1f s, recall %.3f%s\n", t.seconds, r, t.diverged ? " (diverged)" : "");
      (heatmap ? with : without).push_back(r);
      if (!heatmap) {
        if (r < 0.5) ++without_failed;
        if (t.diverged) ++without_diverged;
      }
    }
  }
  const bool enabled_ok = std::all_of(with.begin(), with.end(), [](double r) { return r >= 0.9; });
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double r : v) s += fmt("%s%.3f", s.empty() ? "" : " ", r);
    return s;
  };
  Outcome o;
  o.pass = enabled_ok && without_failed >= 3;
  o.detail = fmt("recall with heatmap [%s], without [%s]; %zu/5 without fall below 0.5 (need >= 3), %zu diverged",
                 list(with).c_str(), list(without).c_str(), without_failed, without_diverged);
  if (enabled_ok && without_failed < 3)
    o.detail += ". Not reproduced: in this synthetic regime training converges without the heatmap term";
  o.data = {{"with", with}, {"without", without}, {"without_failed", without_failed}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria: one PASS/FAIL line per criterion"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--workdir", workdir, "directory for the JSON summary");
  app.add_option("--only", only, "criterion numbers to run (default: all)");
  app.add_flag("--strict", strict, "exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"hungarian oracle", criterion_hungarian},      {"gradient suite", criterion_gradients},
      {"definitional invariants", criterion_invariants}, {"strategy grid", criterion_strategy_grid},
      {"init recall", criterion_init_recall},         {"modularity", criterion_modularity},
      {"latency share", criterion_latency},           {"heatmap necessity", criterion_heatmap},
  };

  json summary = json::object();
  std::size_t failed = 0, errors = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
      ++errors;
    }
    const double secs = seconds_since(t0);
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << std::endl;
    summary[std::to_string(id)] = {{"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail},
                                   {"seconds", secs}, {"data", o.data}};
  }
  std::filesystem::create_directories(workdir);
  std::ofstream(std::filesystem::path(workdir) / "acceptance.json") << summary.dump(2) << '\n';
  std::cout << "summary: " << summary.size() - failed << " passed, " << failed << " failed" << std::endl;
  if (errors) return 2;
  return strict && failed ? 1 : 0;
}
