#include "featup/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "featup/checkpoint.hpp"
#include "featup/io.hpp"
#include "featup/rng.hpp"

namespace featup {

using nlohmann::json;

namespace {

struct Region {
  bool ellipse = false;
  double cy = 0, cx = 0, ry = 0, rx = 0;
  float rgb[3] = {0, 0, 0};
  std::vector<float> feature;

  bool covers(int y, int x) const {
    const double dy = (y + 0.5 - cy) / ry;
    const double dx = (x + 0.5 - cx) / rx;
    return ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

std::string scene_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "image_%04d", index);
  return buf;
}

}  // namespace

void SynthOptions::validate() const {
  if (size < 1 || factor < 1 || size % factor != 0) {
    throw ParameterError("synth size " + std::to_string(size) + " must be a positive multiple of " +
                         std::to_string(factor));
  }
  if (channels < 1) throw ParameterError("synth channels must be >= 1");
  if (count < 1) throw ParameterError("synth count must be >= 1");
  if (views < 1) throw ParameterError("synth views must be >= 1");
  if (min_regions < 1 || max_regions < min_regions) throw ParameterError("synth region range is empty");
}

SynthScene synth_scene(const SynthOptions& opts, int index) {
  opts.validate();
  const std::uint64_t scene_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(derive_seed(scene_seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = opts.size;

  SynthScene scene;
  scene.regions = std::uniform_int_distribution<int>(opts.min_regions, opts.max_regions)(rng);
  std::vector<Region> regions(scene.regions);
  for (int r = 0; r < scene.regions; ++r) {
    Region& g = regions[r];
    g.ellipse = unit(rng) < 0.5;
    g.cy = unit(rng) * n;
    g.cx = unit(rng) * n;
    g.ry = (0.1 + 0.25 * unit(rng)) * n;
    g.rx = (0.1 + 0.25 * unit(rng)) * n;
    for (float& c : g.rgb) c = static_cast<float>(std::uniform_int_distribution<int>(0, 255)(rng)) / 255.0f;
    std::vector<double> v(opts.channels);
    double norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double x : v) g.feature.push_back(static_cast<float>(x / norm));
  }

  scene.image = GuidanceImage(n, n);
  scene.ground_truth = FeatureMap(opts.channels, n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int owner = 0;
      for (int r = 1; r < scene.regions; ++r) {
        if (regions[r].covers(y, x)) owner = r;
      }
      for (int k = 0; k < 3; ++k) scene.image(y, x, k) = regions[owner].rgb[k];
      for (int c = 0; c < opts.channels; ++c) scene.ground_truth(c, y, x) = regions[owner].feature[c];
    }
  }

  scene.view_seed = derive_seed(scene_seed, 1);
  scene.transforms = jitter_set(scene.view_seed, opts.views, opts.max_pad, opts.max_zoom, n, n);
  return scene;
}

void synth_generate(const SynthOptions& opts, const std::filesystem::path& out_dir) {
  opts.validate();
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < opts.count; ++i) {
    const SynthScene scene = synth_scene(opts, i);
    const auto dir = out_dir / scene_name(i);
    std::filesystem::create_directories(dir);
    write_png(scene.image, dir / "image.png");
    write_npy(scene.ground_truth, dir / "gt.npy");
    std::vector<FeatureMap> views;
    for (const auto& t : scene.transforms) views.push_back(render_view(scene.ground_truth, t, opts.factor));
    write_npy(views.front(), dir / "features.npy");
    write_view_directory(dir / "views", scene.transforms, views, scene.view_seed);
  }
  const json meta = {{"seed", opts.seed},         {"size", opts.size},         {"channels", opts.channels},
                     {"count", opts.count},       {"views", opts.views},       {"max_pad", opts.max_pad},
                     {"max_zoom", opts.max_zoom}, {"factor", opts.factor},     {"blur_sigma", kViewBlurSigma},
                     {"min_regions", opts.min_regions}, {"max_regions", opts.max_regions}};
  write_file_atomic(out_dir / "dataset.json", meta.dump(2) + "\n");
}

void write_view_directory(const std::filesystem::path& dir, const std::vector<JitterTransform>& transforms,
                          const std::vector<FeatureMap>& views, std::optional<std::uint64_t> view_seed) {
  if (transforms.size() != views.size()) throw DimensionError("one view is needed per transform");
  std::filesystem::create_directories(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    entries.push_back(to_json(transforms[i]));
    write_npy(views[i], dir / (transforms[i].hash() + ".npy"));
  }
  json manifest = {{"views", entries}};
  manifest["view_seed"] = view_seed ? json(*view_seed) : json(nullptr);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

DirectoryViewProvider::DirectoryViewProvider(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto path = dir_ / "manifest.json";
  if (!std::filesystem::exists(path)) throw FormatError("missing view manifest " + path.string());
  try {
    const json manifest = json::parse(read_file(path));
    for (const auto& entry : manifest.at("views")) transforms_.push_back(transform_from_json(entry));
    if (manifest.contains("view_seed") && !manifest.at("view_seed").is_null()) {
      seed_ = manifest.at("view_seed").get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

FeatureMap DirectoryViewProvider::view(const JitterTransform& t) const {
  const std::string key = t.hash();
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  bool listed = false;
  for (const auto& known : transforms_) listed = listed || known.hash() == key;
  const auto file = dir_ / (key + ".npy");
  if (!listed || !std::filesystem::exists(file)) {
    throw ParameterError("no view for transform " + describe(t) + " in " + dir_.string());
  }
  return cache_.emplace(key, read_npy(file)).first->second;
}

CorpusItem load_corpus_item(const std::filesystem::path& dir) {
  CorpusItem item;
  item.name = dir.filename().string();
  item.image = read_png(dir / "image.png");
  item.features = read_npy(dir / "features.npy");
  item.views = std::make_shared<DirectoryViewProvider>(dir / "views");
  return item;
}

std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("corpus directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "image.png")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<CorpusItem> corpus;
  for (const auto& d : dirs) corpus.push_back(load_corpus_item(d));
  return corpus;
}

}  // namespace featup
