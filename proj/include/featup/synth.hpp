#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "featup/trainer.hpp"
#include "featup/views.hpp"

namespace featup {

struct SynthOptions {
  std::uint64_t seed = 0;
  int size = 224;  // square, divisible by factor
  int channels = 16;
  int count = 1;
  int views = 10;  // including the identity
  int max_pad = 30;
  double max_zoom = 1.8;
  int factor = 16;
  int min_regions = 3;
  int max_regions = 8;

  void validate() const;
};

/// One generated scene: a piecewise-constant feature field and the matching
/// RGB rendering. Region 0 is the background; later regions paint over it.
struct SynthScene {
  GuidanceImage image;
  FeatureMap ground_truth;
  int regions = 0;
  std::uint64_t view_seed = 0;
  std::vector<JitterTransform> transforms;  // identity first
};

/// Scene `index` of a dataset; a pure function of the options.
SynthScene synth_scene(const SynthOptions& opts, int index);

/// Writes image_XXXX/{image.png, gt.npy, features.npy, views/manifest.json,
/// views/<hash>.npy} for every scene plus a top-level dataset.json.
void synth_generate(const SynthOptions& opts, const std::filesystem::path& out_dir);

/// Views stored under dir/manifest.json and dir/<hash>.npy, loaded on demand.
class DirectoryViewProvider : public ViewProvider {
 public:
  explicit DirectoryViewProvider(std::filesystem::path dir);

  FeatureMap view(const JitterTransform& t) const override;
  std::vector<JitterTransform> transforms() const override { return transforms_; }
  std::optional<std::uint64_t> view_seed() const override { return seed_; }

 private:
  std::filesystem::path dir_;
  std::vector<JitterTransform> transforms_;
  std::optional<std::uint64_t> seed_;
  mutable std::mutex mu_;
  mutable std::map<std::string, FeatureMap> cache_;
};

/// Writes views/manifest.json and one NPY per transform.
void write_view_directory(const std::filesystem::path& dir, const std::vector<JitterTransform>& transforms,
                          const std::vector<FeatureMap>& views, std::optional<std::uint64_t> view_seed);

/// One image directory: image.png, features.npy and views/.
CorpusItem load_corpus_item(const std::filesystem::path& dir);
/// Every subdirectory holding an image.png, in name order.
std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir);

}  // namespace featup
