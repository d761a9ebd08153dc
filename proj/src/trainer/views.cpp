#include "featup/views.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "featup/parallel.hpp"
#include "featup/rng.hpp"

namespace featup {

std::string describe(const JitterTransform& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s (ref %dx%d, pad l%d r%d t%d b%d, zoom %.6g, crop %.6g,%.6g, flip %d)",
                t.hash().c_str(), t.ref_height, t.ref_width, t.pad_left, t.pad_right, t.pad_top, t.pad_bottom, t.zoom,
                t.crop_offset_y, t.crop_offset_x, t.hflip ? 1 : 0);
  return buf;
}

std::vector<JitterTransform> jitter_set(std::uint64_t view_seed, int count, int max_pad, double max_zoom,
                                        int ref_height, int ref_width) {
  if (count < 1) throw ParameterError("a jitter set needs at least the identity view");
  std::vector<JitterTransform> out{JitterTransform::identity(ref_height, ref_width)};
  for (int i = 1; i < count; ++i) {
    out.push_back(sample_transform(derive_seed(view_seed, i), max_pad, max_zoom, ref_height, ref_width));
  }
  return out;
}

void MemoryViewProvider::add(const JitterTransform& t, FeatureMap features) {
  const std::string key = t.hash();
  if (!views_.count(key)) order_.push_back(t);
  views_[key] = std::move(features);
}

FeatureMap MemoryViewProvider::view(const JitterTransform& t) const {
  auto it = views_.find(t.hash());
  if (it == views_.end()) throw ParameterError("no view for transform " + describe(t));
  return it->second;
}

FeatureMap gaussian_blur(const FeatureMap& fm, double sigma) {
  if (fm.empty()) throw DimensionError("cannot blur an empty map");
  if (!(sigma > 0.0)) return fm;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= total;
  const int h = fm.height();
  const int w = fm.width();
  FeatureMap out(fm.channels(), h, w);
  parallel_for(0, fm.channels(), [&](std::int64_t c) {
    auto src = fm.channel(static_cast<int>(c));
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * src[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
    auto dst = out.channel(static_cast<int>(c));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
        dst[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
      }
    }
  });
  return out;
}

FeatureMap area_pool(const FeatureMap& fm, int factor) {
  if (factor < 1 || fm.height() % factor != 0 || fm.width() % factor != 0) {
    throw ParameterError("area pooling factor " + std::to_string(factor) + " does not divide " +
                         std::to_string(fm.height()) + "x" + std::to_string(fm.width()));
  }
  const int h = fm.height() / factor;
  const int w = fm.width() / factor;
  FeatureMap out(fm.channels(), h, w);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int c = 0; c < fm.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int a = 0; a < factor; ++a) {
          for (int b = 0; b < factor; ++b) acc += fm(c, y * factor + a, x * factor + b);
        }
        out(c, y, x) = static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

FeatureMap render_view(const FeatureMap& hr, const JitterTransform& t, int factor, double blur_sigma) {
  auto moved = apply_transform(t, hr, hr.height(), hr.width());
  return area_pool(gaussian_blur(moved, blur_sigma), factor);
}

SyntheticViewProvider::SyntheticViewProvider(FeatureMap ground_truth, int factor,
                                             std::vector<JitterTransform> transforms,
                                             std::optional<std::uint64_t> seed)
    : truth_(std::move(ground_truth)), factor_(factor), transforms_(std::move(transforms)), seed_(seed) {}

FeatureMap SyntheticViewProvider::view(const JitterTransform& t) const {
  const std::string key = t.hash();
  for (const auto& known : transforms_) {
    if (known.hash() == key) return render_view(truth_, t, factor_);
  }
  throw ParameterError("no view for transform " + describe(t));
}

}  // namespace featup
