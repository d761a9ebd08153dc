#include "featup/transforms.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <random>

namespace featup {

JitterTransform JitterTransform::identity(int ref_height, int ref_width) {
  JitterTransform t;
  t.ref_height = ref_height;
  t.ref_width = ref_width;
  return t;
}

bool JitterTransform::is_identity() const {
  return pad_left == 0 && pad_right == 0 && pad_top == 0 && pad_bottom == 0 && zoom == 1.0 &&
         crop_offset_y == 0.0 && crop_offset_x == 0.0 && !hflip;
}

void JitterTransform::validate() const {
  if (ref_height < 1 || ref_width < 1) throw ParameterError("transform reference grid must be nonempty");
  if (pad_left < 0 || pad_right < 0 || pad_top < 0 || pad_bottom < 0) {
    throw ParameterError("transform pads must be nonnegative");
  }
  if (!(zoom >= 1.0) || !std::isfinite(zoom)) throw ParameterError("transform zoom must be >= 1");
  const double max_y = (ref_height + pad_top + pad_bottom) * zoom - ref_height;
  const double max_x = (ref_width + pad_left + pad_right) * zoom - ref_width;
  if (crop_offset_y < 0.0 || crop_offset_y > max_y + 1e-9 || crop_offset_x < 0.0 || crop_offset_x > max_x + 1e-9) {
    throw ParameterError("transform crop offset outside the zoomed canvas");
  }
}

std::string JitterTransform::hash() const {
  // FNV-1a over a fixed little-endian field encoding.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto feed_i = [&](std::int64_t v) { feed(&v, sizeof v); };
  auto feed_d = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    feed(&bits, sizeof bits);
  };
  feed_i(ref_height);
  feed_i(ref_width);
  feed_i(pad_left);
  feed_i(pad_right);
  feed_i(pad_top);
  feed_i(pad_bottom);
  feed_d(zoom);
  feed_d(crop_offset_y);
  feed_d(crop_offset_x);
  feed_i(hflip ? 1 : 0);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

JitterTransform sample_transform(std::uint64_t seed, int max_pad, double max_zoom, int ref_height, int ref_width) {
  if (max_pad < 0) throw ParameterError("max_pad must be >= 0");
  if (!(max_zoom >= 1.0)) throw ParameterError("max_zoom must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pad(0, max_pad);
  JitterTransform t = JitterTransform::identity(ref_height, ref_width);
  t.pad_left = pad(rng);
  t.pad_right = pad(rng);
  t.pad_top = pad(rng);
  t.pad_bottom = pad(rng);
  t.zoom = max_zoom > 1.0 ? std::uniform_real_distribution<double>(1.0, max_zoom)(rng) : 1.0;
  t.hflip = std::bernoulli_distribution(0.5)(rng);
  const double max_y = (ref_height + t.pad_top + t.pad_bottom) * t.zoom - ref_height;
  const double max_x = (ref_width + t.pad_left + t.pad_right) * t.zoom - ref_width;
  t.crop_offset_y = std::uniform_int_distribution<int>(0, static_cast<int>(std::floor(max_y)))(rng);
  t.crop_offset_x = std::uniform_int_distribution<int>(0, static_cast<int>(std::floor(max_x)))(rng);
  return t;
}

namespace {

// Folds an edge-based coordinate into [0, n] by mirroring at the borders.
double reflect_edge(double s, int n) {
  if (s >= 0.0 && s <= n) return s;
  const double period = 2.0 * n;
  double q = std::fmod(s, period);
  if (q < 0) q += period;
  return q > n ? period - q : q;
}

AxisPlan axis_plan(int out_n, int in_n, int ref_n, int pad_before, double zoom, double offset, bool flip) {
  AxisPlan plan(out_n);
  for (int o = 0; o < out_n; ++o) {
    // Position across the crop window, in reference pixels.
    const double along = (flip ? (out_n - o - 0.5) : (o + 0.5)) * ref_n / out_n;
    double src = (offset + along) / zoom - pad_before;
    src = reflect_edge(src, ref_n);
    plan[o] = clamp_tap(src * in_n / ref_n - 0.5, in_n);
  }
  return plan;
}

}  // namespace

TransformPlan transform_plan(const JitterTransform& t, int in_h, int in_w, int out_h, int out_w) {
  t.validate();
  if (out_h < 1 || out_w < 1) {
    throw ParameterError("transform output must be at least 1x1, got " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
  }
  if (in_h < 1 || in_w < 1) throw DimensionError("cannot transform an empty map");
  return {axis_plan(out_h, in_h, t.ref_height, t.pad_top, t.zoom, t.crop_offset_y, false),
          axis_plan(out_w, in_w, t.ref_width, t.pad_left, t.zoom, t.crop_offset_x, t.hflip)};
}

template <typename T>
BasicFeatureMap<T> apply_transform(const JitterTransform& t, const BasicFeatureMap<T>& fm, int out_h, int out_w) {
  if (fm.empty()) throw DimensionError("cannot transform an empty feature map");
  TransformPlan plan = transform_plan(t, fm.height(), fm.width(), out_h, out_w);
  return resample(fm, plan.rows, plan.cols);
}

GuidanceImage apply_transform(const JitterTransform& t, const GuidanceImage& image) {
  auto planar = apply_transform(t, image.to_planar(), t.ref_height, t.ref_width);
  return GuidanceImage::from_planar(planar);
}

namespace ad {

template <typename T>
Var apply_transform(Tape<T>& tape, Var fm, const JitterTransform& t, int out_h, int out_w) {
  const Tensor<T>& v = tape.value(fm);
  if (v.rank() != 3) throw DimensionError("apply_transform expects C x H x W, got " + shape_string(v.shape()));
  const int in_h = v.dim(1);
  const int in_w = v.dim(2);
  auto plan = std::make_shared<TransformPlan>(transform_plan(t, in_h, in_w, out_h, out_w));
  auto out = resample(v.to_feature_map(), plan->rows, plan->cols);
  return tape.record(Tensor<T>::from_feature_map(std::move(out)), {fm}, [fm, plan, in_h, in_w](Tape<T>& tp, int self) {
    auto g = resample_adjoint(tp.grad_of(self).to_feature_map(), plan->rows, plan->cols, in_h, in_w);
    Tensor<T>& d = tp.grad_sink(fm);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.storage()[i];
  });
}

template Var apply_transform<float>(Tape<float>&, Var, const JitterTransform&, int, int);
template Var apply_transform<double>(Tape<double>&, Var, const JitterTransform&, int, int);

}  // namespace ad

template BasicFeatureMap<float> apply_transform(const JitterTransform&, const BasicFeatureMap<float>&, int, int);
template BasicFeatureMap<double> apply_transform(const JitterTransform&, const BasicFeatureMap<double>&, int, int);

}  // namespace featup
