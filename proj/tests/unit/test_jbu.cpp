#include <doctest.h>

#include "featup/jbu.hpp"
#include "featup/parallel.hpp"
#include "featup/sampling.hpp"
#include "helpers.hpp"

using namespace featup;
using featup::testing::max_abs_diff;
using featup::testing::random_image;
using featup::testing::random_map;

namespace {

JbuParams<double> random_params(int radius, std::mt19937_64& rng) {
  auto p = JbuParams<double>::init(radius, rng());
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto* t : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = normal(rng);
  p.set_sigma_spatial(0.8);
  p.set_sigma_range_sq(0.7);
  return p;
}

std::vector<double> embed(const JbuParams<double>& p, const double* rgb) {
  std::vector<double> h(kRangeHidden), e(kRangeDim);
  for (int j = 0; j < kRangeHidden; ++j) {
    double a = p.b1[j];
    for (int i = 0; i < 3; ++i) a += rgb[i] * p.w1[i * kRangeHidden + j];
    h[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  }
  for (int j = 0; j < kRangeDim; ++j) {
    double a = p.b2[j];
    for (int i = 0; i < kRangeHidden; ++i) a += h[i] * p.w2[i * kRangeDim + j];
    e[j] = a;
  }
  return e;
}

// Direct evaluation: bilinear upsample, then per pixel blend the clamped
// (2r+1)^2 neighborhood with spatial Gaussian times range softmax.
BasicFeatureMap<double> naive_jbu(const BasicFeatureMap<double>& lr, const BasicImage<double>& g,
                                  const JbuParams<double>& p) {
  const int h = g.height(), w = g.width(), r = p.radius;
  const auto up = bilinear_resize(lr, h, w);
  const double sigma = p.sigma_spatial(), tau = p.sigma_range_sq();
  std::vector<std::vector<double>> e(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double rgb[3] = {g(y, x, 0), g(y, x, 1), g(y, x, 2)};
      e[y * w + x] = embed(p, rgb);
    }
  BasicFeatureMap<double> out(lr.channels(), h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> logits, spatial;
      std::vector<int> idx;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int q = std::clamp(y + dy, 0, h - 1) * w + std::clamp(x + dx, 0, w - 1);
          double dot = 0;
          for (int k = 0; k < kRangeDim; ++k) dot += e[y * w + x][k] * e[q][k];
          logits.push_back(dot / tau);
          const double ny = double(dy) / r, nx = double(dx) / r;
          spatial.push_back(std::exp(-(ny * ny + nx * nx) / (2 * sigma * sigma)));
          idx.push_back(q);
        }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double zr = 0;
      for (double& l : logits) zr += (l = std::exp(l - mx));
      double z = 0;
      std::vector<double> wts(idx.size());
      for (std::size_t n = 0; n < idx.size(); ++n) z += (wts[n] = spatial[n] * logits[n] / zr);
      for (int c = 0; c < lr.channels(); ++c) {
        double acc = 0;
        for (std::size_t n = 0; n < idx.size(); ++n) acc += wts[n] / z * up.channel(c)[idx[n]];
        out(c, y, x) = acc;
      }
    }
  return out;
}

}  // namespace

TEST_SUITE("jbu") {

TEST_CASE("spatial kernel is a Gaussian on distance") {
  CHECK(spatial_kernel(1.0, 0, 0, 0, 0) == 1.0);
  CHECK(spatial_kernel(2.0, 0, 0, 1, 1) == doctest::Approx(std::exp(-2.0 / 8.0)));
}

TEST_CASE("range kernel is a softmax over the patch") {
  std::mt19937_64 rng(1);
  const auto p = random_params(1, rng);
  std::vector<double> patch(9 * 3);
  std::uniform_real_distribution<double> unit;
  for (auto& v : patch) v = unit(rng);
  const auto k = range_kernel<double>(p, patch, 4);
  double sum = 0;
  for (double v : k) sum += v;
  CHECK(sum == doctest::Approx(1.0));
  const auto ec = embed(p, &patch[12]);
  const auto e0 = embed(p, &patch[0]);
  const auto e1 = embed(p, &patch[3]);
  double d0 = 0, d1 = 0;
  for (int i = 0; i < kRangeDim; ++i) d0 += ec[i] * e0[i], d1 += ec[i] * e1[i];
  CHECK(k[0] / k[1] == doctest::Approx(std::exp((d0 - d1) / p.sigma_range_sq())));
}

TEST_CASE("both backends match a direct evaluation") {
  std::mt19937_64 rng(2);
  for (int r : {1, 2, 3}) {
    const auto lr = random_map<double>(3, 4, 5, rng);
    const auto g = random_image<double>(8, 10, rng);
    const auto p = random_params(r, rng);
    const auto oracle = naive_jbu(lr, g, p);
    CHECK(max_abs_diff(jbu_upsample(lr, g, p, JbuBackend::reference), oracle) < 1e-12);
    CHECK(max_abs_diff(jbu_upsample(lr, g, p, JbuBackend::fast), oracle) < 1e-12);
  }
}

TEST_CASE("backends agree on every gradient") {
  std::mt19937_64 rng(3);
  for (int r : {1, 4}) {
    const auto lr = random_map(5, 6, 7, rng);
    const auto g = random_image(12, 14, rng);
    const auto p = random_params(r, rng).cast<float>();
    const auto grad = random_map(5, 12, 14, rng);
    auto a = jbu_forward(lr, g, p, JbuBackend::fast);
    auto b = jbu_forward(lr, g, p, JbuBackend::reference);
    const auto ga = jbu_backward(*a.context, grad);
    const auto gb = jbu_backward(*b.context, grad);
    CHECK(max_abs_diff(ga.features, gb.features) < 1e-5);
    ga.params.visit([&](const char* name, const Tensor<float>& ta) {
      const Tensor<float>* tb = nullptr;
      gb.params.visit([&](const char* other, const Tensor<float>& t) {
        if (std::string(other) == name) tb = &t;
      });
      REQUIRE(tb);
      double scale = 1e-3;
      for (std::size_t i = 0; i < ta.size(); ++i) scale = std::max(scale, double(std::abs(ta[i])));
      INFO(name);
      CHECK(max_abs_diff(ta.storage(), tb->storage()) / scale < 1e-5);
    });
  }
}

TEST_CASE("fast backward does not depend on the thread count") {
  std::mt19937_64 rng(4);
  const auto lr = random_map(4, 9, 9, rng);
  const auto g = random_image(18, 18, rng);
  const auto p = random_params(2, rng).cast<float>();
  const auto grad = random_map(4, 18, 18, rng);
  set_thread_count(1);
  auto a = jbu_forward(lr, g, p, JbuBackend::fast);
  const auto ga = jbu_backward(*a.context, grad);
  set_thread_count(3);
  auto b = jbu_forward(lr, g, p, JbuBackend::fast);
  const auto gb = jbu_backward(*b.context, grad);
  set_thread_count(1);
  CHECK(a.output.storage() == b.output.storage());
  CHECK(ga.features.storage() == gb.features.storage());
  CHECK(ga.params.w1.storage() == gb.params.w1.storage());
  CHECK(ga.params.log_sigma_spatial.storage() == gb.params.log_sigma_spatial.storage());
}

TEST_CASE("stage counts require a shared power of two") {
  CHECK(jbu_stage_count(7, 7, 7, 7) == 0);
  CHECK(jbu_stage_count(7, 7, 112, 112) == 4);
  CHECK_THROWS_AS(jbu_stage_count(7, 7, 21, 21), ParameterError);
  CHECK_THROWS_AS(jbu_stage_count(7, 7, 14, 28), ParameterError);
  CHECK_THROWS_AS(jbu_stage_count(7, 7, 15, 15), ParameterError);
}

TEST_CASE("stack with zero stages is the identity") {
  std::mt19937_64 rng(5);
  const auto lr = random_map(3, 4, 4, rng);
  const auto g = random_image(4, 4, rng);
  CHECK(jbu_stack<float>(lr, g, {}).storage() == lr.storage());
}

TEST_CASE("stack applies stages with area-downscaled guidance") {
  std::mt19937_64 rng(6);
  const auto lr = random_map<double>(2, 3, 3, rng);
  const auto g = random_image<double>(12, 12, rng);
  std::vector<JbuParams<double>> stages{random_params(1, rng), random_params(1, rng)};
  const auto g1 = area_downscale(g, 6, 6);
  CHECK(stage_guidance(g, 0, 2).pixels()[5] == g1.pixels()[5]);
  const auto expect = jbu_upsample(jbu_upsample(lr, g1, stages[0]), g, stages[1]);
  CHECK(max_abs_diff(jbu_stack<double>(lr, g, stages), expect) < 1e-12);
}

TEST_CASE("parameters are validated") {
  auto p = JbuParams<float>::init(1, 0);
  CHECK(p.neighbors() == 9);
  CHECK(p.sigma_spatial() == doctest::Approx(1.0));
  CHECK_THROWS_AS(JbuParams<float>::init(0, 0), ParameterError);
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(jbu_upsample(random_map(2, 8, 8, rng), random_image(4, 4, rng), p), DimensionError);
}

}
