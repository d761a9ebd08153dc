#include <doctest.h>

#include <numeric>

#include "featup/gemm.hpp"
#include "featup/memory.hpp"
#include "featup/parallel.hpp"
#include "featup/pca.hpp"
#include "featup/projection.hpp"
#include "featup/sampling.hpp"
#include "helpers.hpp"

using namespace featup;
using featup::testing::max_abs_diff;
using featup::testing::random_map;

namespace {

// Cyclic Jacobi rotations; returns eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-22) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

double bilinear_oracle(const FeatureMap& fm, int c, double y, double x) {
  auto at = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, fm.height() - 1);
    xx = std::clamp(xx, 0, fm.width() - 1);
    return double(fm(c, yy, xx));
  };
  y = std::clamp(y, 0.0, fm.height() - 1.0);
  x = std::clamp(x, 0.0, fm.width() - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("feature map construction validates sizes") {
  CHECK_THROWS_AS(FeatureMap(0, 2, 2), DimensionError);
  CHECK_THROWS_AS(FeatureMap(2, 2, 2, std::vector<float>(7)), DimensionError);
  FeatureMap fm(2, 3, 4, 1.5f);
  CHECK(fm.size() == 24);
  CHECK(fm(1, 2, 3) == 1.5f);
  CHECK(fm.all_finite());
  fm(0, 0, 0) = NAN;
  CHECK_FALSE(fm.all_finite());
  CHECK_THROWS_AS(require_finite(fm, "probe"), NumericError);
}

TEST_CASE("images clamp into the unit range and convert to planar") {
  GuidanceImage img(1, 2, std::vector<float>{-1, 0.5f, 2, 0.25f, 0.75f, 1});
  CHECK(img(0, 0, 0) == 0.0f);
  CHECK(img(0, 0, 2) == 1.0f);
  const auto planar = img.to_planar();
  CHECK(planar(1, 0, 1) == 0.75f);
  const auto back = GuidanceImage::from_planar(planar);
  CHECK(back.pixels()[4] == 0.75f);
}

TEST_CASE("tensor item needs a single element") {
  CHECK(Tensor<float>::scalar(3.0f).item() == 3.0f);
  CHECK_THROWS(Tensor<float>({2}).item());
}

TEST_CASE("pixel-center coordinate conventions") {
  CHECK(pixel_to_normalized(0, 4) == doctest::Approx(-0.75));
  CHECK(normalized_to_pixel(pixel_to_normalized(3, 7), 7) == doctest::Approx(3.0));
  const auto tap = clamp_tap(-0.4, 5);
  CHECK(tap.i0 == 0);
  CHECK(tap.w1 == 0.0);
}

TEST_CASE("bilinear resize matches a scalar oracle") {
  std::mt19937_64 rng(1);
  const auto fm = random_map(3, 5, 7, rng);
  const auto out = bilinear_resize(fm, 13, 9);
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 9; ++x) {
        const double sy = (y + 0.5) * 5 / 13.0 - 0.5, sx = (x + 0.5) * 7 / 9.0 - 0.5;
        worst = std::max(worst, std::abs(bilinear_oracle(fm, c, sy, sx) - out(c, y, x)));
      }
  CHECK(worst < 1e-5);
  CHECK(max_abs_diff(bilinear_resize(fm, 5, 7), fm) == 0.0);
}

TEST_CASE("resample adjoint satisfies the dot-product identity") {
  std::mt19937_64 rng(2);
  const auto x = random_map<double>(2, 4, 6, rng);
  const auto y = random_map<double>(2, 9, 5, rng);
  const auto rows = resize_plan(4, 9), cols = resize_plan(6, 5);
  const auto ax = resample(x, rows, cols);
  const auto aty = resample_adjoint(y, rows, cols, 4, 6);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax.storage()[i] * y.storage()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.storage()[i] * aty.storage()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("area downscale averages whole blocks") {
  std::vector<float> px(4 * 4 * 3);
  std::iota(px.begin(), px.end(), 0.0f);
  for (auto& v : px) v /= 100.0f;
  const GuidanceImage img(4, 4, px);
  const auto small = area_downscale(img, 2, 2);
  const double expect = (img(0, 0, 1) + img(0, 1, 1) + img(1, 0, 1) + img(1, 1, 1)) / 4.0;
  CHECK(small(0, 0, 1) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("gemm matches a naive product and is independent of thread count") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const int n = 37, k = 19, m = 23;
  std::vector<float> a(n * k), b(k * m), bias(m), c1(n * m), c2(n * m);
  for (auto& v : a) v = float(normal(rng));
  for (auto& v : b) v = float(normal(rng));
  for (auto& v : bias) v = float(normal(rng));
  set_thread_count(1);
  gemm(n, k, m, a.data(), k, b.data(), m, c1.data(), m, bias.data());
  set_thread_count(4);
  gemm(n, k, m, a.data(), k, b.data(), m, c2.data(), m, bias.data());
  set_thread_count(1);
  CHECK(c1 == c2);
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = bias[j];
      for (int t = 0; t < k; ++t) acc += double(a[i * k + t]) * b[t * m + j];
      worst = std::max(worst, std::abs(acc - c1[i * m + j]));
    }
  CHECK(worst < 1e-4);

  std::vector<float> at(k * n);
  transpose(a.data(), n, k, at.data());
  CHECK(at[5 * n + 3] == a[3 * k + 5]);
}

TEST_CASE("PCA eigenvalues match a Jacobi oracle and components are orthonormal") {
  std::mt19937_64 rng(4);
  const int c = 9, n = 12 * 10;
  auto fm = random_map(c, 12, 10, rng);
  for (int p = 0; p < n; ++p) fm.channel(2)[p] += 3 * fm.channel(0)[p];  // correlated channels
  std::vector<double> mean(c, 0.0), cov(c * c, 0.0);
  for (int i = 0; i < c; ++i) {
    for (int p = 0; p < n; ++p) mean[i] += fm.channel(i)[p];
    mean[i] /= n;
  }
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      for (int p = 0; p < n; ++p) cov[i * c + j] += (fm.channel(i)[p] - mean[i]) * (fm.channel(j)[p] - mean[j]);
      cov[i * c + j] /= n;
    }
  const auto oracle = jacobi_eigenvalues(cov, c);
  const auto model = pca_fit(fm, 5);
  REQUIRE(model.explained_variance.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(model.explained_variance[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double dot = 0;
      for (int t = 0; t < c; ++t) dot += model.components[i * c + t] * model.components[j * c + t];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("PCA reconstruction error equals the discarded eigenvalue mass") {
  std::mt19937_64 rng(5);
  const auto fm = random_map(8, 9, 9, rng);
  const auto full = pca_fit(fm, 8);
  for (int k : {2, 5, 8}) {
    const auto model = pca_fit(fm, k);
    const auto back = model.reconstruct(model.project(fm));
    double err = 0;
    for (std::size_t i = 0; i < fm.size(); ++i) err += std::pow(double(fm.storage()[i]) - back.storage()[i], 2);
    err /= fm.plane();
    double discarded = 0;
    for (int i = k; i < 8; ++i) discarded += full.explained_variance[i];
    CHECK(err == doctest::Approx(discarded).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("PCA rejects bad component counts") {
  std::mt19937_64 rng(6);
  const auto fm = random_map(4, 2, 2, rng);
  CHECK_THROWS_AS(pca_fit(fm, 0), ParameterError);
  CHECK_THROWS_AS(pca_fit(fm, 5), ParameterError);
}

TEST_CASE("random projection is seeded and roughly norm preserving") {
  const auto m1 = random_projection_matrix(512, 128, 9);
  CHECK(m1 == random_projection_matrix(512, 128, 9));
  CHECK(m1 != random_projection_matrix(512, 128, 10));
  std::mt19937_64 rng(7);
  const auto fm = random_map(512, 4, 4, rng);
  const auto proj = project_channels(fm, m1, 128);
  double ratio_sum = 0;
  for (int p = 0; p < 16; ++p) {
    double a = 0, b = 0;
    for (int c = 0; c < 512; ++c) a += std::pow(fm.channel(c)[p], 2);
    for (int c = 0; c < 128; ++c) b += std::pow(proj.channel(c)[p], 2);
    ratio_sum += b / a;
  }
  CHECK(ratio_sum / 16 == doctest::Approx(1.0).epsilon(0.1));
  CHECK_THROWS_AS(random_projection_matrix(4, 0, 1), ParameterError);
}

TEST_CASE("scratch counter tracks peak usage") {
  ScratchCounter::reset_peak();
  const auto base = ScratchCounter::current_bytes();
  {
    scratch_vector<float> v(1000);
    CHECK(ScratchCounter::current_bytes() == base + 4000);
  }
  CHECK(ScratchCounter::current_bytes() == base);
  CHECK(ScratchCounter::peak_bytes() >= base + 4000);
}

}
