#include <doctest.h>

#include "featup/downsample.hpp"
#include "featup/ops.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace featup;
using featup::testing::random_map;

TEST_SUITE("downsample") {

TEST_CASE("geometry follows the centered window rule with reflection") {
  const auto g = DownsampleGeometry::make(5, 16, 16, 4, 4);
  // stride 4, start = 4i + floor(-1/2) = 4i - 1; index -1 reflects to 1.
  CHECK(g.rows[0] == 1);
  CHECK(g.rows[1] == 0);
  CHECK(g.rows[4] == 3);
  CHECK(g.rows[3 * 5 + 4] == 15);  // cell 3 spans 11..15, no reflection needed
  const auto big = DownsampleGeometry::make(6, 8, 8, 4, 4);
  // stride 2, start = 2i - 2; the last tap of cell 3 is 9, reflected to 5.
  CHECK(big.rows[3 * 6 + 5] == 5);
}

TEST_CASE("geometry rejects upsampling and fractional strides") {
  CHECK_THROWS_AS(DownsampleGeometry::make(3, 4, 4, 8, 8), ParameterError);
  CHECK_THROWS_AS(DownsampleGeometry::make(3, 10, 10, 4, 4), ParameterError);
  CHECK_THROWS_AS(DownsampleGeometry::make(0, 8, 8, 4, 4), ParameterError);
}

TEST_CASE("simple downsampler applies the softmax kernel") {
  std::mt19937_64 rng(1);
  auto p = SimpleDownsamplerParams<float>::init(2);
  p.logits[0] = 1.0f;
  const auto k = simple_kernel(p);
  const double z = std::exp(1.0) + 3.0;
  CHECK(k[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(k[3] == doctest::Approx(1.0 / z));
  const auto fm = random_map(1, 4, 4, rng);
  const auto out = simple_downsample(fm, p, 2, 2);
  const double expect = k[0] * fm(0, 2, 2) + k[1] * fm(0, 2, 3) + k[2] * fm(0, 3, 2) + k[3] * fm(0, 3, 3);
  CHECK(out(0, 1, 1) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("attention weights follow salience") {
  std::mt19937_64 rng(2);
  FeatureMap fm(1, 2, 2, std::vector<float>{0, 0, 0, 1});
  auto p = AttentionDownsamplerParams<float>::init(1, 2, 0);
  p.salience_weight[0] = 2.0f;
  p.salience_bias[0] = 0.0f;
  p.w.fill(1.0f);
  const auto w = attention_weights(fm, p, 1, 1);
  // logits are salience (0,0,0,2) -> softmax
  const double z = 3.0 + std::exp(2.0);
  CHECK(w[3] == doctest::Approx(std::exp(2.0) / z));
  CHECK(w[0] == doctest::Approx(1.0 / z));
}

TEST_CASE("downsampler input gradients match finite differences") {
  std::mt19937_64 rng(3);
  const auto fm = random_map<double>(2, 6, 6, rng);
  auto ap = AttentionDownsamplerParams<double>::init(2, 4, 7);
  std::normal_distribution<double> normal(0.0, 0.7);
  ap.visit([&](const char*, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  });
  auto r = featup::testing::check_input(Tensor<double>::from_feature_map(fm), "x", [&](ad::Tape<double>& tape, ad::Var x) {
    auto v = ad::attention_parameters(tape, ap, "d.");
    return featup::testing::probe(tape, ad::attention_downsample(tape, x, v, 4, 3, 3), 5);
  });
  CHECK(r.failures == 0);
  auto logits = featup::testing::random_tensor({3, 3}, rng);
  r = featup::testing::check_input(Tensor<double>::from_feature_map(fm), "x", [&](ad::Tape<double>& tape, ad::Var x) {
    return featup::testing::probe(tape, ad::simple_downsample(tape, x, tape.constant(logits), 3, 2, 2), 6);
  });
  CHECK(r.failures == 0);
}

TEST_CASE("tape and pure attention paths agree") {
  std::mt19937_64 rng(4);
  const auto fm = random_map(3, 8, 8, rng);
  const auto p = AttentionDownsamplerParams<float>::init(3, 3, 11);
  ad::Tape<float> tape;
  auto v = ad::attention_parameters(tape, p, "d.");
  const auto out = ad::attention_downsample(tape, tape.constant(Tensor<float>::from_feature_map(fm)), v, 3, 4, 4);
  CHECK(featup::testing::max_abs_diff(tape.value(out).to_feature_map(), attention_downsample(fm, p, 4, 4)) == 0.0);
}

TEST_CASE("attention downsampler needs matching channels") {
  std::mt19937_64 rng(5);
  const auto p = AttentionDownsamplerParams<float>::init(3, 3, 1);
  CHECK_THROWS_AS(attention_downsample(random_map(4, 8, 8, rng), p, 4, 4), DimensionError);
}

}
