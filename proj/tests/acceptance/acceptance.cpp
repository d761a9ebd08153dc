// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion; run with
// criterion numbers as arguments to select a subset.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "featup/bench.hpp"
#include "featup/checkpoint.hpp"
#include "featup/cli.hpp"
#include "featup/downsample.hpp"
#include "featup/implicit.hpp"
#include "featup/io.hpp"
#include "featup/jbu.hpp"
#include "featup/losses.hpp"
#include "featup/parallel.hpp"
#include "featup/pca.hpp"
#include "featup/sampling.hpp"
#include "featup/synth.hpp"
#include "featup/trainer.hpp"
#include "gradcheck.hpp"

using namespace featup;
namespace fs = std::filesystem;
using featup::testing::GradCheck;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

template <typename T>
BasicFeatureMap<T> random_map(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  BasicFeatureMap<T> fm(c, h, w);
  for (auto& v : fm.storage()) v = static_cast<T>(normal(rng));
  return fm;
}

template <typename T>
BasicImage<T> random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<T> px(static_cast<std::size_t>(h) * w * 3);
  for (auto& v : px) v = static_cast<T>(unit(rng));
  return BasicImage<T>(h, w, std::move(px));
}

template <typename T>
JbuParams<T> random_jbu(int radius, std::mt19937_64& rng, double mlp_gain = 10.0) {
  auto p = JbuParams<T>::init(radius, rng());
  for (auto* t : {&p.w1, &p.w2}) {
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<T>((*t)[i] * mlp_gain);
  }
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto* t : {&p.b1, &p.b2}) {
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<T>(normal(rng));
  }
  std::uniform_real_distribution<double> sig(0.3, 2.0);
  p.set_sigma_spatial(sig(rng));
  p.set_sigma_range_sq(sig(rng));
  return p;
}

template <typename P>
void jitter_all(P& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  p.visit([&](const char*, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += normal(rng);
  });
}

template <typename T>
double max_abs_diff(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

struct StackParams {
  std::vector<JbuParams<double>> stages;
  template <typename F>
  void visit(F&& f) {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      stages[s].visit([&](const char* name, Tensor<double>& t) {
        const std::string full = "jbu" + std::to_string(s) + "." + name;
        f(full.c_str(), t);
      });
    }
  }
};

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  GradCheck total;
  std::ostringstream parts;
  auto note = [&](const char* what, const GradCheck& g) {
    total.merge(g);
    parts << what << ' ' << g.checked - g.failures << '/' << g.checked << "; ";
  };

  {  // implicit MLP, dropout off
    FourierConfig fc{3, true};
    const auto image = random_image<float>(8, 8, rng);
    const int n = 64;
    const Tensor<double> enc({n, fc.encoded_dim()}, fourier_features<double>(grid_inputs(image, 8, 8, fc), n, fc));
    auto p = ImplicitParams<double>::init(fc, 8, 2, rng());
    jitter_all(p, rng, 0.1);
    note("implicit", testing::check_parameters(p, "mlp.", [&](ad::Tape<double>& tape, const ImplicitParams<double>& q) {
      auto v = ad::implicit_parameters(tape, q, "mlp.");
      auto rows = ad::implicit_rows(tape, v, tape.constant(enc), false, 0);
      return testing::probe(tape, ad::rows_to_map(tape, rows, 8, 8), 7);
    }));
  }
  for (auto backend : {JbuBackend::reference, JbuBackend::fast}) {  // one JBU stage
    const auto lr = random_map<double>(2, 4, 4, rng);
    const auto guide = random_image<double>(8, 8, rng);
    const auto p = random_jbu<double>(1, rng);
    note(backend == JbuBackend::fast ? "jbu-fast" : "jbu-reference",
         testing::check_parameters(p, "jbu.", [&](ad::Tape<double>& tape, const JbuParams<double>& q) {
           auto v = ad::jbu_parameters(tape, q, "jbu.");
           return testing::probe(tape, ad::jbu_upsample(tape, tape.constant(Tensor<double>::from_feature_map(lr)), guide, v, backend), 8);
         }));
  }
  {  // two-stage stack
    const auto lr = random_map<double>(2, 2, 2, rng);
    const auto guide = random_image<double>(8, 8, rng);
    StackParams sp{{random_jbu<double>(1, rng), random_jbu<double>(1, rng)}};
    note("jbu-stack", testing::check_parameters(sp, "", [&](ad::Tape<double>& tape, const StackParams& q) {
      std::vector<ad::JbuVars> vars;
      for (std::size_t s = 0; s < q.stages.size(); ++s) {
        vars.push_back(ad::jbu_parameters(tape, q.stages[s], "jbu" + std::to_string(s) + "."));
      }
      auto out = ad::jbu_stack<double>(tape, tape.constant(Tensor<double>::from_feature_map(lr)), guide, vars,
                                       JbuBackend::fast);
      return testing::probe(tape, out, 9);
    }));
  }
  for (int k : {3, 4}) {  // attention downsampler
    const int out = k == 3 ? 4 : 2;
    const auto fm = random_map<double>(2, 8, 8, rng);
    auto p = AttentionDownsamplerParams<double>::init(2, k, rng());
    jitter_all(p, rng, 0.5);
    note("attention", testing::check_parameters(p, "down.", [&](ad::Tape<double>& tape, const AttentionDownsamplerParams<double>& q) {
      auto v = ad::attention_parameters(tape, q, "down.");
      return testing::probe(tape, ad::attention_downsample(tape, tape.constant(Tensor<double>::from_feature_map(fm)), v, k, out, out), 10);
    }));
  }
  {  // simple downsampler
    const auto fm = random_map<double>(2, 8, 8, rng);
    auto p = SimpleDownsamplerParams<double>::init(3);
    jitter_all(p, rng, 0.5);
    note("simple", testing::check_parameters(p, "simple.", [&](ad::Tape<double>& tape, const SimpleDownsamplerParams<double>& q) {
      auto logits = tape.parameter("simple.logits", q.logits);
      return testing::probe(tape, ad::simple_downsample(tape, tape.constant(Tensor<double>::from_feature_map(fm)), logits, 3, 4, 4), 11);
    }));
  }
  {  // uncertainty head through the reconstruction loss
    const auto pred = random_map<double>(2, 4, 4, rng);
    const auto obs = random_map<double>(2, 4, 4, rng);
    Tensor<double> rows({16, 2});
    for (int p = 0; p < 16; ++p) {
      for (int c = 0; c < 2; ++c) rows[p * 2 + c] = obs.channel(c)[p];
    }
    auto head = UncertaintyParams<double>::init(2);
    jitter_all(head, rng, 0.5);
    note("uncertainty", testing::check_parameters(head, "head.", [&](ad::Tape<double>& tape, const UncertaintyParams<double>& q) {
      auto s = ad::uncertainty(tape, tape.constant(rows), tape.parameter("head.w", q.w), tape.parameter("head.b", q.b));
      return ad::reconstruction_loss(tape, tape.constant(Tensor<double>::from_feature_map(pred)),
                                     tape.constant(Tensor<double>::from_feature_map(obs)), s);
    }));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = total.failures == 0 && secs < 120.0;
  o.detail = parts.str() + fmt("worst |analytic-numeric| %.2e at %s; %.1f s", total.worst_abs,
                               total.worst_name.c_str(), secs);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Kernel equivalence and footprint

Outcome criterion_kernels() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  const int radii[] = {1, 5, 7};
  const int chans[] = {1, 3, 8, 30, 64, 128};
  double worst_out = 0.0, worst_grad = 0.0;
  for (int d = 0; d < 50; ++d) {
    int batch, c, h, w, r;
    if (d == 0) {
      batch = 8, c = 2048, h = 14, w = 14, r = 1;
    } else if (d == 1) {
      batch = 1, c = 2048, h = 14, w = 14, r = 5;
    } else if (d == 2) {
      batch = 1, c = 256, h = 14, w = 14, r = 7;
    } else {
      batch = std::uniform_int_distribution<int>(1, 3)(rng);
      c = chans[std::uniform_int_distribution<int>(0, 5)(rng)];
      h = std::uniform_int_distribution<int>(2, 10)(rng);
      w = std::uniform_int_distribution<int>(2, 10)(rng);
      r = radii[std::uniform_int_distribution<int>(0, 2)(rng)];
    }
    for (int b = 0; b < batch; ++b) {
      const auto lr = random_map<float>(c, h, w, rng);
      const auto guide = random_image<float>(2 * h, 2 * w, rng);
      const auto p = random_jbu<float>(r, rng);
      const auto g = random_map<float>(c, 2 * h, 2 * w, rng);
      FeatureMap d_fast, d_ref;
      {
        auto fast = jbu_forward(lr, guide, p, JbuBackend::fast);
        auto ref = jbu_forward(lr, guide, p, JbuBackend::reference);
        worst_out = std::max(worst_out, max_abs_diff(fast.output, ref.output));
        d_fast = jbu_backward(*fast.context, g).features;
        d_ref = jbu_backward(*ref.context, g).features;
      }
      worst_grad = std::max(worst_grad, max_abs_diff(d_fast, d_ref));
    }
  }

  BenchOptions opts;
  opts.repeats = 3;
  const BenchShape shape{1, 14, 14, 2048, 5};
  const auto fast = measure_jbu(shape, JbuBackend::fast, opts);
  const auto ref = measure_jbu(shape, JbuBackend::reference, opts);
  const double mem_ratio = double(fast.peak_bytes) / double(ref.peak_bytes);
  const double time_ratio = fast.forward_ms / ref.forward_ms;
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = worst_out <= 1e-5 && worst_grad <= 1e-5 && mem_ratio < 0.1 && time_ratio <= 1.0 / 3.0 && secs < 180.0;
  o.detail = fmt(
      "50 draws: max |fast-ref| output %.2e, feature gradient %.2e; 1x14x14x2048 r=5: peak %.2f MB vs %.2f MB "
      "(ratio %.4f), forward %.2f ms vs %.2f ms (ratio %.3f); %.1f s",
      worst_out, worst_grad, fast.peak_bytes / 1048576.0, ref.peak_bytes / 1048576.0, mem_ratio, fast.forward_ms,
      ref.forward_ms, time_ratio, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Normalization invariants

Outcome criterion_normalization() {
  std::mt19937_64 rng(303);
  double worst_sum = 0.0;
  int negative = 0, bound_violations = 0;
  auto check_blocks = [&](const std::vector<double>& wts, int block) {
    for (std::size_t s = 0; s < wts.size(); s += block) {
      double sum = 0.0;
      for (int i = 0; i < block; ++i) {
        sum += wts[s + i];
        if (wts[s + i] < 0.0) ++negative;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  };
  auto check_global_bounds = [&](const FeatureMap& in, const FeatureMap& out) {
    for (int c = 0; c < in.channels(); ++c) {
      const auto [lo, hi] = std::minmax_element(in.channel(c).begin(), in.channel(c).end());
      for (float v : out.channel(c)) {
        if (v < *lo - 1e-6f || v > *hi + 1e-6f) ++bound_violations;
      }
    }
  };

  for (int draw = 0; draw < 100; ++draw) {
    const int r = 1 + draw % 3;
    // JBU: weights per output pixel and per-neighborhood convexity.
    const auto p = random_jbu<float>(r, rng, 5.0 + draw % 20);
    const auto lr = random_map<float>(3, 5, 6, rng);
    const auto guide = random_image<float>(10, 12, rng);
    const auto wts = jbu_weights(guide, p);
    check_blocks(std::vector<double>(wts.begin(), wts.end()), p.neighbors());
    const auto out = jbu_upsample(lr, guide, p);
    const auto up = bilinear_resize(lr, 10, 12);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 12; ++x) {
          float lo = INFINITY, hi = -INFINITY;
          for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
              const float v = up(c, std::clamp(y + dy, 0, 9), std::clamp(x + dx, 0, 11));
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          }
          if (out(c, y, x) < lo - 1e-6f || out(c, y, x) > hi + 1e-6f) ++bound_violations;
        }
      }
    }

    // Simple downsampler.
    const int k = 2 + draw % 6;
    SimpleDownsamplerParams<float> sp = SimpleDownsamplerParams<float>::init(k);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (std::size_t i = 0; i < sp.logits.size(); ++i) sp.logits[i] = static_cast<float>(normal(rng));
    const auto sk = simple_kernel(sp);
    check_blocks(std::vector<double>(sk.begin(), sk.end()), k * k);
    const auto fm = random_map<float>(3, 12, 12, rng);
    check_global_bounds(fm, simple_downsample(fm, sp, 4, 4));

    // Attention downsampler.
    auto ap = AttentionDownsamplerParams<float>::init(3, k, rng());
    for (auto* t : {&ap.salience_weight, &ap.salience_bias, &ap.w, &ap.b}) {
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<float>(normal(rng));
    }
    const auto aw = attention_weights(fm, ap, 4, 4);
    check_blocks(std::vector<double>(aw.begin(), aw.end()), k * k);
    check_global_bounds(fm, attention_downsample(fm, ap, 4, 4));
  }
  Outcome o;
  o.pass = worst_sum <= 1e-6 && negative == 0 && bound_violations == 0;
  o.detail = fmt("max |sum-1| %.2e over 300 draws; %d negative weights; %d convexity violations", worst_sum,
                 negative, bound_violations);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Degenerate limits

// Mirror indexing without repeating the edge sample.
int reflect_index(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

Outcome criterion_limits() {
  std::mt19937_64 rng(404);
  // JBU with constant guidance and a vanishing spatial kernel is plain bilinear.
  auto p = random_jbu<float>(2, rng);
  p.set_sigma_spatial(1e-3);
  const auto lr = random_map<float>(4, 7, 7, rng);
  const GuidanceImage flat(14, 14, 0.4f);
  const double jbu_err = max_abs_diff(jbu_upsample(lr, flat, p), bilinear_resize(lr, 14, 14));

  // Uniform logits with kernel = stride is average pooling.
  const auto fm = random_map<float>(3, 12, 12, rng);
  const auto sp = SimpleDownsamplerParams<float>::init(3);
  const auto pooled = simple_downsample(fm, sp, 4, 4);
  double pool_err = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double mean = 0.0;
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) mean += fm(c, 3 * i + a, 3 * j + b);
        }
        pool_err = std::max(pool_err, std::abs(mean / 9.0 - pooled(c, i, j)));
      }
    }
  }

  // Zero logits: the attention downsampler averages each (reflected) window.
  const auto fm2 = random_map<float>(3, 16, 16, rng);
  auto ap = AttentionDownsamplerParams<float>::init(3, 5, rng());
  ap.salience_weight.fill(0.0f);
  const auto attn = attention_downsample(fm2, ap, 4, 4);
  double attn_err = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double mean = 0.0;
        const int y0 = 4 * i - 1, x0 = 4 * j - 1;  // floor((s - k) / 2) with s = 4, k = 5
        for (int a = 0; a < 5; ++a) {
          for (int b = 0; b < 5; ++b) mean += fm2(c, reflect_index(y0 + a, 16), reflect_index(x0 + b, 16));
        }
        attn_err = std::max(attn_err, std::abs(mean / 25.0 - attn(c, i, j)));
      }
    }
  }
  Outcome o;
  o.pass = jbu_err <= 1e-4 && pool_err <= 1e-6 && attn_err <= 1e-6;
  o.detail = fmt("JBU vs bilinear %.2e; simple vs average pool %.2e; attention vs patch mean %.2e", jbu_err,
                 pool_err, attn_err);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Loss identities

Outcome criterion_losses() {
  std::mt19937_64 rng(505);
  const auto x = random_map<double>(4, 3, 3, rng);
  const std::vector<double> ones(9, 1.0);
  const double at_zero = reconstruction_loss<double>(x, x, ones);

  double worst_rel = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto pred = random_map<double>(4, 1, 1, rng);
    const auto obs = random_map<double>(4, 1, 1, rng);
    double norm = 0.0;
    for (int c = 0; c < 4; ++c) norm += std::pow(pred(c, 0, 0) - obs(c, 0, 0), 2);
    norm = std::sqrt(norm);
    double best_s = 0.0, best = INFINITY;
    for (int j = 0; j <= 40000; ++j) {
      const double s = 1e-3 * std::pow(1e4, j / 40000.0);
      const double l = reconstruction_loss<double>(pred, obs, std::vector<double>{s});
      if (l < best) best = l, best_s = s;
    }
    worst_rel = std::max(worst_rel, std::abs(best_s - norm) / norm);
  }

  const BasicFeatureMap<double> mags(1, 2, 2, std::vector<double>{1, 2, 3, 4});
  const double tv = tv_loss(mags);
  const BasicFeatureMap<double> flat(3, 5, 5, 0.7);
  const double tv_flat = tv_loss(flat);

  Outcome o;
  o.pass = at_zero == 0.0 && worst_rel <= 0.01 && tv == 10.0 && tv_flat == 0.0;
  o.detail = fmt("loss at zero residual %g; argmin s vs residual norm max rel %.2e; TV [[1,2],[3,4]] = %.17g; "
                 "TV constant = %g",
                 at_zero, worst_rel, tv, tv_flat);
  return o;
}

// ---------------------------------------------------------------------------
// 6. Implicit end-to-end on a synthetic image

Outcome criterion_implicit() {
  const auto t0 = Clock::now();
  SynthOptions so;
  so.seed = 6;
  so.size = 112;
  so.channels = 8;
  so.views = 10;
  so.factor = 16;
  const auto scene = synth_scene(so, 0);
  const SyntheticViewProvider views(scene.ground_truth, so.factor, scene.transforms, scene.view_seed);

  TrainConfig cfg = TrainConfig::implicit_defaults();
  cfg.steps = 1000;
  cfg.kernel_size = 15;
  const auto model = train_implicit(scene.image, views, cfg);
  const auto recovered = upsample(model, scene.image, so.size, so.size);
  const auto lr = views.view(JitterTransform::identity(so.size, so.size));
  const auto baseline = bilinear_resize(lr, so.size, so.size);
  const double cos_model = mean_cosine_similarity(recovered, scene.ground_truth);
  const double cos_bilinear = mean_cosine_similarity(baseline, scene.ground_truth);
  const double first = model.reconstruction_trace.front();
  const double last = model.reconstruction_trace.back();
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = cos_model - cos_bilinear >= 0.05 && last < 0.2 * first && secs < 600.0;
  o.detail = fmt("cosine %.4f vs bilinear %.4f (gain %.4f, need >= 0.05); reconstruction loss %.4f -> %.4f "
                 "(ratio %.3f, need < 0.2); %.0f s",
                 cos_model, cos_bilinear, cos_model - cos_bilinear, first, last, last / first, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 7. JBU end-to-end on a synthetic corpus

Outcome criterion_jbu() {
  const auto t0 = Clock::now();
  SynthOptions so;
  so.seed = 7;
  so.size = 112;
  so.channels = 32;
  so.count = 20;
  so.views = 10;
  so.max_zoom = 2.0;
  std::vector<CorpusItem> train, holdout;
  for (int i = 0; i < so.count; ++i) {
    auto scene = synth_scene(so, i);
    auto views = std::make_shared<SyntheticViewProvider>(scene.ground_truth, so.factor, scene.transforms,
                                                         scene.view_seed);
    CorpusItem item{"image_" + std::to_string(i), scene.image,
                    views->view(JitterTransform::identity(so.size, so.size)), views};
    (i < 15 ? train : holdout).push_back(std::move(item));
  }
  TrainConfig cfg = TrainConfig::jbu_defaults();
  cfg.steps = 300;
  const auto model = train_jbu(train, cfg);
  const auto ev = evaluate_jbu(model, holdout);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ev.jbu_loss < ev.bilinear_loss && secs < 600.0;
  o.detail = fmt("held-out loss %.5f vs bilinear %.5f over %d view evaluations; %.0f s", ev.jbu_loss,
                 ev.bilinear_loss, ev.views, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism of the training commands

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("featup_accept_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"featup"};
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (rc != 0) std::cerr << err.str();
  return rc;
}

Outcome criterion_determinism() {
  TempDir tmp;
  const auto d = tmp.path;
  const std::string ds = (d / "ds").string();
  int rc = cli({"synth", "--seed", "8", "--size", "64", "--channels", "6", "--count", "3", "--views", "4", "--out", ds});
  const std::string img = (d / "ds/image_0000/image.png").string();
  const std::string views = (d / "ds/image_0000/views").string();
  std::vector<std::string> files;
  const int thread_counts[] = {1, 3};
  for (int run = 0; run < 2; ++run) {
    set_thread_count(thread_counts[run]);
    const std::string tag = std::to_string(run);
    rc |= cli({"train-implicit", "--image", img, "--views", views, "--out", (d / ("imp" + tag + ".ckpt")).string(),
               "--trace", (d / ("imp" + tag + ".csv")).string(), "--steps", "15", "--kernel-size", "7", "--seed", "3",
               "--jitters", "4"});
    rc |= cli({"train-jbu", "--corpus", ds, "--out", (d / ("jbu" + tag + ".ckpt")).string(), "--trace",
               (d / ("jbu" + tag + ".csv")).string(), "--steps", "10", "--seed", "3", "--batch", "2"});
  }
  set_thread_count(1);
  int identical = 0, compared = 0;
  for (const std::string stem : {"imp", "jbu"}) {
    for (const std::string ext : {".ckpt", ".csv"}) {
      ++compared;
      if (rc == 0 && read_file(d / (stem + "0" + ext)) == read_file(d / (stem + "1" + ext))) ++identical;
    }
  }
  Outcome o;
  o.pass = rc == 0 && identical == compared;
  o.detail = fmt("%d of %d checkpoint and trace files byte-identical across repeated runs (1 vs 3 threads)",
                 identical, compared);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Round-trips

float random_float_bits(std::mt19937_64& rng) {
  static const float specials[] = {0.0f, -0.0f, 1e-45f, -1e-40f, 3.4e38f, -1.0f};
  std::uint32_t u;
  if (rng() % 8 == 0) return specials[rng() % 6];
  do {
    u = static_cast<std::uint32_t>(rng());
  } while (((u >> 23) & 0xff) == 0xff);  // finite values only
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

template <typename P>
void scramble(P& p, std::mt19937_64& rng) {
  p.visit([&](const char*, Tensor<float>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = random_float_bits(rng);
  });
}

template <typename P>
bool same_bits(const P& a, const P& b) {
  std::vector<std::string> x, y;
  auto dump = [](std::vector<std::string>& out) {
    return [&out](const char*, const Tensor<float>& t) {
      out.emplace_back(reinterpret_cast<const char*>(t.data()), t.size() * 4);
    };
  };
  a.visit(dump(x));
  b.visit(dump(y));
  return x == y;
}

Outcome criterion_roundtrips() {
  std::mt19937_64 rng(909);
  TempDir tmp;
  int npy_ok = 0, ckpt_ok = 0;
  for (int i = 0; i < 20; ++i) {
    const int c = 1 + rng() % 9, h = 1 + rng() % 17, w = 1 + rng() % 17;
    FeatureMap fm(c, h, w);
    for (auto& v : fm.storage()) v = random_float_bits(rng);
    const auto path = tmp.path / ("t" + std::to_string(i) + ".npy");
    write_npy(fm, path);
    const auto back = read_npy(path);
    if (back.same_shape(fm) && std::memcmp(back.data().data(), fm.data().data(), fm.size() * 4) == 0) ++npy_ok;

    const auto ckpt = tmp.path / ("m" + std::to_string(i) + ".ckpt");
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    if (i % 2 == 0) {
      ImplicitModel m;
      m.config = TrainConfig::implicit_defaults();
      m.config.seed = rng();
      m.config.view_seed = rng();
      m.config.hidden = 4 + rng() % 8;
      m.config.kernel_size = 3 + rng() % 5;
      m.config.lr = unit(rng) * 1e-3 + 1e-2;
      m.fourier = FourierConfig{1 + static_cast<int>(rng() % 4), true};
      m.image_h = m.image_w = 32;
      m.feature_h = m.feature_w = 2;
      const int k = 1 + rng() % 5;
      m.pca.channels = k + 2;
      m.pca.k = k;
      for (int j = 0; j < m.pca.channels; ++j) m.pca.mean.push_back(unit(rng));
      for (int j = 0; j < k * m.pca.channels; ++j) m.pca.components.push_back(unit(rng));
      for (int j = 0; j < k; ++j) m.pca.explained_variance.push_back(std::abs(unit(rng)));
      m.mlp = ImplicitParams<float>::init(m.fourier, m.config.hidden, k, rng());
      m.downsampler = AttentionDownsamplerParams<float>::init(k, m.config.kernel_size, rng());
      m.head = UncertaintyParams<float>::init(k);
      scramble(m.mlp, rng);
      scramble(m.downsampler, rng);
      scramble(m.head, rng);
      m.transforms = jitter_set(rng(), 3, 30, 1.8, 32, 32);
      for (int j = 0; j < 5; ++j) m.loss_trace.push_back(unit(rng)), m.reconstruction_trace.push_back(unit(rng));
      save_checkpoint(m, ckpt);
      const auto back_model = load_checkpoint(ckpt);
      const auto* b = std::get_if<ImplicitModel>(&back_model);
      if (b && b->config == m.config && b->transforms == m.transforms && b->loss_trace == m.loss_trace &&
          b->reconstruction_trace == m.reconstruction_trace && b->pca.mean == m.pca.mean &&
          b->pca.components == m.pca.components && b->pca.explained_variance == m.pca.explained_variance &&
          same_bits(b->mlp, m.mlp) && same_bits(b->downsampler, m.downsampler) && same_bits(b->head, m.head) &&
          encode_checkpoint(*b) == read_file(ckpt)) {
        ++ckpt_ok;
      }
    } else {
      JbuModel m;
      m.config = TrainConfig::jbu_defaults();
      m.config.seed = rng();
      m.config.radius = 1 + rng() % 3;
      m.config.proj_dim = 2 + rng() % 6;
      m.channels = 8;
      const int stages = rng() % 4;
      for (int s = 0; s < stages; ++s) {
        m.stages.push_back(JbuParams<float>::init(m.config.radius, rng()));
        scramble(m.stages.back(), rng);
      }
      m.downsampler = AttentionDownsamplerParams<float>::init(m.config.proj_dim, m.config.kernel_size, rng());
      m.head = UncertaintyParams<float>::init(m.config.proj_dim);
      scramble(m.downsampler, rng);
      scramble(m.head, rng);
      for (int j = 0; j < 5; ++j) m.loss_trace.push_back(unit(rng));
      save_checkpoint(m, ckpt);
      const auto back_model = load_checkpoint(ckpt);
      const auto* b = std::get_if<JbuModel>(&back_model);
      bool ok = b && b->config == m.config && b->channels == m.channels && b->loss_trace == m.loss_trace &&
                b->stages.size() == m.stages.size() && same_bits(b->downsampler, m.downsampler) &&
                same_bits(b->head, m.head) && encode_checkpoint(*b) == read_file(ckpt);
      for (std::size_t s = 0; ok && s < m.stages.size(); ++s) ok = same_bits(b->stages[s], m.stages[s]);
      if (ok) ++ckpt_ok;
    }
  }
  Outcome o;
  o.pass = npy_ok == 20 && ckpt_ok == 20;
  o.detail = fmt("NPY %d/20 bitwise; checkpoints %d/20 bitwise with exact config", npy_ok, ckpt_ok);
  return o;
}

// ---------------------------------------------------------------------------
// 10. PCA compression of rank-32 features

Outcome criterion_pca() {
  std::mt19937_64 rng(1010);
  const int c = 96, h = 16, w = 16, rank = 32;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(c) * rank), b(static_cast<std::size_t>(rank) * h * w);
  for (auto& v : a) v = normal(rng);
  for (auto& v : b) v = normal(rng);
  FeatureMap fm(c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    for (int p = 0; p < h * w; ++p) {
      double acc = 0.0;
      for (int r = 0; r < rank; ++r) acc += a[ch * rank + r] * b[static_cast<std::size_t>(r) * h * w + p];
      fm.channel(ch)[p] = static_cast<float>(acc);
    }
  }
  const auto model = pca_fit(fm, rank);
  const auto back = model.reconstruct(model.project(fm));
  double err = 0.0, energy = 0.0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    err += std::pow(double(fm.data()[i]) - back.data()[i], 2);
    energy += std::pow(double(fm.data()[i]), 2);
  }
  const double rel = err / energy;
  Outcome o;
  o.pass = rel <= 1e-4;
  o.detail = fmt("relative MSE %.3e at k=32 on %dx%dx%d rank-32 features", rel, c, h, w);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", criterion_gradients},
      {"kernel equivalence", criterion_kernels},
      {"normalization invariants", criterion_normalization},
      {"degenerate limits", criterion_limits},
      {"loss identities", criterion_losses},
      {"synthetic implicit end-to-end", criterion_implicit},
      {"synthetic JBU end-to-end", criterion_jbu},
      {"determinism", criterion_determinism},
      {"round-trips", criterion_roundtrips},
      {"PCA compression", criterion_pca},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d (%s): %s: %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
