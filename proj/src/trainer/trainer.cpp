#include "featup/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "featup/ops.hpp"
#include "featup/projection.hpp"
#include "featup/rng.hpp"
#include "featup/sampling.hpp"

namespace featup {

namespace {

// Sub-streams of the training seed.
enum Stream : std::uint64_t {
  kMlpInit = 1,
  kDownsamplerInit = 2,
  kDropout = 3,
  kBatch = 4,
  kProjection = 5,
  kEvaluation = 6,
  kStageInit = 16,
};

constexpr int kEvalProjections = 4;

std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t index = 0) {
  return derive_seed(derive_seed(seed, s), index);
}

Tensor<float> rows_of(const FeatureMap& fm) {
  Tensor<float> t({fm.plane(), fm.channels()});
  for (int c = 0; c < fm.channels(); ++c) {
    auto ch = fm.channel(c);
    for (int p = 0; p < fm.plane(); ++p) t[static_cast<std::size_t>(p) * fm.channels() + c] = ch[p];
  }
  return t;
}

struct HeadVars {
  ad::Var w, b;
};

HeadVars head_parameters(ad::Tape<float>& tape, const UncertaintyParams<float>& head, const std::string& prefix) {
  return {tape.parameter(prefix + "w", head.w), tape.parameter(prefix + "b", head.b)};
}

// One multi-view term: transform the high-resolution prediction, downsample,
// and score it against the observed view under the learned uncertainty.
ad::Var view_term(ad::Tape<float>& tape, ad::Var hr, const JitterTransform& t, int hr_h, int hr_w,
                  const ad::AttentionVars& down, int kernel_size, const HeadVars& head, const FeatureMap& obs) {
  ad::Var moved = t.is_identity() ? hr : ad::apply_transform(tape, hr, t, hr_h, hr_w);
  ad::Var pred = ad::attention_downsample(tape, moved, down, kernel_size, obs.height(), obs.width());
  ad::Var obs_map = tape.constant(Tensor<float>::from_feature_map(obs));
  ad::Var scale = ad::uncertainty(tape, tape.constant(rows_of(obs)), head.w, head.b);
  return ad::reconstruction_loss(tape, pred, obs_map, scale);
}

void optimizer_step(ad::Tape<float>& tape, ad::Var loss, const TrainConfig& cfg, Nadam<float>& opt,
                    const std::vector<ParameterRef<float>>& refs) {
  tape.backward(loss);
  auto grads = tape.parameter_gradients();
  clip_grad_norm(grads, cfg.clip_norm);
  opt.step(refs, grads);
}

void require_finite_loss(double v, int step) {
  if (!std::isfinite(v)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
}

// First min(k, n) entries of a seeded permutation of [0, n).
std::vector<int> choose(std::mt19937_64& rng, int n, int k) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

bool within_range(const JitterTransform& t, const TrainConfig& cfg) {
  const int max_pad = std::max({t.pad_left, t.pad_right, t.pad_top, t.pad_bottom});
  return max_pad <= cfg.max_pad && t.zoom <= cfg.max_zoom + 1e-12;
}

}  // namespace

int infer_factor(int image_h, int image_w, int feature_h, int feature_w) {
  if (feature_h < 1 || feature_w < 1 || image_h < 1 || image_w < 1) throw DimensionError("empty image or features");
  if (image_h % feature_h != 0 || image_w % feature_w != 0 || image_h / feature_h != image_w / feature_w) {
    throw DimensionError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                         " is not a uniform integer multiple of features " + std::to_string(feature_h) + "x" +
                         std::to_string(feature_w));
  }
  return image_h / feature_h;
}

ImplicitModel train_implicit(const GuidanceImage& image, const ViewProvider& views, const TrainConfig& cfg,
                             const ProgressFn& progress) {
  cfg.validate();
  if (image.empty()) throw DimensionError("implicit training needs a guidance image");
  const int hr_h = image.height();
  const int hr_w = image.width();
  ImplicitModel model;
  model.config = cfg;
  model.image_h = hr_h;
  model.image_w = hr_w;
  const std::uint64_t vseed = cfg.view_seed ? *cfg.view_seed : views.view_seed().value_or(cfg.seed);
  model.config.view_seed = vseed;
  model.transforms = jitter_set(vseed, cfg.jitters, cfg.max_pad, cfg.max_zoom, hr_h, hr_w);

  std::vector<FeatureMap> raw;
  for (const auto& t : model.transforms) {
    raw.push_back(views.view(t));
    require_finite(raw.back(), "view " + t.hash());
    if (!raw.back().same_shape(raw.front())) throw DimensionError("view " + describe(t) + " has a different shape");
  }
  model.feature_h = raw[0].height();
  model.feature_w = raw[0].width();
  infer_factor(hr_h, hr_w, model.feature_h, model.feature_w);

  const int k = std::min({cfg.proj_dim, raw[0].channels(), raw[0].plane()});
  model.pca = pca_fit(raw[0], k);
  std::vector<FeatureMap> obs;
  for (const auto& v : raw) obs.push_back(model.pca.project(v));

  model.fourier = FourierConfig{cfg.num_freqs, true};
  model.mlp = ImplicitParams<float>::init(model.fourier, cfg.hidden, k, stream_seed(cfg.seed, kMlpInit));
  model.downsampler =
      AttentionDownsamplerParams<float>::init(k, cfg.kernel_size, stream_seed(cfg.seed, kDownsamplerInit));
  model.head = UncertaintyParams<float>::init(k);

  const int n = hr_h * hr_w;
  const Tensor<float> encoded({n, model.fourier.encoded_dim()},
                              fourier_features<float>(grid_inputs(image, hr_h, hr_w, model.fourier), n, model.fourier));

  std::vector<ParameterRef<float>> refs;
  collect_parameters(model.mlp, "mlp.", refs);
  collect_parameters(model.downsampler, "down.", refs);
  collect_parameters(model.head, "head.", refs);
  Nadam<float> opt(NadamConfig{.lr = cfg.lr});

  const float tv_scale = static_cast<float>(cfg.tv_weight / n);
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape<float> tape;
    auto mv = ad::implicit_parameters(tape, model.mlp, "mlp.");
    auto dv = ad::attention_parameters(tape, model.downsampler, "down.");
    auto hv = head_parameters(tape, model.head, "head.");
    ad::Var rows = ad::implicit_rows(tape, mv, tape.constant(encoded), true, stream_seed(cfg.seed, kDropout, step));
    ad::Var hr = ad::rows_to_map(tape, rows, hr_h, hr_w);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < model.transforms.size(); ++i) {
      terms.push_back(view_term(tape, hr, model.transforms[i], hr_h, hr_w, dv, cfg.kernel_size, hv, obs[i]));
    }
    ad::Var rec = ad::mean_of<float>(tape, terms);
    ad::Var total = rec;
    if (cfg.tv_weight > 0.0) total = ad::add(tape, rec, ad::scale(tape, ad::tv_loss(tape, hr), tv_scale));
    const double loss = tape.value(total).item();
    require_finite_loss(loss, step);
    model.loss_trace.push_back(loss);
    model.reconstruction_trace.push_back(tape.value(rec).item());
    optimizer_step(tape, total, cfg, opt, refs);
    if (progress) progress(step, loss);
  }
  return model;
}

JbuModel train_jbu(const std::vector<CorpusItem>& corpus, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (corpus.empty()) throw ParameterError("JBU training needs a nonempty corpus");
  const int channels = corpus[0].features.channels();
  const int stages = jbu_stage_count(corpus[0].features.height(), corpus[0].features.width(),
                                     corpus[0].image.height(), corpus[0].image.width());
  std::vector<std::vector<JitterTransform>> pools;
  for (const auto& item : corpus) {
    if (item.features.channels() != channels) {
      throw DimensionError("corpus item " + item.name + " has " + std::to_string(item.features.channels()) +
                           " channels, expected " + std::to_string(channels));
    }
    if (jbu_stage_count(item.features.height(), item.features.width(), item.image.height(), item.image.width()) !=
        stages) {
      throw DimensionError("corpus item " + item.name + " has a different upsampling factor");
    }
    if (!item.views) throw ParameterError("corpus item " + item.name + " has no views");
    std::vector<JitterTransform> pool;
    for (const auto& t : item.views->transforms()) {
      if (t.ref_height == item.image.height() && t.ref_width == item.image.width() && within_range(t, cfg)) {
        pool.push_back(t);
      }
    }
    if (pool.empty()) throw ParameterError("corpus item " + item.name + " has no views within the jitter range");
    pools.push_back(std::move(pool));
  }

  JbuModel model;
  model.config = cfg;
  model.channels = channels;
  for (int s = 0; s < stages; ++s) {
    model.stages.push_back(JbuParams<float>::init(cfg.radius, stream_seed(cfg.seed, kStageInit, s)));
  }
  model.downsampler =
      AttentionDownsamplerParams<float>::init(cfg.proj_dim, cfg.kernel_size, stream_seed(cfg.seed, kDownsamplerInit));
  model.head = UncertaintyParams<float>::init(cfg.proj_dim);

  std::vector<ParameterRef<float>> refs;
  for (int s = 0; s < stages; ++s) collect_parameters(model.stages[s], "jbu" + std::to_string(s) + ".", refs);
  collect_parameters(model.downsampler, "down.", refs);
  collect_parameters(model.head, "head.", refs);
  Nadam<float> opt(NadamConfig{.lr = cfg.lr});

  for (int step = 0; step < cfg.steps; ++step) {
    std::mt19937_64 rng(stream_seed(cfg.seed, kBatch, step));
    const auto batch = choose(rng, static_cast<int>(corpus.size()), cfg.batch);
    const auto proj = random_projection_matrix(channels, cfg.proj_dim, stream_seed(cfg.seed, kProjection, step));

    ad::Tape<float> tape;
    std::vector<ad::JbuVars> sv;
    for (int s = 0; s < stages; ++s) {
      sv.push_back(ad::jbu_parameters(tape, model.stages[s], "jbu" + std::to_string(s) + "."));
    }
    auto dv = ad::attention_parameters(tape, model.downsampler, "down.");
    auto hv = head_parameters(tape, model.head, "head.");
    std::vector<ad::Var> terms;
    for (int b : batch) {
      const CorpusItem& item = corpus[b];
      ad::Var lr = tape.constant(Tensor<float>::from_feature_map(project_channels(item.features, proj, cfg.proj_dim)));
      ad::Var hr = ad::jbu_stack<float>(tape, lr, item.image, sv, JbuBackend::fast);
      for (int j : choose(rng, static_cast<int>(pools[b].size()), cfg.jitters)) {
        const JitterTransform& t = pools[b][j];
        const FeatureMap obs = project_channels(item.views->view(t), proj, cfg.proj_dim);
        terms.push_back(
            view_term(tape, hr, t, item.image.height(), item.image.width(), dv, cfg.kernel_size, hv, obs));
      }
    }
    ad::Var loss = ad::mean_of<float>(tape, terms);
    const double value = tape.value(loss).item();
    require_finite_loss(value, step);
    model.loss_trace.push_back(value);
    optimizer_step(tape, loss, cfg, opt, refs);
    if (progress) progress(step, value);
  }
  return model;
}

FeatureMap upsample(const ImplicitModel& model, const GuidanceImage& image, int target_h, int target_w) {
  auto coords = implicit_forward(model.mlp, model.fourier, image, target_h, target_w);
  return model.pca.reconstruct(coords);
}

FeatureMap upsample(const JbuModel& model, const GuidanceImage& image, const FeatureMap& features, int target_h,
                    int target_w) {
  const int needed = jbu_stage_count(features.height(), features.width(), target_h, target_w);
  if (needed > static_cast<int>(model.stages.size())) {
    throw ParameterError("factor needs " + std::to_string(needed) + " JBU stages, checkpoint has " +
                         std::to_string(model.stages.size()));
  }
  if (needed == 0) return features;
  if (image.empty()) throw DimensionError("JBU upsampling needs a guidance image");
  const GuidanceImage guidance = bilinear_resize(image, target_h, target_w);
  return jbu_stack<float>(features, guidance, std::span(model.stages.data(), needed));
}

JbuEvaluation evaluate_jbu(const JbuModel& model, const std::vector<CorpusItem>& holdout) {
  if (holdout.empty()) throw ParameterError("evaluation needs at least one image");
  const int d = model.config.proj_dim;
  JbuEvaluation ev;
  double jbu_total = 0.0, bil_total = 0.0;
  for (int r = 0; r < kEvalProjections; ++r) {
    for (const auto& item : holdout) {
      const auto proj =
          random_projection_matrix(item.features.channels(), d, stream_seed(model.config.seed, kEvaluation, r));
      const FeatureMap lr = project_channels(item.features, proj, d);
      const int hr_h = item.image.height();
      const int hr_w = item.image.width();
      const int needed = jbu_stage_count(lr.height(), lr.width(), hr_h, hr_w);
      if (needed != static_cast<int>(model.stages.size())) {
        throw DimensionError("held-out item " + item.name + " has a different upsampling factor");
      }
      const FeatureMap hr_jbu = jbu_stack<float>(lr, item.image, model.stages);
      const FeatureMap hr_bil = bilinear_resize(lr, hr_h, hr_w);
      for (const auto& t : item.views->transforms()) {
        const FeatureMap obs = project_channels(item.views->view(t), proj, d);
        const auto scale = model.head.scale(obs);
        auto score = [&](const FeatureMap& hr) {
          auto moved = apply_transform(t, hr, hr_h, hr_w);
          auto pred = attention_downsample(moved, model.downsampler, obs.height(), obs.width());
          return reconstruction_loss<float>(pred, obs, scale);
        };
        jbu_total += score(hr_jbu);
        bil_total += score(hr_bil);
        ++ev.views;
      }
    }
  }
  ev.jbu_loss = jbu_total / ev.views;
  ev.bilinear_loss = bil_total / ev.views;
  return ev;
}

double mean_cosine_similarity(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) throw DimensionError("cosine similarity needs equal shapes");
  double total = 0.0;
  for (int p = 0; p < a.plane(); ++p) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
      const double x = a.channel(c)[p];
      const double y = b.channel(c)[p];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (na > 0.0 && nb > 0.0) total += dot / std::sqrt(na * nb);
  }
  return total / a.plane();
}

}  // namespace featup
