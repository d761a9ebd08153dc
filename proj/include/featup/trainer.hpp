#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "featup/config.hpp"
#include "featup/downsample.hpp"
#include "featup/implicit.hpp"
#include "featup/jbu.hpp"
#include "featup/losses.hpp"
#include "featup/nadam.hpp"
#include "featup/pca.hpp"
#include "featup/views.hpp"

namespace featup {

/// Per-image implicit upsampler plus everything needed to query and audit it.
struct ImplicitModel {
  TrainConfig config;
  FourierConfig fourier;
  int image_h = 0, image_w = 0;
  int feature_h = 0, feature_w = 0;
  PcaModel pca;  // compression fit on the identity view
  ImplicitParams<float> mlp;
  AttentionDownsamplerParams<float> downsampler;
  UncertaintyParams<float> head;
  std::vector<JitterTransform> transforms;
  std::vector<double> loss_trace;            // total objective per step
  std::vector<double> reconstruction_trace;  // multi-view term alone
};

/// Corpus-level JBU stack with its training-time downsampler and uncertainty head.
struct JbuModel {
  TrainConfig config;
  int channels = 0;
  std::vector<JbuParams<float>> stages;
  AttentionDownsamplerParams<float> downsampler;
  UncertaintyParams<float> head;
  std::vector<double> loss_trace;
};

struct CorpusItem {
  std::string name;
  GuidanceImage image;
  FeatureMap features;  // identity view
  std::shared_ptr<const ViewProvider> views;
};

using ProgressFn = std::function<void(int step, double loss)>;

/// Upsampling factor implied by an image and its low-resolution features.
int infer_factor(int image_h, int image_w, int feature_h, int feature_w);

ImplicitModel train_implicit(const GuidanceImage& image, const ViewProvider& views, const TrainConfig& cfg,
                             const ProgressFn& progress = {});

JbuModel train_jbu(const std::vector<CorpusItem>& corpus, const TrainConfig& cfg, const ProgressFn& progress = {});

/// Implicit path: query at target_h x target_w and decompress to the original channels.
FeatureMap upsample(const ImplicitModel& model, const GuidanceImage& image, int target_h, int target_w);

/// JBU path: runs the first log2(factor) stages; the guidance is resized to the target if needed.
FeatureMap upsample(const JbuModel& model, const GuidanceImage& image, const FeatureMap& features, int target_h,
                    int target_w);

struct JbuEvaluation {
  double jbu_loss = 0.0;
  double bilinear_loss = 0.0;
  int views = 0;
};

/// Mean multi-view reconstruction loss on held-out images for the trained
/// stack and for plain bilinear upsampling, both rendered through the model's
/// own downsampler and uncertainty head under the same projections.
JbuEvaluation evaluate_jbu(const JbuModel& model, const std::vector<CorpusItem>& holdout);

/// Mean over pixels of the cosine similarity between feature vectors.
double mean_cosine_similarity(const FeatureMap& a, const FeatureMap& b);

/// Named parameter references in a stable order, for optimizers and checkpoints.
template <typename P>
void collect_parameters(P& params, const std::string& prefix, std::vector<ParameterRef<float>>& out) {
  params.visit([&](const char* name, Tensor<float>& t) { out.push_back({prefix + name, &t}); });
}

}  // namespace featup
