#pragma once

#include <cstdint>
#include <optional>

namespace featup {

/// Training hyperparameters. The two factory functions give the per-image
/// implicit and corpus-level JBU defaults.
struct TrainConfig {
  int steps = 2000;
  int jitters = 10;  // views per image (implicit) or per image per batch (JBU)
  int batch = 1;     // images per batch
  int max_pad = 30;
  double max_zoom = 1.8;
  int proj_dim = 128;  // PCA components (implicit) or random projection dim (JBU)
  int kernel_size = 29;
  double tv_weight = 0.05;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Seed of the jitter set; defaults to the one recorded with the views.
  std::optional<std::uint64_t> view_seed;
  int hidden = 256;  // implicit MLP width
  int num_freqs = 10;
  int radius = 1;  // JBU neighborhood radius
  double clip_norm = 10.0;

  static TrainConfig implicit_defaults();
  static TrainConfig jbu_defaults();

  /// Throws ParameterError naming the first invalid field.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

}  // namespace featup
