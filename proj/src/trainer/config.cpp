#include "featup/config.hpp"

#include <cmath>
#include <string>

#include "featup/error.hpp"

namespace featup {

TrainConfig TrainConfig::implicit_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::jbu_defaults() {
  TrainConfig c;
  c.jitters = 2;
  c.batch = 4;
  c.max_zoom = 2.0;
  c.proj_dim = 30;
  c.kernel_size = 16;
  c.tv_weight = 0.0;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("invalid training config: " + what); };
  if (steps < 0) fail("steps must be >= 0");
  if (jitters < 1) fail("jitters must be >= 1");
  if (batch < 1) fail("batch must be >= 1");
  if (max_pad < 0) fail("max_pad must be >= 0");
  if (!(max_zoom >= 1.0) || !std::isfinite(max_zoom)) fail("max_zoom must be >= 1");
  if (proj_dim < 1) fail("proj_dim must be >= 1");
  if (kernel_size < 1) fail("kernel_size must be >= 1");
  if (!(tv_weight >= 0.0) || !std::isfinite(tv_weight)) fail("tv weight must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (hidden < 1) fail("hidden must be >= 1");
  if (num_freqs < 1) fail("num_freqs must be >= 1");
  if (radius < 1) fail("radius must be >= 1");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
}

}  // namespace featup
