#include "featup/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>

#include "featup/memory.hpp"
#include "featup/rng.hpp"

namespace featup {

std::string BenchShape::label() const {
  std::ostringstream os;
  os << batch << "x" << height << "x" << width << "x" << channels << "x" << radius;
  return os.str();
}

BenchShape BenchShape::parse(const std::string& text) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, 'x')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParameterError("bad benchmark shape '" + text + "', expected BxHxWxCxR");
    }
  }
  if (v.size() != 5) throw ParameterError("bad benchmark shape '" + text + "', expected BxHxWxCxR");
  BenchShape s{v[0], v[1], v[2], v[3], v[4]};
  if (s.batch < 1 || s.height < 2 || s.width < 2 || s.channels < 1 || s.radius < 1 || s.height % 2 || s.width % 2) {
    throw ParameterError("benchmark shape '" + text + "' needs positive sizes and even height and width");
  }
  return s;
}

std::vector<BenchShape> table8_shapes() {
  return {{1, 14, 14, 2048, 5},  {1, 512, 512, 3, 5},  {16, 32, 32, 2048, 5}, {32, 512, 512, 3, 5},
          {64, 14, 14, 2048, 5}, {64, 224, 224, 3, 5}, {64, 64, 64, 16, 5},   {64, 64, 64, 16, 7}};
}

std::size_t reference_unfold_bytes(const BenchShape& s) {
  const std::size_t n = static_cast<std::size_t>(2 * s.radius + 1) * (2 * s.radius + 1);
  // Forward features and embeddings plus their backward counterparts.
  return 2 * static_cast<std::size_t>(s.height) * s.width * n * (s.channels + kRangeDim) * sizeof(float);
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct BenchItem {
  FeatureMap lr;
  GuidanceImage guidance;
  FeatureMap grad;
};

std::vector<BenchItem> make_items(const BenchShape& s, std::uint64_t seed) {
  std::vector<BenchItem> items;
  for (int b = 0; b < s.batch; ++b) {
    std::mt19937_64 rng(derive_seed(seed, b));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    BenchItem it;
    it.lr = FeatureMap(s.channels, s.height / 2, s.width / 2);
    for (auto& v : it.lr.storage()) v = normal(rng);
    std::vector<float> px(static_cast<std::size_t>(s.height) * s.width * 3);
    for (auto& v : px) v = unit(rng);
    it.guidance = GuidanceImage(s.height, s.width, std::move(px));
    it.grad = FeatureMap(s.channels, s.height, s.width);
    for (auto& v : it.grad.storage()) v = normal(rng);
    items.push_back(std::move(it));
  }
  return items;
}

JbuParams<float> bench_params(int radius, std::uint64_t seed) {
  // Larger-than-init MLP weights so the range kernel is not trivially uniform.
  auto p = JbuParams<float>::init(radius, seed);
  for (auto* t : {&p.w1, &p.w2}) {
    for (auto& v : t->storage()) v *= 25.0f;
  }
  p.set_sigma_spatial(0.7);
  return p;
}

}  // namespace

BenchMeasurement measure_jbu(const BenchShape& shape, JbuBackend backend, const BenchOptions& options) {
  auto items = make_items(shape, options.seed);
  auto params = bench_params(shape.radius, derive_seed(options.seed, 1u << 20));
  BenchMeasurement m;
  std::vector<double> fwd, bwd;
  const std::size_t base = ScratchCounter::current_bytes();
  ScratchCounter::reset_peak();
  for (int r = 0; r < std::max(1, options.repeats); ++r) {
    double f_total = 0.0, b_total = 0.0;
    m.outputs.clear();
    for (const auto& it : items) {
      auto t0 = Clock::now();
      auto result = jbu_forward(it.lr, it.guidance, params, backend);
      auto t1 = Clock::now();
      auto grads = jbu_backward(*result.context, it.grad);
      auto t2 = Clock::now();
      f_total += elapsed_ms(t0, t1);
      b_total += elapsed_ms(t1, t2);
      m.outputs.push_back(std::move(result.output));
    }
    fwd.push_back(f_total);
    bwd.push_back(b_total);
  }
  m.forward_ms = median(fwd);
  m.backward_ms = median(bwd);
  m.peak_bytes = ScratchCounter::peak_bytes() - std::min(base, ScratchCounter::peak_bytes());
  return m;
}

std::vector<BenchRow> run_jbu_bench(const std::vector<BenchShape>& shapes, const BenchOptions& options) {
  std::vector<BenchRow> rows;
  for (const auto& s : shapes) {
    for (auto backend : {JbuBackend::fast, JbuBackend::reference}) {
      BenchRow row;
      row.shape = s;
      row.method = backend == JbuBackend::fast ? "fast" : "reference";
      if (backend == JbuBackend::reference && reference_unfold_bytes(s) > options.reference_limit_bytes) {
        row.skipped = true;
      } else {
        auto m = measure_jbu(s, backend, options);
        row.forward_ms = m.forward_ms;
        row.backward_ms = m.backward_ms;
        row.peak_mb = m.peak_bytes / (1024.0 * 1024.0);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %-10s %14s %14s %14s\n", "shape (BxHxWxCxR)", "method", "forward ms",
                "backward ms", "peak MB");
  os << line;
  for (const auto& r : rows) {
    if (r.skipped) {
      std::snprintf(line, sizeof line, "%-22s %-10s %14s %14s %14s\n", r.shape.label().c_str(), r.method.c_str(),
                    "skipped", "skipped", "skipped");
    } else {
      std::snprintf(line, sizeof line, "%-22s %-10s %14.3f %14.3f %14.2f\n", r.shape.label().c_str(),
                    r.method.c_str(), r.forward_ms, r.backward_ms, r.peak_mb);
    }
    os << line;
  }
  return os.str();
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "shape,method,forward_ms,backward_ms,peak_mb\n";
  char line[160];
  for (const auto& r : rows) {
    if (r.skipped) {
      os << r.shape.label() << "," << r.method << ",,,\n";
      continue;
    }
    std::snprintf(line, sizeof line, "%s,%s,%.4f,%.4f,%.4f\n", r.shape.label().c_str(), r.method.c_str(),
                  r.forward_ms, r.backward_ms, r.peak_mb);
    os << line;
  }
  return os.str();
}

}  // namespace featup
