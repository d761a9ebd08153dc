#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "featup/jbu.hpp"

namespace featup {

/// Benchmark case: batch, output height/width, channels and neighborhood radius.
/// Input features are at half the output resolution.
struct BenchShape {
  int batch = 1;
  int height = 14;
  int width = 14;
  int channels = 2048;
  int radius = 5;

  std::string label() const;
  /// Parses "BxHxWxCxR".
  static BenchShape parse(const std::string& text);
};

struct BenchRow {
  BenchShape shape;
  std::string method;  // "fast" or "reference"
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double peak_mb = 0.0;
  bool skipped = false;  // reference footprint above the configured limit
};

struct BenchOptions {
  int repeats = 3;
  std::uint64_t seed = 0;
  /// Reference runs whose unfolded buffers would exceed this are skipped.
  std::size_t reference_limit_bytes = std::size_t(2) << 30;
};

/// The shapes of the published kernel comparison.
std::vector<BenchShape> table8_shapes();

/// Bytes the reference backend materializes for one image of `shape`.
std::size_t reference_unfold_bytes(const BenchShape& shape);

struct BenchMeasurement {
  double forward_ms = 0.0;   // median over repeats, whole batch
  double backward_ms = 0.0;  // median over repeats, whole batch
  std::size_t peak_bytes = 0;
  std::vector<FeatureMap> outputs;  // last repeat, one per batch item
};

/// Times one backend on seeded random data for `shape`.
BenchMeasurement measure_jbu(const BenchShape& shape, JbuBackend backend, const BenchOptions& options);

std::vector<BenchRow> run_jbu_bench(const std::vector<BenchShape>& shapes, const BenchOptions& options);

std::string bench_table(const std::vector<BenchRow>& rows);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace featup
