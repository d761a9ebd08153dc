#include "featup/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace featup {

PcaModel pca_fit(const FeatureMap& fm, int k) {
  if (fm.empty()) throw DimensionError("pca_fit on an empty feature map");
  const int c = fm.channels();
  const int n = fm.plane();
  if (k < 1 || k > std::min(c, n)) {
    throw ParameterError("pca_fit: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(c, n)) + "]");
  }

  Eigen::MatrixXd x(n, c);
  for (int ch = 0; ch < c; ++ch) {
    auto plane = fm.channel(ch);
    for (int i = 0; i < n; ++i) x(i, ch) = plane[i];
  }
  Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");

  PcaModel model;
  model.channels = c;
  model.k = k;
  model.mean.assign(mu.data(), mu.data() + c);
  model.components.resize(static_cast<std::size_t>(k) * c);
  model.explained_variance.resize(k);
  // Eigen sorts ascending; walk from the top.
  for (int j = 0; j < k; ++j) {
    const int col = c - 1 - j;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    int arg = 0;
    for (int i = 1; i < c; ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0) v = -v;
    std::copy(v.data(), v.data() + c, model.components.begin() + static_cast<std::ptrdiff_t>(j) * c);
    model.explained_variance[j] = std::max(0.0, solver.eigenvalues()(col));
  }
  return model;
}

FeatureMap PcaModel::project(const FeatureMap& fm) const {
  if (fm.channels() != channels) {
    throw DimensionError("PCA expects " + std::to_string(channels) + " channels, got " +
                         std::to_string(fm.channels()));
  }
  const int n = fm.plane();
  FeatureMap out(k, fm.height(), fm.width());
  std::vector<double> centered(channels);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < channels; ++ch) centered[ch] = fm.channel(ch)[i] - mean[ch];
    for (int j = 0; j < k; ++j) {
      const double* row = components.data() + static_cast<std::size_t>(j) * channels;
      double acc = 0.0;
      for (int ch = 0; ch < channels; ++ch) acc += row[ch] * centered[ch];
      out.channel(j)[i] = static_cast<float>(acc);
    }
  }
  return out;
}

template <typename T>
BasicFeatureMap<T> PcaModel::reconstruct_as(const BasicFeatureMap<T>& coords) const {
  if (coords.channels() != k) {
    throw DimensionError("PCA reconstruct expects " + std::to_string(k) + " channels, got " +
                         std::to_string(coords.channels()));
  }
  const int n = coords.plane();
  BasicFeatureMap<T> out(channels, coords.height(), coords.width());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < channels; ++ch) {
      double acc = mean[ch];
      for (int j = 0; j < k; ++j) acc += components[static_cast<std::size_t>(j) * channels + ch] * coords.channel(j)[i];
      out.channel(ch)[i] = static_cast<T>(acc);
    }
  }
  return out;
}

FeatureMap PcaModel::reconstruct(const FeatureMap& coords) const { return reconstruct_as<float>(coords); }

template BasicFeatureMap<float> PcaModel::reconstruct_as(const BasicFeatureMap<float>&) const;
template BasicFeatureMap<double> PcaModel::reconstruct_as(const BasicFeatureMap<double>&) const;

}  // namespace featup
