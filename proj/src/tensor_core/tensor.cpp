#include "featup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace featup {

namespace {

std::size_t checked_volume(int c, int h, int w) {
  if (c < 1 || h < 1 || w < 1) {
    throw DimensionError("feature map dimensions must be positive, got " + std::to_string(c) + "x" +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  return static_cast<std::size_t>(c) * h * w;
}

}  // namespace

template <typename T>
BasicFeatureMap<T>::BasicFeatureMap(int channels, int height, int width, T fill)
    : channels_(channels), height_(height), width_(width), data_(checked_volume(channels, height, width), fill) {}

template <typename T>
BasicFeatureMap<T>::BasicFeatureMap(int channels, int height, int width, std::vector<T> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != checked_volume(channels, height, width)) {
    throw DimensionError("feature map payload has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(checked_volume(channels, height, width)));
  }
}

template <typename T>
bool BasicFeatureMap<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicImage<T>::BasicImage(int height, int width, T fill)
    : height_(height), width_(width), pixels_(checked_volume(3, height, width), std::clamp(fill, T(0), T(1))) {}

template <typename T>
BasicImage<T>::BasicImage(int height, int width, std::vector<T> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != checked_volume(3, height, width)) {
    throw DimensionError("image payload has " + std::to_string(pixels_.size()) + " values, expected " +
                         std::to_string(checked_volume(3, height, width)));
  }
  for (auto& v : pixels_) {
    v = std::isfinite(v) ? std::clamp(v, T(0), T(1)) : T(0);
  }
}

template <typename T>
BasicFeatureMap<T> BasicImage<T>::to_planar() const {
  BasicFeatureMap<T> out(3, height_, width_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int k = 0; k < 3; ++k) out(k, y, x) = (*this)(y, x, k);
    }
  }
  return out;
}

template <typename T>
BasicImage<T> BasicImage<T>::from_planar(const BasicFeatureMap<T>& planar) {
  if (planar.channels() != 3) throw DimensionError("planar image must have 3 channels");
  std::vector<T> px(static_cast<std::size_t>(planar.plane()) * 3);
  for (int y = 0; y < planar.height(); ++y) {
    for (int x = 0; x < planar.width(); ++x) {
      for (int k = 0; k < 3; ++k) px[(static_cast<std::size_t>(y) * planar.width() + x) * 3 + k] = planar(k, y, x);
    }
  }
  return BasicImage(planar.height(), planar.width(), std::move(px));
}

namespace {

std::size_t shape_volume(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative tensor dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_volume(shape_)) {
    throw DimensionError("tensor payload size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_feature_map(BasicFeatureMap<T> fm) {
  std::vector<int> shape{fm.channels(), fm.height(), fm.width()};
  return Tensor(std::move(shape), std::move(fm.storage()));
}

template <typename T>
BasicFeatureMap<T> Tensor<T>::to_feature_map() const {
  if (shape_.size() != 3) throw DimensionError("expected a rank-3 tensor, got " + shape_string(shape_));
  return BasicFeatureMap<T>(shape_[0], shape_[1], shape_[2], data_);
}

template <typename T>
int Tensor<T>::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[0];
}

template <typename T>
int Tensor<T>::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[1];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw DimensionError("item() on a tensor of shape " + shape_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void require_finite(const FeatureMap& fm, const std::string& what) {
  if (!fm.all_finite()) throw NumericError(what + " contains NaN or Inf values");
}

template class BasicFeatureMap<float>;
template class BasicFeatureMap<double>;
template class BasicImage<float>;
template class BasicImage<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace featup
