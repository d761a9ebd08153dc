#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featup/error.hpp"

namespace featup {

/// Dense C x H x W map, channel-outermost and row-major.
///
/// Storage is `T` (float for everything user-facing); the differentiable
/// kernels are also instantiated for double so gradients can be checked
/// against finite differences.
template <typename T>
class BasicFeatureMap {
 public:
  using value_type = T;

  BasicFeatureMap() = default;
  BasicFeatureMap(int channels, int height, int width, T fill = T(0));
  BasicFeatureMap(int channels, int height, int width, std::vector<T> data);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int plane() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  const T& operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(c) * plane(), plane());
  }
  std::span<T> channel(int c) {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(c) * plane(), plane());
  }

  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  template <typename U>
  BasicFeatureMap<U> cast() const {
    return BasicFeatureMap<U>(channels_, height_, width_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool same_shape(const BasicFeatureMap& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  bool all_finite() const;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<float>;

/// H x W x 3 image with interleaved channels, values in [0,1].
template <typename T>
class BasicImage {
 public:
  BasicImage() = default;
  BasicImage(int height, int width, T fill = T(0));
  /// Values are clamped into [0,1].
  BasicImage(int height, int width, std::vector<T> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  T& operator()(int y, int x, int k) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + k]; }
  const T& operator()(int y, int x, int k) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + k];
  }

  std::span<const T> pixels() const { return pixels_; }
  std::span<T> pixels() { return pixels_; }

  template <typename U>
  BasicImage<U> cast() const {
    return BasicImage<U>(height_, width_, std::vector<U>(pixels_.begin(), pixels_.end()));
  }

  /// Planar 3 x H x W view of the same pixels.
  BasicFeatureMap<T> to_planar() const;
  static BasicImage from_planar(const BasicFeatureMap<T>& planar);

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> pixels_;
};

using GuidanceImage = BasicImage<float>;

/// Generic dense tensor used as the value type on the differentiation tape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0));
  Tensor(std::vector<int> shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }
  static Tensor from_feature_map(BasicFeatureMap<T> fm);
  BasicFeatureMap<T> to_feature_map() const;

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Rows/cols of a rank-2 tensor (rank-1 tensors count as a single row).
  int rows() const;
  int cols() const;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }
  T item() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T value);

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<int>& shape);

/// Throws NumericError naming `what` when the map holds NaN or Inf.
void require_finite(const FeatureMap& fm, const std::string& what);

}  // namespace featup
