#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "segcal/error.hpp"

namespace segcal {

// Rank-2/3 array of doubles in row-major order. Rank-3 arrays are
// channel-first {channels, height, width}, so walking the class vector of a
// pixel strides by height*width. All computation is in 64-bit floats.
class DenseArray {
 public:
  DenseArray() = default;

  explicit DenseArray(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  static DenseArray from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    if (checked_size(shape) != data.size())
      throw invalid_input("DenseArray: shape does not match data length");
    DenseArray a;
    a.shape_ = std::move(shape);
    a.data_ = std::move(data);
    return a;
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-2 access.
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  // Rank-3 access, channel-first.
  double operator()(std::size_t k, std::size_t r, std::size_t c) const {
    return data_[(k * shape_[1] + r) * shape_[2] + c];
  }
  double& operator()(std::size_t k, std::size_t r, std::size_t c) {
    return data_[(k * shape_[1] + r) * shape_[2] + c];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.size() < 2 || shape.size() > 3)
      throw invalid_input("DenseArray: rank must be 2 or 3");
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw invalid_input("DenseArray: zero extent");
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Per-pixel integer class assignments for an H x W image with K classes.
// Construction rejects any label outside [0, K).
class LabelMap {
 public:
  LabelMap(std::size_t height, std::size_t width, int classes, std::vector<int> labels)
      : height_(height), width_(width), classes_(classes), labels_(std::move(labels)) {
    if (height_ == 0 || width_ == 0) throw invalid_input("LabelMap: empty image");
    if (classes_ < 1) throw invalid_input("LabelMap: classes must be positive");
    if (labels_.size() != height_ * width_)
      throw invalid_input("LabelMap: label count does not match height*width");
    for (int v : labels_)
      if (v < 0 || v >= classes_)
        throw invalid_input("LabelMap: label " + std::to_string(v) + " outside [0, " +
                            std::to_string(classes_) + ")");
  }

  LabelMap(std::size_t height, std::size_t width, int classes)
      : LabelMap(height, width, classes, std::vector<int>(height * width, 0)) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  int classes() const { return classes_; }
  std::size_t pixel_count() const { return labels_.size(); }

  int at(std::size_t r, std::size_t c) const { return labels_[r * width_ + c]; }
  int operator[](std::size_t pixel) const { return labels_[pixel]; }
  const std::vector<int>& labels() const { return labels_; }

  bool operator==(const LabelMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  int classes_ = 0;
  std::vector<int> labels_;
};

// K-channel binary encoding of a LabelMap; exactly one channel holds 1 at
// every pixel.
class OneHotMap {
 public:
  explicit OneHotMap(const LabelMap& labels)
      : classes_(labels.classes()),
        height_(labels.height()),
        width_(labels.width()),
        data_({static_cast<std::size_t>(classes_), height_, width_}, 0.0) {
    const std::size_t hw = height_ * width_;
    for (std::size_t p = 0; p < hw; ++p)
      data_[static_cast<std::size_t>(labels[p]) * hw + p] = 1.0;
  }

  int classes() const { return classes_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }

  // Channel k at linear pixel index p.
  double value(int k, std::size_t p) const {
    return data_[static_cast<std::size_t>(k) * pixel_count() + p];
  }

  const DenseArray& array() const { return data_; }

 private:
  int classes_;
  std::size_t height_;
  std::size_t width_;
  DenseArray data_;
};

inline OneHotMap one_hot(const LabelMap& labels) { return OneHotMap(labels); }

namespace detail {

inline void require_logit_map(const DenseArray& a, const char* op) {
  if (a.rank() != 3)
    throw invalid_input(std::string(op) + ": expected a K x H x W array");
  if (!a.all_finite())
    throw invalid_input(std::string(op) + ": non-finite input");
}

}  // namespace detail

// Numerically stable per-pixel softmax over the channel axis of K x H x W
// logits. Channel values land in (0,1) and sum to 1 per pixel.
inline DenseArray softmax(const DenseArray& logits) {
  detail::require_logit_map(logits, "softmax");
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  DenseArray out(logits.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double m = logits[p];
    for (std::size_t k = 1; k < k_n; ++k) m = std::max(m, logits[k * hw + p]);
    double sum = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const double e = std::exp(logits[k * hw + p] - m);
      out[k * hw + p] = e;
      sum += e;
    }
    for (std::size_t k = 0; k < k_n; ++k) out[k * hw + p] /= sum;
  }
  return out;
}

// log(softmax(logits)) computed in shifted form; finite for all finite
// inputs, even when the corresponding probability underflows to zero.
inline DenseArray log_softmax(const DenseArray& logits) {
  detail::require_logit_map(logits, "log_softmax");
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  DenseArray out(logits.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double m = logits[p];
    for (std::size_t k = 1; k < k_n; ++k) m = std::max(m, logits[k * hw + p]);
    double sum = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) sum += std::exp(logits[k * hw + p] - m);
    const double lse = m + std::log(sum);
    for (std::size_t k = 0; k < k_n; ++k) out[k * hw + p] = logits[k * hw + p] - lse;
  }
  return out;
}

// Per-pixel argmax over channels; ties resolve to the lowest class index.
inline LabelMap argmax_map(const DenseArray& scores) {
  if (scores.rank() != 3) throw invalid_input("argmax_map: expected a K x H x W array");
  const std::size_t k_n = scores.extent(0);
  const std::size_t hw = scores.extent(1) * scores.extent(2);
  std::vector<int> labels(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    double best = scores[p];
    int arg = 0;
    for (std::size_t k = 1; k < k_n; ++k) {
      const double v = scores[k * hw + p];
      if (v > best) {
        best = v;
        arg = static_cast<int>(k);
      }
    }
    labels[p] = arg;
  }
  return LabelMap(scores.extent(1), scores.extent(2), static_cast<int>(k_n), std::move(labels));
}

}  // namespace segcal
