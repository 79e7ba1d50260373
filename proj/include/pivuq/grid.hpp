#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pivuq/errors.hpp"

namespace pivuq {

/// Dense row-major 2D array indexed as (row, col), i.e. (y, x) with y pointing down.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw DimensionError("grid dimensions must be positive, got " + std::to_string(width) +
                           "x" + std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col) noexcept {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  const T& operator()(int row, int col) const noexcept {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool same_shape(const Grid& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Grid<double>;

/// Reflect-101 border index ("dcb|abcd|cba"), valid for any integer offset.
inline int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Rotates a grid by `quarter_turns` x 90 degrees counterclockwise as displayed
/// (y down). A pixel at (x, y) of a WxH grid lands at (y, W-1-x) for one turn.
/// Pure permutation, no resampling.
template <typename T>
Grid<T> rotate_quarter_turns(const Grid<T>& in, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return in;
  const int w = in.width();
  const int h = in.height();
  if (k == 2) {
    Grid<T> out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(h - 1 - y, w - 1 - x) = in(y, x);
    return out;
  }
  Grid<T> out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (k == 1) {
        out(w - 1 - x, y) = in(y, x);
      } else {
        out(x, h - 1 - y) = in(y, x);
      }
    }
  }
  return out;
}

}  // namespace pivuq
