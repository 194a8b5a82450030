#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmrc/error.hpp"

namespace xmrc {

using cplx = std::complex<double>;

struct Shape {
  std::size_t ny = 0;
  std::size_t nx = 0;

  constexpr std::size_t size() const noexcept { return ny * nx; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  return std::to_string(s.ny) + "x" + std::to_string(s.nx);
}

inline void require_same_shape(Shape expected, Shape got) {
  if (expected != got) {
    raise(Errc::ShapeMismatch,
          "expected " + to_string(expected) + ", got " + to_string(got));
  }
}

namespace detail {

inline void check_grid_shape(Shape s) {
  if (s.ny < 2 || s.nx < 2) {
    raise(Errc::InvalidShape, "grid must be at least 2x2, got " + to_string(s));
  }
}

inline bool all_finite(std::span<const cplx> data) {
  for (const auto& z : data) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  }
  return true;
}

}  // namespace detail

struct ImageDomain {};
struct KSpaceDomain {};

/// Row-major 2D array of complex samples, tagged with the domain it lives in.
/// Immutable after construction; every sample is finite.
template <class Domain>
class ComplexGrid {
 public:
  ComplexGrid(Shape shape, std::vector<cplx> data) : shape_(shape), data_(std::move(data)) {
    detail::check_grid_shape(shape_);
    if (data_.size() != shape_.size()) {
      raise(Errc::InvalidShape, "sample count " + std::to_string(data_.size()) +
                                    " does not match " + to_string(shape_));
    }
    if (!detail::all_finite(data_)) {
      raise(Errc::InvalidSample, "non-finite sample");
    }
  }

  static ComplexGrid zeros(Shape shape) {
    return ComplexGrid(shape, std::vector<cplx>(shape.size()));
  }

  Shape shape() const noexcept { return shape_; }
  std::size_t ny() const noexcept { return shape_.ny; }
  std::size_t nx() const noexcept { return shape_.nx; }
  std::size_t size() const noexcept { return data_.size(); }

  // DC sits at (ny/2, nx/2) for every k-space grid this library produces.
  bool centered() const noexcept { return true; }

  std::span<const cplx> data() const noexcept { return data_; }
  const cplx& operator()(std::size_t row, std::size_t col) const {
    return data_[row * shape_.nx + col];
  }

  friend bool operator==(const ComplexGrid&, const ComplexGrid&) = default;

 private:
  Shape shape_;
  std::vector<cplx> data_;
};

using ComplexImage = ComplexGrid<ImageDomain>;
using KSpaceGrid = ComplexGrid<KSpaceDomain>;

/// Nonnegative-or-not real map (magnitudes, error maps).
struct RealImage {
  Shape shape;
  std::vector<double> data;

  double operator()(std::size_t row, std::size_t col) const { return data[row * shape.nx + col]; }
};

class MultiCoilKSpace {
 public:
  explicit MultiCoilKSpace(std::vector<KSpaceGrid> coils) : coils_(std::move(coils)) {
    if (coils_.empty()) raise(Errc::InvalidShape, "multi-coil k-space needs at least one coil");
    for (const auto& c : coils_) require_same_shape(coils_.front().shape(), c.shape());
  }

  std::size_t nc() const noexcept { return coils_.size(); }
  Shape shape() const noexcept { return coils_.front().shape(); }
  const KSpaceGrid& coil(std::size_t j) const { return coils_.at(j); }
  const std::vector<KSpaceGrid>& coils() const noexcept { return coils_; }

  friend bool operator==(const MultiCoilKSpace&, const MultiCoilKSpace&) = default;

 private:
  std::vector<KSpaceGrid> coils_;
};

/// Binary sampling pattern U. At least one cell is sampled.
class SamplingMask {
 public:
  SamplingMask(Shape shape, std::vector<std::uint8_t> cells) : shape_(shape), cells_(std::move(cells)) {
    detail::check_grid_shape(shape_);
    if (cells_.size() != shape_.size()) {
      raise(Errc::InvalidShape, "mask cell count does not match " + to_string(shape_));
    }
    for (auto v : cells_) {
      if (v > 1) raise(Errc::InvalidMask, "mask cells must be 0 or 1");
      count_ += v;
    }
    if (count_ == 0) raise(Errc::InvalidMask, "mask samples nothing");
  }

  static SamplingMask full(Shape shape) {
    return SamplingMask(shape, std::vector<std::uint8_t>(shape.size(), 1));
  }

  Shape shape() const noexcept { return shape_; }
  std::size_t ny() const noexcept { return shape_.ny; }
  std::size_t nx() const noexcept { return shape_.nx; }
  std::span<const std::uint8_t> cells() const noexcept { return cells_; }
  bool operator()(std::size_t row, std::size_t col) const { return cells_[row * shape_.nx + col] != 0; }

  std::size_t sampled() const noexcept { return count_; }
  double rate() const noexcept { return static_cast<double>(count_) / static_cast<double>(shape_.size()); }

  friend bool operator==(const SamplingMask& a, const SamplingMask& b) {
    return a.shape_ == b.shape_ && a.cells_ == b.cells_;
  }

 private:
  Shape shape_;
  std::vector<std::uint8_t> cells_;
  std::size_t count_ = 0;
};

/// Per-coil complex sensitivity maps C_j with a support map. Shapes are
/// validated on construction; the sum-of-squares normalization is checked
/// separately (see `normalization_error`) so that unnormalized inputs can be
/// reported by the consumer that relies on them.
class CoilSensitivities {
 public:
  CoilSensitivities(std::vector<ComplexImage> maps, std::vector<std::uint8_t> support)
      : maps_(std::move(maps)), support_(std::move(support)) {
    if (maps_.empty()) raise(Errc::InvalidShape, "coil sensitivities need at least one coil");
    for (const auto& m : maps_) require_same_shape(maps_.front().shape(), m.shape());
    if (support_.size() != shape().size()) raise(Errc::InvalidShape, "support size mismatch");
    for (auto v : support_) {
      if (v > 1) raise(Errc::InvalidMask, "support cells must be 0 or 1");
    }
  }

  /// Support inferred as the pixels where any coil is nonzero.
  explicit CoilSensitivities(std::vector<ComplexImage> maps)
      : CoilSensitivities(maps, infer_support(maps)) {}

  std::size_t nc() const noexcept { return maps_.size(); }
  Shape shape() const noexcept { return maps_.front().shape(); }
  const ComplexImage& map(std::size_t j) const { return maps_.at(j); }
  const std::vector<ComplexImage>& maps() const noexcept { return maps_; }
  std::span<const std::uint8_t> support() const noexcept { return support_; }

  /// Largest violation of the normalization invariant: |sum_j |C_j|^2 - 1| on
  /// support, sum_j |C_j| off support.
  double normalization_error() const {
    double worst = 0.0;
    for (std::size_t p = 0; p < shape().size(); ++p) {
      double ss = 0.0;
      double abs_sum = 0.0;
      for (const auto& m : maps_) {
        ss += std::norm(m.data()[p]);
        abs_sum += std::abs(m.data()[p]);
      }
      worst = std::max(worst, support_[p] ? std::abs(ss - 1.0) : abs_sum);
    }
    return worst;
  }

  bool is_normalized(double tol = 1e-6) const { return normalization_error() <= tol; }

  friend bool operator==(const CoilSensitivities&, const CoilSensitivities&) = default;

 private:
  static std::vector<std::uint8_t> infer_support(const std::vector<ComplexImage>& maps) {
    if (maps.empty()) return {};
    std::vector<std::uint8_t> support(maps.front().size(), 0);
    for (const auto& m : maps) {
      if (m.size() != support.size()) continue;
      for (std::size_t p = 0; p < support.size(); ++p) {
        if (m.data()[p] != cplx{}) support[p] = 1;
      }
    }
    return support;
  }

  std::vector<ComplexImage> maps_;
  std::vector<std::uint8_t> support_;
};

/// Succeeds iff both grids have the same shape.
template <class A, class B>
void validate_pair(const A& a, const B& b) {
  require_same_shape(a.shape(), b.shape());
}

inline RealImage as_magnitude(const ComplexImage& img) {
  RealImage out{img.shape(), std::vector<double>(img.size())};
  for (std::size_t p = 0; p < img.size(); ++p) out.data[p] = std::abs(img.data()[p]);
  return out;
}

inline double norm2(std::span<const cplx> v) {
  double s = 0.0;
  for (const auto& z : v) s += std::norm(z);
  return std::sqrt(s);
}

}  // namespace xmrc
