#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmrc/core.hpp"
#include "xmrc/fft.hpp"
#include "xmrc/frame.hpp"
#include "xmrc/sampling.hpp"

namespace xmrc {

enum class LambdaMode { Absolute, RelativeToZeroFilled };

struct SolverParams {
  double lambda = 1e-3;
  double gamma = 1.0;
  int max_iter = 200;
  double tol = 1e-6;
  FrameSpec frame{FrameKind::UndecimatedHaar, 3};
  LambdaMode lambda_mode = LambdaMode::RelativeToZeroFilled;

  /// Throws InvalidParams. gamma <= 1 is what makes the unit-norm forward
  /// operators converge.
  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) raise(Errc::InvalidParams, "lambda must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) raise(Errc::InvalidParams, "gamma must lie in (0, 1]");
    if (max_iter < 1) raise(Errc::InvalidParams, "max_iter must be >= 1");
    if (!(tol >= 0.0)) raise(Errc::InvalidParams, "tol must be >= 0");
    if (frame.kind == FrameKind::UndecimatedHaar && frame.levels < 1) {
      raise(Errc::InvalidParams, "frame levels must be >= 1");
    }
  }
};

struct SolverResult {
  ComplexImage image;
  int iterations_run = 0;
  std::vector<double> iterate_change_trace;
  std::vector<double> objective_trace;
  double wall_time = 0.0;
  double lambda_used = 0.0;
};

/// Called once per iteration with (iteration, relative iterate change).
using ProgressFn = std::function<void(int, double)>;

namespace detail {

/// y_masked - U F x for a single coil; used by both the gradient and the
/// data term.
class SingleCoilModel {
 public:
  SingleCoilModel(const KSpaceGrid& y, const SamplingMask& mask)
      : shape_(y.shape()), y_(y.data()), mask_(mask.cells()), tmp_(y.size()) {}

  Shape shape() const { return shape_; }

  /// x0 = F^H (U o y)
  std::vector<cplx> adjoint_data() {
    std::vector<cplx> masked(y_.begin(), y_.end());
    for (std::size_t p = 0; p < masked.size(); ++p)
      if (!mask_[p]) masked[p] = cplx{};
    std::vector<cplx> out(masked.size());
    idft2(shape_, masked, out);
    return out;
  }

  /// out = x + gamma * F^H U^H (y - U F x)
  void gradient_step(std::span<const cplx> x, double gamma, std::span<cplx> out) {
    dft2(shape_, x, tmp_);
    for (std::size_t p = 0; p < tmp_.size(); ++p) tmp_[p] = mask_[p] ? y_[p] - tmp_[p] : cplx{};
    idft2(shape_, tmp_, out);
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = x[p] + gamma * out[p];
  }

  /// 1/2 ||y - U F x||^2
  double data_misfit(std::span<const cplx> x) {
    dft2(shape_, x, tmp_);
    double s = 0.0;
    for (std::size_t p = 0; p < tmp_.size(); ++p) {
      s += std::norm(mask_[p] ? y_[p] - tmp_[p] : y_[p]);
    }
    return 0.5 * s;
  }

 private:
  Shape shape_;
  std::span<const cplx> y_;
  std::span<const std::uint8_t> mask_;
  std::vector<cplx> tmp_;
};

/// Sensitivity-encoded model A_j = U F C_j stacked over coils.
class SenseModel {
 public:
  SenseModel(const MultiCoilKSpace& y, const SamplingMask& mask, const CoilSensitivities& maps)
      : shape_(y.shape()), y_(y), mask_(mask.cells()), maps_(maps), a_(y.shape().size()), b_(y.shape().size()) {}

  Shape shape() const { return shape_; }

  std::vector<cplx> adjoint_data() {
    std::vector<cplx> out(shape_.size());
    for (std::size_t j = 0; j < y_.nc(); ++j) {
      const auto yj = y_.coil(j).data();
      for (std::size_t p = 0; p < a_.size(); ++p) a_[p] = mask_[p] ? yj[p] : cplx{};
      idft2(shape_, a_, b_);
      accumulate_conj(j, b_, out);
    }
    return out;
  }

  void gradient_step(std::span<const cplx> x, double gamma, std::span<cplx> out) {
    std::vector<cplx> acc(shape_.size());
    for (std::size_t j = 0; j < y_.nc(); ++j) {
      const auto yj = y_.coil(j).data();
      const auto cj = maps_.map(j).data();
      for (std::size_t p = 0; p < a_.size(); ++p) a_[p] = cj[p] * x[p];
      dft2(shape_, a_, b_);
      for (std::size_t p = 0; p < b_.size(); ++p) b_[p] = mask_[p] ? yj[p] - b_[p] : cplx{};
      idft2(shape_, b_, a_);
      accumulate_conj(j, a_, acc);
    }
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = x[p] + gamma * acc[p];
  }

  double data_misfit(std::span<const cplx> x) {
    double s = 0.0;
    for (std::size_t j = 0; j < y_.nc(); ++j) {
      const auto yj = y_.coil(j).data();
      const auto cj = maps_.map(j).data();
      for (std::size_t p = 0; p < a_.size(); ++p) a_[p] = cj[p] * x[p];
      dft2(shape_, a_, b_);
      for (std::size_t p = 0; p < b_.size(); ++p) s += std::norm(mask_[p] ? yj[p] - b_[p] : yj[p]);
    }
    return 0.5 * s;
  }

 private:
  void accumulate_conj(std::size_t j, std::span<const cplx> v, std::span<cplx> out) const {
    const auto cj = maps_.map(j).data();
    for (std::size_t p = 0; p < out.size(); ++p) out[p] += std::conj(cj[p]) * v[p];
  }

  Shape shape_;
  const MultiCoilKSpace& y_;
  std::span<const std::uint8_t> mask_;
  const CoilSensitivities& maps_;
  std::vector<cplx> a_;
  std::vector<cplx> b_;
};

inline double resolve_lambda(const SolverParams& params, Shape s, std::span<const cplx> x0) {
  if (params.lambda_mode == LambdaMode::Absolute) return params.lambda;
  std::vector<std::vector<cplx>> bands;
  analysis(params.frame, s, x0, bands);
  return params.lambda * max_abs(bands);
}

inline double relative_change(std::span<const cplx> next, std::span<const cplx> prev) {
  double diff = 0.0;
  double base = 0.0;
  double fresh = 0.0;
  for (std::size_t p = 0; p < next.size(); ++p) {
    diff += std::norm(next[p] - prev[p]);
    base += std::norm(prev[p]);
    fresh += std::norm(next[p]);
  }
  if (diff == 0.0) return 0.0;
  return std::sqrt(diff / (base > 0.0 ? base : fresh));
}

template <class Model>
double objective_value(Model& model, const FrameSpec& frame, double lambda, std::span<const cplx> x,
                       std::vector<std::vector<cplx>>& scratch) {
  analysis(frame, model.shape(), x, scratch);
  return model.data_misfit(x) + lambda * l1_norm(scratch);
}

/// x_{k+1} = Psi^H S_{gamma lambda}(Psi(xh_k + gamma A^H (y - A xh_k)))
/// t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2
/// xh_{k+1} = x_{k+1} + ((t_k - 1) / t_{k+1}) (x_{k+1} - x_k)
template <class Model>
SolverResult run_pfista(Model& model, const SolverParams& params, const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  const Shape s = model.shape();
  const std::size_t n = s.size();

  std::vector<cplx> x = model.adjoint_data();
  std::vector<cplx> xhat = x;
  std::vector<cplx> next(n);
  std::vector<cplx> grad(n);
  std::vector<std::vector<cplx>> bands;

  const double lambda = resolve_lambda(params, s, x);
  const double tau = params.gamma * lambda;
  double t = 1.0;

  SolverResult result{ComplexImage::zeros(s), 0, {}, {}, 0.0, lambda};
  for (int k = 1; k <= params.max_iter; ++k) {
    model.gradient_step(xhat, params.gamma, grad);
    analysis(params.frame, s, grad, bands);
    if (tau > 0.0) {
      for (auto& b : bands) shrink(b, tau);
    }
    synthesis(params.frame, s, bands, next);

    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    const double momentum = (t - 1.0) / t_next;
    const double change = relative_change(next, x);
    for (std::size_t p = 0; p < n; ++p) xhat[p] = next[p] + momentum * (next[p] - x[p]);
    x.swap(next);
    t = t_next;

    result.iterations_run = k;
    result.iterate_change_trace.push_back(change);
    result.objective_trace.push_back(objective_value(model, params.frame, lambda, x, bands));
    if (progress) progress(k, change);
    if (change <= params.tol) break;
  }

  result.image = ComplexImage(s, std::move(x));
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline void check_maps(const CoilSensitivities& maps, std::size_t nc, Shape s) {
  require_same_shape(s, maps.shape());
  if (maps.nc() != nc) {
    raise(Errc::ShapeMismatch, "expected " + std::to_string(nc) + " coil maps, got " + std::to_string(maps.nc()));
  }
}

}  // namespace detail

/// F^H (U o y)
inline ComplexImage zero_filled_recon(const KSpaceGrid& y, const SamplingMask& mask) {
  require_same_shape(y.shape(), mask.shape());
  detail::SingleCoilModel model(y, mask);
  return ComplexImage(y.shape(), model.adjoint_data());
}

/// f(x) = 1/2 ||y - U F x||^2 + lambda ||Psi x||_1, with lambda resolved the
/// same way pfista_single resolves it.
inline double objective(const ComplexImage& x, const KSpaceGrid& y, const SamplingMask& mask,
                        const SolverParams& params) {
  require_same_shape(y.shape(), x.shape());
  require_same_shape(y.shape(), mask.shape());
  check_frame(params.frame, y.shape());
  detail::SingleCoilModel model(y, mask);
  const double lambda = detail::resolve_lambda(params, y.shape(), model.adjoint_data());
  std::vector<std::vector<cplx>> bands;
  return detail::objective_value(model, params.frame, lambda, x.data(), bands);
}

/// Single-coil pFISTA, started from the zero-filled reconstruction.
inline SolverResult pfista_single(const KSpaceGrid& y, const SamplingMask& mask, const SolverParams& params,
                                  const ProgressFn& progress = {}) {
  require_same_shape(y.shape(), mask.shape());
  params.validate();
  check_frame(params.frame, y.shape());
  detail::SingleCoilModel model(y, mask);
  return detail::run_pfista(model, params, progress);
}

/// Per coil: U o F(C_j o x).
inline MultiCoilKSpace sense_forward(const ComplexImage& x, const CoilSensitivities& maps, const SamplingMask& mask) {
  require_same_shape(x.shape(), maps.shape());
  require_same_shape(x.shape(), mask.shape());
  const Shape s = x.shape();
  std::vector<KSpaceGrid> coils;
  std::vector<cplx> a(s.size());
  for (std::size_t j = 0; j < maps.nc(); ++j) {
    const auto cj = maps.map(j).data();
    for (std::size_t p = 0; p < a.size(); ++p) a[p] = cj[p] * x.data()[p];
    std::vector<cplx> k(s.size());
    detail::dft2(s, a, k);
    for (std::size_t p = 0; p < k.size(); ++p)
      if (!mask.cells()[p]) k[p] = cplx{};
    coils.emplace_back(s, std::move(k));
  }
  return MultiCoilKSpace(std::move(coils));
}

/// sum_j conj(C_j) o F^H(U o y_j)
inline ComplexImage sense_adjoint(const MultiCoilKSpace& y, const CoilSensitivities& maps, const SamplingMask& mask) {
  require_same_shape(y.shape(), mask.shape());
  detail::check_maps(maps, y.nc(), y.shape());
  detail::SenseModel model(y, mask, maps);
  return ComplexImage(y.shape(), model.adjoint_data());
}

inline double objective_parallel(const ComplexImage& x, const MultiCoilKSpace& y, const CoilSensitivities& maps,
                                 const SamplingMask& mask, const SolverParams& params) {
  require_same_shape(y.shape(), x.shape());
  require_same_shape(y.shape(), mask.shape());
  detail::check_maps(maps, y.nc(), y.shape());
  check_frame(params.frame, y.shape());
  detail::SenseModel model(y, mask, maps);
  const double lambda = detail::resolve_lambda(params, y.shape(), model.adjoint_data());
  std::vector<std::vector<cplx>> bands;
  return detail::objective_value(model, params.frame, lambda, x.data(), bands);
}

/// Parallel-imaging pFISTA over the SENSE operator; requires normalized maps
/// (sum_j |C_j|^2 = 1 on support) so that gamma <= 1 is a safe step.
inline SolverResult pfista_parallel(const MultiCoilKSpace& y, const SamplingMask& mask, const CoilSensitivities& maps,
                                    const SolverParams& params, const ProgressFn& progress = {}) {
  require_same_shape(y.shape(), mask.shape());
  detail::check_maps(maps, y.nc(), y.shape());
  params.validate();
  check_frame(params.frame, y.shape());
  if (const double err = maps.normalization_error(); !(err <= 1e-6)) {
    raise(Errc::UnnormalizedMaps, "coil maps violate sum |C_j|^2 = 1 by " + std::to_string(err));
  }
  detail::SenseModel model(y, mask, maps);
  return detail::run_pfista(model, params, progress);
}

}  // namespace xmrc
