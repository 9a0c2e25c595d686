// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Each loss exists twice: a plain double-precision
// version on images/matrices (evaluation, oracles) and a graph version used
// by the training path. All reductions are means over elements; losses are
// defined on the unit range.
#pragma once

#include <Eigen/Dense>

#include "ivfuse/autodiff.hpp"
#include "ivfuse/imaging.hpp"

namespace ivfuse {

struct LossWeights {
  double alpha = 1.0;
  double beta = 2.0;

  void validate() const {
    if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
  }
};

struct FusionLossParts {
  double total = 0, l_int = 0, l_grad = 0, l_lap = 0;
};

// ---------------------------------------------------------------------------
// plain versions
// ---------------------------------------------------------------------------

/// Mean absolute reconstruction error.
inline double loss_decoder(const Image& recon, const Image& original) {
  if (recon.height() != original.height() || recon.width() != original.width())
    throw ShapeError("loss_decoder: shape mismatch");
  return (recon.plane() - original.plane()).abs().mean();
}

inline FusionLossParts loss_fusion_total(const Image& f, const Image& v, const Image& i,
                                         const LossWeights& w) {
  if (f.height() != v.height() || f.width() != v.width() || f.height() != i.height() ||
      f.width() != i.width())
    throw ShapeError("loss_fusion_total: shape mismatch");
  w.validate();
  FusionLossParts parts;
  parts.l_int = (f.plane() - v.plane().max(i.plane())).abs().mean();
  const Image grad_f = sobel_magnitude(f);
  const Image grad_v = sobel_magnitude(v);
  const Image grad_i = sobel_magnitude(i);
  parts.l_grad = (grad_f.plane() - grad_v.plane().max(grad_i.plane())).abs().mean();
  const Image lap_f = laplacian_magnitude(f);
  const Image lap_v = laplacian_magnitude(v);
  const Image lap_i = laplacian_magnitude(i);
  parts.l_lap = (lap_f.plane() - lap_v.plane().max(lap_i.plane())).abs().mean();
  parts.total = parts.l_int + w.alpha * parts.l_grad + w.beta * parts.l_lap;
  return parts;
}

/// MSE between fused features and the modality mean (the alignment target).
inline double loss_align(const Eigen::MatrixXd& phi_out, const Eigen::MatrixXd& phi_i,
                         const Eigen::MatrixXd& phi_v) {
  if (phi_out.rows() != phi_i.rows() || phi_out.cols() != phi_i.cols() ||
      phi_i.rows() != phi_v.rows() || phi_i.cols() != phi_v.cols())
    throw ShapeError("loss_align: shape mismatch");
  return (phi_out - 0.5 * (phi_i + phi_v)).array().square().mean();
}

// ---------------------------------------------------------------------------
// graph versions
// ---------------------------------------------------------------------------

template <class S>
nn::NodePtr<S> loss_decoder_graph(nn::NodePtr<S> recon, const nn::Mat<S>& original) {
  auto target = nn::constant<S>(original);
  return nn::mean_all(nn::abs(nn::sub(recon, target)));
}

template <class S>
struct FusionLossGraph {
  nn::NodePtr<S> total, l_int, l_grad, l_lap;
};

/// Eq-style composite: the fused image is a graph node, the source images are
/// constants whose operator responses are precomputed targets.
template <class S>
FusionLossGraph<S> loss_fusion_graph(nn::NodePtr<S> fused, const Image& v, const Image& i,
                                     const LossWeights& w) {
  w.validate();
  const Image grad_target = max_fuse(sobel_magnitude(v), sobel_magnitude(i));
  const Image lap_target = max_fuse(laplacian_magnitude(v), laplacian_magnitude(i));
  const Image int_target = max_fuse(luma(v), luma(i));
  auto as_const = [](const Image& img) {
    return nn::constant<S>(img.plane().matrix().template cast<S>());
  };

  FusionLossGraph<S> parts;
  parts.l_int = nn::mean_all(nn::abs(nn::sub(fused, as_const(int_target))));

  auto gx = nn::conv3x3_replicate(fused, sobel_kernel_x());
  auto gy = nn::conv3x3_replicate(fused, sobel_kernel_y());
  auto grad_mag = nn::sqrt(nn::add(nn::square(gx), nn::square(gy)));
  parts.l_grad = nn::mean_all(nn::abs(nn::sub(grad_mag, as_const(grad_target))));

  auto lap_mag = nn::abs(nn::conv3x3_replicate(fused, laplacian_kernel()));
  parts.l_lap = nn::mean_all(nn::abs(nn::sub(lap_mag, as_const(lap_target))));

  parts.total = nn::add(parts.l_int,
                        nn::add(nn::scale(parts.l_grad, static_cast<S>(w.alpha)),
                                nn::scale(parts.l_lap, static_cast<S>(w.beta))));
  return parts;
}

template <class S>
nn::NodePtr<S> loss_align_graph(nn::NodePtr<S> phi_out, nn::NodePtr<S> phi_i,
                                nn::NodePtr<S> phi_v) {
  auto mean = nn::constant<S>(nn::Mat<S>(S(0.5) * (phi_i->value + phi_v->value)));
  return nn::mean_all(nn::square(nn::sub(phi_out, mean)));
}

}  // namespace ivfuse
