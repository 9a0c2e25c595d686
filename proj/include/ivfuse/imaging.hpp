// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "ivfuse/errors.hpp"

namespace ivfuse {

enum class Range { Unit, Byte };
enum class Colorspace { Gray, Rgb, Ycbcr };

inline double range_max(Range r) { return r == Range::Unit ? 1.0 : 255.0; }

/// Single- or three-channel raster with a declared value range.
/// Pixel values are clamped to the range on construction; operator
/// outputs (gradient magnitudes etc.) use the unclamped factory.
struct Image {
  std::vector<Eigen::ArrayXXd> ch;
  Range range = Range::Unit;
  Colorspace cs = Colorspace::Gray;

  Image() = default;
  Image(std::vector<Eigen::ArrayXXd> channels, Range r, Colorspace c);

  static Image raw(std::vector<Eigen::ArrayXXd> channels, Range r, Colorspace c);
  static Image zeros(int h, int w, Range r = Range::Unit);

  int height() const { return ch.empty() ? 0 : static_cast<int>(ch[0].rows()); }
  int width() const { return ch.empty() ? 0 : static_cast<int>(ch[0].cols()); }
  int channels() const { return static_cast<int>(ch.size()); }
  bool is_gray() const { return ch.size() == 1; }

  const Eigen::ArrayXXd& plane(int c = 0) const { return ch.at(c); }
  Eigen::ArrayXXd& plane(int c = 0) { return ch.at(c); }
};

struct GridShape {
  int rows = 0;
  int cols = 0;
  int patch = 0;
  int token_count() const { return rows * cols; }
};

Image convert_colorspace(const Image& img, Colorspace target);

/// Y plane of an rgb or ycbcr image (gray passes through).
Image luma(const Image& img);

/// |grad| via 3x3 Sobel kernels, replicate padding. Gray input only.
Image sobel_magnitude(const Image& img);

/// |laplacian| via the 3x3 [[0,1,0],[1,-4,1],[0,1,0]] kernel, replicate padding.
Image laplacian_magnitude(const Image& img);

/// Row-major patch order; each token row-major flattens its patch.
std::pair<Eigen::MatrixXd, GridShape> patchify(const Image& img, int patch);

Image unpatchify(const Eigen::MatrixXd& tokens, const GridShape& grid,
                 Range range = Range::Unit, bool clamp = false);

Image max_fuse(const Image& v, const Image& i);

/// Largest centered patch-divisible crop.
Image center_crop_divisible(const Image& img, int patch);
Image crop(const Image& img, int r0, int c0, int h, int w);

/// Pixel values are normalized into the declared range.
Image read_png(const std::string& path, Range declared = Range::Unit);
void write_png(const std::string& path, const Image& img, int bit_depth = 8);

// kernels exposed for oracle tests
Eigen::Matrix3d sobel_kernel_x();
Eigen::Matrix3d sobel_kernel_y();
Eigen::Matrix3d laplacian_kernel();

/// 3x3 correlation with replicate padding.
Eigen::ArrayXXd conv3x3_replicate(const Eigen::ArrayXXd& x, const Eigen::Matrix3d& k);

}  // namespace ivfuse
