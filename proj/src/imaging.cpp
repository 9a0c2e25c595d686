// SPDX-License-Identifier: Apache-2.0
#include "ivfuse/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

namespace ivfuse {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width() ||
      a.channels() != b.channels()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

void check_gray(const Image& img, const char* what) {
  if (!img.is_gray()) {
    throw InvalidChannelCount(std::string(what) + ": expects a single channel");
  }
}

}  // namespace

Image::Image(std::vector<Eigen::ArrayXXd> channels, Range r, Colorspace c)
    : ch(std::move(channels)), range(r), cs(c) {
  const double hi = range_max(r);
  for (auto& p : ch) p = p.max(0.0).min(hi);
}

Image Image::raw(std::vector<Eigen::ArrayXXd> channels, Range r, Colorspace c) {
  Image img;
  img.ch = std::move(channels);
  img.range = r;
  img.cs = c;
  return img;
}

Image Image::zeros(int h, int w, Range r) {
  return Image({Eigen::ArrayXXd::Zero(h, w)}, r, Colorspace::Gray);
}

// BT.601 full-range, on the unit scale:
//   Y  = 0.299 R + 0.587 G + 0.114 B
//   Cb = (B - Y) / 1.772 + 0.5
//   Cr = (R - Y) / 1.402 + 0.5
Image convert_colorspace(const Image& img, Colorspace target) {
  if (img.cs == target) {
    throw InvalidConversion("convert_colorspace: source already in target space");
  }
  const double hi = range_max(img.range);
  auto unit = [&](const Eigen::ArrayXXd& p) -> Eigen::ArrayXXd { return p / hi; };

  if (img.cs == Colorspace::Rgb && target == Colorspace::Ycbcr) {
    const Eigen::ArrayXXd r = unit(img.ch[0]), g = unit(img.ch[1]), b = unit(img.ch[2]);
    Eigen::ArrayXXd y = 0.299 * r + 0.587 * g + 0.114 * b;
    Eigen::ArrayXXd cb = (b - y) / 1.772 + 0.5;
    Eigen::ArrayXXd cr = (r - y) / 1.402 + 0.5;
    return Image({y * hi, cb * hi, cr * hi}, img.range, Colorspace::Ycbcr);
  }
  if (img.cs == Colorspace::Ycbcr && target == Colorspace::Rgb) {
    const Eigen::ArrayXXd y = unit(img.ch[0]), cb = unit(img.ch[1]), cr = unit(img.ch[2]);
    Eigen::ArrayXXd r = y + 1.402 * (cr - 0.5);
    Eigen::ArrayXXd b = y + 1.772 * (cb - 0.5);
    Eigen::ArrayXXd g = (y - 0.299 * r - 0.114 * b) / 0.587;
    return Image({r * hi, g * hi, b * hi}, img.range, Colorspace::Rgb);
  }
  if (img.cs == Colorspace::Rgb && target == Colorspace::Gray) {
    const Eigen::ArrayXXd r = unit(img.ch[0]), g = unit(img.ch[1]), b = unit(img.ch[2]);
    Eigen::ArrayXXd y = 0.299 * r + 0.587 * g + 0.114 * b;
    return Image({y * hi}, img.range, Colorspace::Gray);
  }
  throw InvalidConversion("convert_colorspace: unsupported conversion pair");
}

Image luma(const Image& img) {
  if (img.is_gray()) return img;
  if (img.cs == Colorspace::Rgb) return convert_colorspace(img, Colorspace::Gray);
  if (img.cs == Colorspace::Ycbcr) {
    return Image({img.ch[0]}, img.range, Colorspace::Gray);
  }
  throw InvalidConversion("luma: unsupported colorspace");
}

Eigen::Matrix3d sobel_kernel_x() {
  Eigen::Matrix3d k;
  k << -1, 0, 1, -2, 0, 2, -1, 0, 1;
  return k;
}

Eigen::Matrix3d sobel_kernel_y() {
  Eigen::Matrix3d k;
  k << -1, -2, -1, 0, 0, 0, 1, 2, 1;
  return k;
}

Eigen::Matrix3d laplacian_kernel() {
  Eigen::Matrix3d k;
  k << 0, 1, 0, 1, -4, 1, 0, 1, 0;
  return k;
}

Eigen::ArrayXXd conv3x3_replicate(const Eigen::ArrayXXd& x, const Eigen::Matrix3d& k) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int u = -1; u <= 1; ++u) {
        for (int v = -1; v <= 1; ++v) {
          const int ii = std::clamp(i + u, 0, h - 1);
          const int jj = std::clamp(j + v, 0, w - 1);
          acc += k(u + 1, v + 1) * x(ii, jj);
        }
      }
      out(i, j) = acc;
    }
  }
  return out;
}

Image sobel_magnitude(const Image& img) {
  check_gray(img, "sobel_magnitude");
  const Eigen::ArrayXXd gx = conv3x3_replicate(img.plane(), sobel_kernel_x());
  const Eigen::ArrayXXd gy = conv3x3_replicate(img.plane(), sobel_kernel_y());
  return Image::raw({(gx.square() + gy.square()).sqrt()}, img.range, Colorspace::Gray);
}

Image laplacian_magnitude(const Image& img) {
  check_gray(img, "laplacian_magnitude");
  return Image::raw({conv3x3_replicate(img.plane(), laplacian_kernel()).abs()},
                    img.range, Colorspace::Gray);
}

std::pair<Eigen::MatrixXd, GridShape> patchify(const Image& img, int patch) {
  check_gray(img, "patchify");
  const int h = img.height(), w = img.width();
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: dims not divisible by patch size");
  }
  GridShape grid{h / patch, w / patch, patch};
  Eigen::MatrixXd tokens(grid.token_count(), patch * patch);
  const auto& p = img.plane();
  for (int gr = 0; gr < grid.rows; ++gr) {
    for (int gc = 0; gc < grid.cols; ++gc) {
      const int t = gr * grid.cols + gc;
      for (int u = 0; u < patch; ++u)
        for (int v = 0; v < patch; ++v)
          tokens(t, u * patch + v) = p(gr * patch + u, gc * patch + v);
    }
  }
  return {tokens, grid};
}

Image unpatchify(const Eigen::MatrixXd& tokens, const GridShape& grid, Range range,
                 bool clamp) {
  const int patch = grid.patch;
  if (tokens.rows() != grid.token_count() || tokens.cols() != patch * patch) {
    throw ShapeError("unpatchify: token matrix does not match grid");
  }
  Eigen::ArrayXXd p(grid.rows * patch, grid.cols * patch);
  for (int gr = 0; gr < grid.rows; ++gr) {
    for (int gc = 0; gc < grid.cols; ++gc) {
      const int t = gr * grid.cols + gc;
      for (int u = 0; u < patch; ++u)
        for (int v = 0; v < patch; ++v)
          p(gr * patch + u, gc * patch + v) = tokens(t, u * patch + v);
    }
  }
  if (clamp) return Image({std::move(p)}, range, Colorspace::Gray);
  return Image::raw({std::move(p)}, range, Colorspace::Gray);
}

Image max_fuse(const Image& v, const Image& i) {
  check_gray(v, "max_fuse");
  check_gray(i, "max_fuse");
  check_same_shape(v, i, "max_fuse");
  if (v.range != i.range) throw ShapeError("max_fuse: range mismatch");
  return Image::raw({v.plane().max(i.plane())}, v.range, Colorspace::Gray);
}

Image crop(const Image& img, int r0, int c0, int h, int w) {
  if (r0 < 0 || c0 < 0 || r0 + h > img.height() || c0 + w > img.width()) {
    throw ShapeError("crop: window outside image");
  }
  std::vector<Eigen::ArrayXXd> planes;
  planes.reserve(img.ch.size());
  for (const auto& p : img.ch) planes.push_back(p.block(r0, c0, h, w));
  return Image::raw(std::move(planes), img.range, img.cs);
}

Image center_crop_divisible(const Image& img, int patch) {
  const int h = img.height() / patch * patch;
  const int w = img.width() / patch * patch;
  if (h == 0 || w == 0) throw ShapeError("center_crop_divisible: image smaller than patch");
  return crop(img, (img.height() - h) / 2, (img.width() - w) / 2, h, w);
}

Image read_png(const std::string& path, Range declared) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("read_png: cannot read " + path);
  const int depth = m.depth();
  if (depth != CV_8U && depth != CV_16U) {
    throw FormatError("read_png: unsupported bit depth in " + path);
  }
  const double scale = (depth == CV_8U ? 255.0 : 65535.0) / range_max(declared);
  std::vector<cv::Mat> bgr;
  cv::split(m, bgr);
  auto to_plane = [&](const cv::Mat& c) {
    Eigen::ArrayXXd p(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j)
        p(i, j) = (depth == CV_8U ? c.at<std::uint8_t>(i, j) : c.at<std::uint16_t>(i, j)) / scale;
    return p;
  };
  if (bgr.size() == 1) {
    return Image({to_plane(bgr[0])}, declared, Colorspace::Gray);
  }
  if (bgr.size() == 3 || bgr.size() == 4) {  // drop alpha if present
    return Image({to_plane(bgr[2]), to_plane(bgr[1]), to_plane(bgr[0])}, declared,
                 Colorspace::Rgb);
  }
  throw FormatError("read_png: unsupported channel count in " + path);
}

void write_png(const std::string& path, const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw FormatError("write_png: bit depth must be 8 or 16");
  const double in_hi = range_max(img.range);
  const double out_hi = bit_depth == 8 ? 255.0 : 65535.0;
  const int h = img.height(), w = img.width();
  const int type = bit_depth == 8 ? CV_8U : CV_16U;
  std::vector<cv::Mat> planes;
  // OpenCV expects BGR order
  std::vector<int> order = img.channels() == 3 ? std::vector<int>{2, 1, 0} : std::vector<int>{0};
  for (int c : order) {
    cv::Mat p(h, w, type);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double x = std::clamp(img.plane(c)(i, j) / in_hi, 0.0, 1.0);
        const auto q = static_cast<std::uint32_t>(std::lround(x * out_hi));
        if (bit_depth == 8)
          p.at<std::uint8_t>(i, j) = static_cast<std::uint8_t>(q);
        else
          p.at<std::uint16_t>(i, j) = static_cast<std::uint16_t>(q);
      }
    }
    planes.push_back(p);
  }
  cv::Mat out;
  cv::merge(planes, out);
  if (!cv::imwrite(path, out)) throw IoError("write_png: cannot write " + path);
}

}  // namespace ivfuse
