#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cqil/common.hpp"
#include "cqil/tensor.hpp"

namespace cqil {

// Images are CHW tensors with values in [0, 1]. On disk they are binary PPM
// (P6, 8-bit), which keeps corpus output byte-identical across platforms.

template <typename T>
Tensor<T> make_image(size_t channels, size_t h, size_t w, T fill = T(0)) {
  return Tensor<T>({channels, h, w}, fill);
}

template <typename T>
void write_ppm(const Tensor<T>& img, const std::string& path) {
  CQIL_CHECK_MSG(img.ndim() == 3 && img.dim(0) == 3, "write_ppm wants a 3xHxW image");
  const size_t h = img.dim(1), w = img.dim(2);
  std::ofstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot open " << path << " for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) {
      for (size_t c = 0; c < 3; ++c) {
        double v = std::clamp(static_cast<double>(img.at3(c, y, x)), 0.0, 1.0);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  CQIL_CHECK_MSG(f.good(), "short write to " << path);
}

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot open " << path);
  std::string magic;
  f >> magic;
  CQIL_CHECK_MSG(magic == "P6", path << " is not a binary PPM");
  size_t w = 0, h = 0;
  int maxval = 0;
  f >> w >> h >> maxval;
  CQIL_CHECK_MSG(maxval == 255, "unsupported maxval in " << path);
  f.get();  // single whitespace after header
  Tensor<T> img({3, h, w});
  std::vector<unsigned char> row(w * 3);
  for (size_t y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    CQIL_CHECK_MSG(f.good(), "truncated PPM " << path);
    for (size_t x = 0; x < w; ++x)
      for (size_t c = 0; c < 3; ++c)
        img.at3(c, y, x) = static_cast<T>(row[x * 3 + c] / 255.0);
  }
  return img;
}

template <typename T>
void clip01(Tensor<T>& img) {
  for (size_t i = 0; i < img.numel(); ++i)
    img[i] = std::clamp(img[i], T(0), T(1));
}

namespace detail {
inline size_t clamp_idx(long i, size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<size_t>(i);
}
}  // namespace detail

// Half-pixel-center bilinear resampling, edges clamped.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, size_t out_h, size_t out_w) {
  CQIL_CHECK(img.ndim() == 3);
  const size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (size_t y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    long y0 = static_cast<long>(std::floor(fy));
    double wy = fy - y0;
    size_t ya = detail::clamp_idx(y0, h), yb = detail::clamp_idx(y0 + 1, h);
    for (size_t x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      long x0 = static_cast<long>(std::floor(fx));
      double wx = fx - x0;
      size_t xa = detail::clamp_idx(x0, w), xb = detail::clamp_idx(x0 + 1, w);
      for (size_t ch = 0; ch < c; ++ch) {
        double top = (1 - wx) * img.at3(ch, ya, xa) + wx * img.at3(ch, ya, xb);
        double bot = (1 - wx) * img.at3(ch, yb, xa) + wx * img.at3(ch, yb, xb);
        out.at3(ch, y, x) = static_cast<T>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& img, size_t out_h, size_t out_w) {
  CQIL_CHECK(img.ndim() == 3);
  const size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, out_h, out_w});
  for (size_t y = 0; y < out_h; ++y) {
    size_t sy = std::min(h - 1, static_cast<size_t>((y + 0.5) * h / out_h));
    for (size_t x = 0; x < out_w; ++x) {
      size_t sx = std::min(w - 1, static_cast<size_t>((x + 0.5) * w / out_w));
      for (size_t ch = 0; ch < c; ++ch) out.at3(ch, y, x) = img.at3(ch, sy, sx);
    }
  }
  return out;
}

namespace detail {
// Catmull-Rom cubic weight (a = -0.5).
inline double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}
}  // namespace detail

template <typename T>
Tensor<T> resize_bicubic(const Tensor<T>& img, size_t out_h, size_t out_w) {
  CQIL_CHECK(img.ndim() == 3);
  const size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (size_t y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    long y0 = static_cast<long>(std::floor(fy));
    for (size_t x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      long x0 = static_cast<long>(std::floor(fx));
      for (size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0, wsum = 0.0;
        for (long dy = -1; dy <= 2; ++dy) {
          double wy = detail::cubic_weight(fy - (y0 + dy));
          if (wy == 0.0) continue;
          for (long dx = -1; dx <= 2; ++dx) {
            double wx = detail::cubic_weight(fx - (x0 + dx));
            if (wx == 0.0) continue;
            acc += wy * wx *
                   img.at3(ch, detail::clamp_idx(y0 + dy, h), detail::clamp_idx(x0 + dx, w));
            wsum += wy * wx;
          }
        }
        out.at3(ch, y, x) = static_cast<T>(acc / wsum);
      }
    }
  }
  return out;
}

// Kernel-size-to-sigma convention used when only a kernel size is given.
inline double sigma_for_kernel(int kernel) {
  return 0.3 * ((kernel - 1) / 2.0 - 1.0) + 0.8;
}

inline std::vector<double> gaussian_kernel_1d(int kernel, double sigma) {
  CQIL_CHECK_MSG(kernel >= 1 && kernel % 2 == 1, "gaussian kernel must be odd, got " << kernel);
  CQIL_CHECK_MSG(sigma > 0.0, "sigma must be positive");
  std::vector<double> k(static_cast<size_t>(kernel));
  const int r = kernel / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<size_t>(i + r)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable gaussian blur, replicated borders. kernel == 1 is the identity.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& img, int kernel, double sigma) {
  CQIL_CHECK(img.ndim() == 3);
  if (kernel == 1) return img;
  const auto k = gaussian_kernel_1d(kernel, sigma);
  const int r = kernel / 2;
  const size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> tmp({c, h, w}), out({c, h, w});
  for (size_t ch = 0; ch < c; ++ch) {
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<size_t>(i + r)] *
                 img.at3(ch, y, detail::clamp_idx(static_cast<long>(x) + i, w));
        tmp.at3(ch, y, x) = static_cast<T>(acc);
      }
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<size_t>(i + r)] *
                 tmp.at3(ch, detail::clamp_idx(static_cast<long>(y) + i, h), x);
        out.at3(ch, y, x) = static_cast<T>(acc);
      }
  }
  return out;
}

template <typename T>
Tensor<T> to_gray(const Tensor<T>& img) {
  CQIL_CHECK(img.ndim() == 3);
  const size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> g({1, h, w});
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (size_t ch = 0; ch < c; ++ch) s += img.at3(ch, y, x);
      g.at3(0, y, x) = static_cast<T>(s / c);
    }
  return g;
}

// Variance of the 3x3 four-neighbour Laplacian response over the gray image
// (interior pixels only).
template <typename T>
double laplacian_variance(const Tensor<T>& img) {
  CQIL_CHECK_MSG(!img.empty(), "empty image");
  Tensor<T> g = img.dim(0) == 1 ? img : to_gray(img);
  const size_t h = g.dim(1), w = g.dim(2);
  CQIL_CHECK_MSG(h >= 3 && w >= 3, "image too small for 3x3 Laplacian");
  double sum = 0.0, sum2 = 0.0;
  const size_t n = (h - 2) * (w - 2);
  for (size_t y = 1; y + 1 < h; ++y)
    for (size_t x = 1; x + 1 < w; ++x) {
      double v = -4.0 * g.at3(0, y, x) + g.at3(0, y - 1, x) + g.at3(0, y + 1, x) +
                 g.at3(0, y, x - 1) + g.at3(0, y, x + 1);
      sum += v;
      sum2 += v * v;
    }
  double mean = sum / n;
  return std::max(0.0, sum2 / n - mean * mean);
}

inline constexpr double kDefaultQualityCalibration = 0.02;

// Proxy quality score in [0, 1]: q = 1 - exp(-v / c) where v is the Laplacian
// variance. c is calibrated per corpus so the median clean image scores 0.7.
template <typename T>
double score_quality(const Tensor<T>& img, double calibration = kDefaultQualityCalibration) {
  CQIL_CHECK_MSG(!img.empty(), "empty image");
  CQIL_CHECK(calibration > 0.0);
  double v = laplacian_variance(img);
  return 1.0 - std::exp(-v / calibration);
}

}  // namespace cqil
