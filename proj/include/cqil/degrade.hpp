#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cqil/image.hpp"
#include "cqil/manifest.hpp"
#include "cqil/rng.hpp"

namespace cqil {

// Quality degradation: gaussian blur, bilinear down/up sampling (spatial size
// is preserved so both members of a pair share the encoder input shape) and
// additive gaussian noise clipped back to [0,1].
struct DegradeParams {
  int scale_factor = 2;
  int gauss_kernel = 3;
  double gauss_sigma = 0.0;  // <= 0 means derive from kernel size
  double noise_std = 0.01;   // fraction of the dynamic range

  static DegradeParams identity() { return {1, 1, 0.0, 0.0}; }

  bool is_identity() const {
    return scale_factor == 1 && gauss_kernel == 1 && noise_std == 0.0;
  }

  double sigma() const {
    return gauss_sigma > 0.0 ? gauss_sigma : sigma_for_kernel(gauss_kernel);
  }

  void validate() const {
    CQIL_CHECK_MSG(scale_factor >= 1, "scale_factor must be >= 1");
    CQIL_CHECK_MSG(gauss_kernel >= 1 && gauss_kernel % 2 == 1,
                   "gauss_kernel must be odd, got " << gauss_kernel);
    CQIL_CHECK_MSG(noise_std >= 0.0, "noise_std must be >= 0");
  }
};

template <typename T>
Tensor<T> degrade(const Tensor<T>& img, const DegradeParams& params,
                  uint64_t noise_seed = 0) {
  params.validate();
  CQIL_CHECK_MSG(!img.empty() && img.ndim() == 3, "degrade wants a CHW image");
  const size_t h = img.dim(1), w = img.dim(2);
  if (params.is_identity()) return img;
  CQIL_CHECK_MSG(h % params.scale_factor == 0 && w % params.scale_factor == 0,
                 "scale_factor " << params.scale_factor
                                 << " does not divide image side");

  Tensor<T> out = img;
  if (params.gauss_kernel > 1)
    out = gaussian_blur(out, params.gauss_kernel, params.sigma());
  if (params.scale_factor > 1) {
    out = resize_bilinear(out, h / params.scale_factor, w / params.scale_factor);
    out = resize_bilinear(out, h, w);
  }
  if (params.noise_std > 0.0) {
    Rng rng(noise_seed);
    for (size_t i = 0; i < out.numel(); ++i)
      out[i] = static_cast<T>(out[i] + params.noise_std * rng.normal());
    clip01(out);
  }
  return out;
}

// A (restored, original) image pair. The restored member carries quality
// label 0, the original carries label 1, independent of content.
template <typename T>
struct QualityPair {
  Tensor<T> enhanced;
  Tensor<T> original;
  Liveness liveness = Liveness::live;

  static constexpr int kEnhancedQualityLabel = 0;
  static constexpr int kOriginalQualityLabel = 1;
};

// Interpolation-simulated pair: down/up sampling with bicubic for the
// smooth member and nearest-neighbour for the blocky one. Used by the
// ablation variants that run without the restoration network.
template <typename T>
QualityPair<T> interpolation_pair(const Tensor<T>& img, Liveness liveness,
                                  int scale_factor = 2) {
  CQIL_CHECK(img.ndim() == 3);
  const size_t h = img.dim(1), w = img.dim(2);
  CQIL_CHECK_MSG(h % scale_factor == 0 && w % scale_factor == 0,
                 "scale_factor does not divide image side");
  QualityPair<T> pair;
  Tensor<T> small_cubic = resize_bicubic(img, h / scale_factor, w / scale_factor);
  pair.enhanced = resize_bicubic(small_cubic, h, w);
  clip01(pair.enhanced);
  Tensor<T> small_near = resize_nearest(img, h / scale_factor, w / scale_factor);
  pair.original = resize_nearest(small_near, h, w);
  pair.liveness = liveness;
  return pair;
}

// Emits one derived manifest per gaussian kernel size: every image in the
// source manifest is blurred with that kernel (optionally also down/up
// sampled by scale_factor), rescored, and written under out_dir/kernel_K/.
// Returns the derived manifest paths in kernel order.
inline std::vector<std::string> gaussian_degrade_suite(
    const std::string& manifest_path, const std::vector<int>& kernel_sizes,
    const std::string& out_dir, double quality_calibration, int scale_factor = 1) {
  namespace fs = std::filesystem;
  for (int k : kernel_sizes)
    CQIL_CHECK_MSG(k >= 1 && k % 2 == 1, "kernel sizes must be odd, got " << k);
  CQIL_CHECK_MSG(scale_factor >= 1, "scale_factor must be >= 1");
  auto records = read_manifest(manifest_path);
  CQIL_CHECK_MSG(!records.empty(), "empty manifest " << manifest_path);

  std::vector<std::string> out_manifests;
  for (int k : kernel_sizes) {
    const fs::path kdir = fs::path(out_dir) / ("kernel_" + std::to_string(k));
    fs::create_directories(kdir / "images");
    std::vector<SampleRecord> derived;
    derived.reserve(records.size());
    const DegradeParams dp{scale_factor, k, 0.0, 0.0};
    for (const auto& r : records) {
      Tensor<float> img = read_ppm<float>(r.path);
      img = degrade(img, dp);
      SampleRecord d = r;
      d.path = (kdir / "images" / fs::path(r.path).filename()).string();
      d.quality_score = score_quality(img, quality_calibration);
      write_ppm(img, d.path);
      derived.push_back(std::move(d));
    }
    const std::string mpath = (kdir / "manifest.csv").string();
    write_manifest(derived, mpath);
    out_manifests.push_back(mpath);
  }
  return out_manifests;
}

}  // namespace cqil
