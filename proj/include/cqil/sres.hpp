#pragma once

#include <iostream>
#include <vector>

#include "cqil/checkpoint.hpp"
#include "cqil/degrade.hpp"
#include "cqil/layers.hpp"
#include "cqil/optimizer.hpp"

namespace cqil {

// Restoration network: feature extraction (9x9), nonlinear mapping (1x1),
// reconstruction (5x5), plus a global residual skip. The reconstruction
// layer starts at zero so the untrained network is the identity map.
template <typename T>
struct SRNetwork {
  ConvLayer<T> extract, map, reconstruct;

  SRNetwork() = default;
  SRNetwork(Rng& rng, size_t feat_ch = 64, size_t map_ch = 32) {
    extract = ConvLayer<T>(3, feat_ch, 9, 1, T(0), rng);
    map = ConvLayer<T>(feat_ch, map_ch, 1, 1, T(0), rng);
    reconstruct = ConvLayer<T>(map_ch, 3, 5, 1, T(0), rng);
    reconstruct.w.value().fill(T(0));
    reconstruct.b.value().fill(T(0));
  }

  // Graph-building forward on a batch [B,3,H,W]; output is unclipped so the
  // training loss stays differentiable everywhere.
  Var<T> forward(const Var<T>& x) const {
    Var<T> h = relu(extract.forward(x));
    h = relu(map.forward(h));
    h = reconstruct.forward(h);
    return add(x, h);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    extract.collect(prefix + ".extract", out);
    map.collect(prefix + ".map", out);
    reconstruct.collect(prefix + ".reconstruct", out);
  }

  ParamList<T> params() const {
    ParamList<T> out;
    collect("sr", out);
    return out;
  }
};

// Inference entry point: restores one CHW image, clipped to [0,1].
template <typename T>
Tensor<T> sr_forward(const SRNetwork<T>& net, const Tensor<T>& img) {
  CQIL_CHECK_MSG(img.ndim() == 3 && img.dim(0) == 3,
                 "sr_forward wants a 3xHxW image, got " << img.shape_str());
  Tensor<T> batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  Var<T> out = net.forward(Var<T>::constant(std::move(batch)));
  CQIL_CHECK_MSG(out.value().all_finite(), "sr_forward produced non-finite values");
  Tensor<T> res = out.value().reshaped({img.dim(0), img.dim(1), img.dim(2)});
  clip01(res);
  return res;
}

// IQV pair construction: restored image gets quality label 0, the original
// keeps label 1, and the liveness label is copied from the sample.
template <typename T>
QualityPair<T> make_pair(const Tensor<T>& img, const SRNetwork<T>& net,
                         Liveness liveness) {
  QualityPair<T> pair;
  pair.enhanced = sr_forward(net, img);
  pair.original = img;
  pair.liveness = liveness;
  return pair;
}

struct TrainSrOptions {
  double lr = 1e-3;
  size_t batch_size = 4;
  uint64_t seed = 0;
  bool verbose = false;
};

// Trains the restoration network on (degraded, clean) pairs built from the
// given clean images. Returns the per-epoch mean training loss.
template <typename T>
std::vector<double> train_sr(SRNetwork<T>& net,
                             const std::vector<Tensor<T>>& clean_images,
                             const DegradeParams& params, size_t epochs,
                             const TrainSrOptions& opts = {}) {
  CQIL_CHECK_MSG(!clean_images.empty(), "train_sr: empty image set");
  params.validate();
  ParamList<T> plist = net.params();
  Adam<T> adam;
  adam.init(plist);

  std::vector<double> epoch_losses;
  Rng order_rng(derive_seed(opts.seed, "sr-order"));
  std::vector<size_t> idx(clean_images.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < idx.size(); start += opts.batch_size) {
      const size_t bsz = std::min(opts.batch_size, idx.size() - start);
      const auto& first = clean_images[idx[start]];
      const size_t ch = first.dim(0), h = first.dim(1), w = first.dim(2);
      Tensor<T> lq({bsz, ch, h, w}), hq({bsz, ch, h, w});
      for (size_t b = 0; b < bsz; ++b) {
        const Tensor<T>& clean = clean_images[idx[start + b]];
        CQIL_CHECK_MSG(clean.dim(1) == h && clean.dim(2) == w,
                       "train_sr: inconsistent image sizes");
        Tensor<T> deg =
            degrade(clean, params, derive_seed(opts.seed, {epoch, idx[start + b]}));
        std::copy(deg.data(), deg.data() + deg.numel(), lq.data() + b * ch * h * w);
        std::copy(clean.data(), clean.data() + clean.numel(), hq.data() + b * ch * h * w);
      }
      Var<T> pred = net.forward(Var<T>::constant(std::move(lq)));
      Var<T> loss = mse_loss(pred, Var<T>::constant(std::move(hq)));
      const double lval = static_cast<double>(loss.value()[0]);
      CQIL_CHECK_MSG(std::isfinite(lval),
                     "train_sr diverged at epoch " << epoch << " batch " << batches);
      zero_grads(plist);
      backward(loss);
      adam.step(plist, opts.lr);
      loss_sum += lval;
      ++batches;
    }
    epoch_losses.push_back(loss_sum / batches);
    if (opts.verbose)
      std::cerr << "train_sr epoch " << epoch << " loss " << epoch_losses.back() << "\n";
  }
  return epoch_losses;
}

template <typename T>
void save_sr_checkpoint(const SRNetwork<T>& net, const std::string& path,
                        uint64_t seed, size_t epochs) {
  TensorArchive<T> ar;
  ar.meta["type"] = "sr";
  ar.meta["feat_ch"] = net.extract.w.value().dim(0);
  ar.meta["map_ch"] = net.map.w.value().dim(0);
  ar.meta["seed"] = seed;
  ar.meta["epochs"] = epochs;
  for (const auto& p : net.params()) ar.put(p.name, p.var.value());
  ar.save(path);
}

template <typename T>
SRNetwork<T> load_sr_checkpoint(const std::string& path) {
  TensorArchive<T> ar = TensorArchive<T>::load(path);
  CQIL_CHECK_MSG(ar.meta.value("type", "") == "sr",
                 path << " is not a restoration-net checkpoint");
  Rng rng(0);
  SRNetwork<T> net(rng, ar.meta.at("feat_ch").template get<size_t>(),
                   ar.meta.at("map_ch").template get<size_t>());
  for (auto& p : net.params()) {
    const Tensor<T>& stored = ar.get(p.name);
    CQIL_CHECK_MSG(stored.same_shape(p.var.value()),
                   "sr checkpoint array " << p.name << " shape mismatch");
    p.var.value() = stored;
  }
  return net;
}

// Held-out comparison: mean MSE of the restored images against clean vs the
// degraded baseline, over the same degradations.
template <typename T>
std::pair<double, double> evaluate_sr(const SRNetwork<T>& net,
                                      const std::vector<Tensor<T>>& clean_images,
                                      const DegradeParams& params, uint64_t seed) {
  CQIL_CHECK(!clean_images.empty());
  double mse_restored = 0.0, mse_degraded = 0.0;
  for (size_t i = 0; i < clean_images.size(); ++i) {
    const auto& clean = clean_images[i];
    Tensor<T> deg = degrade(clean, params, derive_seed(seed, {0xe7a1ULL, i}));
    Tensor<T> restored = sr_forward(net, deg);
    mse_restored += mse_value(restored, clean);
    mse_degraded += mse_value(deg, clean);
  }
  return {mse_restored / clean_images.size(), mse_degraded / clean_images.size()};
}

}  // namespace cqil
