#pragma once

#include <cmath>
#include <vector>

#include "cqil/autodiff.hpp"
#include "cqil/degrade.hpp"
#include "cqil/layers.hpp"

namespace cqil {

// Contrastive branch primitives: the cosine-based pair term
//   2 - 2 * <q, z> / (|q| * |z|)
// (equivalently |q_hat - z_hat|^2 after l2 normalisation), its symmetrized
// combination over a quality pair, and the target-network moving average.

template <typename T>
double contrastive_term(const Tensor<T>& q, const Tensor<T>& z) {
  CQIL_CHECK_MSG(q.numel() == z.numel() && q.numel() > 0, "dimension mismatch");
  double qq = 0, zz = 0, qz = 0;
  for (size_t i = 0; i < q.numel(); ++i) {
    qq += static_cast<double>(q[i]) * q[i];
    zz += static_cast<double>(z[i]) * z[i];
    qz += static_cast<double>(q[i]) * z[i];
  }
  CQIL_CHECK_MSG(qq > 0 && zz > 0, "contrastive_term: zero-norm vector");
  return 2.0 - 2.0 * qz / (std::sqrt(qq) * std::sqrt(zz));
}

// Row-wise pair terms for a batch. q:[B,D] carries gradient, z:[B,D] is the
// target-network projection and is treated as a constant.
template <typename T>
Var<T> contrastive_terms(const Var<T>& q, const Tensor<T>& z) {
  CQIL_CHECK(q.value().ndim() == 2 && z.ndim() == 2);
  CQIL_CHECK(q.value().same_shape(z));
  const size_t B = q.value().dim(0), D = q.value().dim(1);

  Tensor<T> v({B});
  auto norms = std::make_shared<Tensor<T>>(std::vector<size_t>{B, 3});  // |q|, |z|, <q,z>
  for (size_t b = 0; b < B; ++b) {
    double qq = 0, zz = 0, qz = 0;
    const T* qp = q.value().data() + b * D;
    const T* zp = z.data() + b * D;
    for (size_t i = 0; i < D; ++i) {
      qq += static_cast<double>(qp[i]) * qp[i];
      zz += static_cast<double>(zp[i]) * zp[i];
      qz += static_cast<double>(qp[i]) * zp[i];
    }
    CQIL_CHECK_MSG(qq > 0 && zz > 0, "contrastive_terms: zero-norm vector in row " << b);
    norms->at2(b, 0) = static_cast<T>(std::sqrt(qq));
    norms->at2(b, 1) = static_cast<T>(std::sqrt(zz));
    norms->at2(b, 2) = static_cast<T>(qz);
    v[b] = static_cast<T>(2.0 - 2.0 * qz / (std::sqrt(qq) * std::sqrt(zz)));
  }

  auto qn = q.node();
  auto zc = std::make_shared<Tensor<T>>(z);
  return make_op<T>(std::move(v), {q}, [qn, zc, norms, B, D](Node<T>& n) {
    if (!qn->requires_grad) return;
    Tensor<T> g({B, D});
    for (size_t b = 0; b < B; ++b) {
      const T nq = norms->at2(b, 0), nz = norms->at2(b, 1), qz = norms->at2(b, 2);
      const T* qp = qn->value.data() + b * D;
      const T* zp = zc->data() + b * D;
      const T go = n.grad[b];
      const T inv = T(1) / (nq * nz);
      const T qscale = qz / (nq * nq * nq * nz);
      for (size_t i = 0; i < D; ++i)
        g.at2(b, i) = go * T(-2) * (zp[i] * inv - qp[i] * qscale);
    }
    detail::accumulate(qn, g);
  });
}

// Gradient-trained branch: encoder, projector, predictor.
template <typename T>
struct OnlineNetwork {
  Encoder<T> encoder;
  Mlp<T> projector, predictor;

  OnlineNetwork() = default;
  OnlineNetwork(size_t base_width, size_t hidden, size_t dim, Rng& rng)
      : encoder(base_width, T(0), rng),
        projector(base_width * 8, hidden, dim, rng),
        predictor(dim, hidden, dim, rng) {}

  Var<T> features(const Var<T>& images) const { return encoder.forward(images); }

  Var<T> prediction(const Var<T>& images) const {
    return predictor.forward(projector.forward(encoder.forward(images)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    encoder.collect(prefix + ".enc", out);
    projector.collect(prefix + ".proj", out);
    predictor.collect(prefix + ".pred", out);
  }

  // The EMA mirrors only the encoder and projector.
  void collect_ema_sources(const std::string& prefix, ParamList<T>& out) const {
    encoder.collect(prefix + ".enc", out);
    projector.collect(prefix + ".proj", out);
  }
};

// EMA branch: encoder and projector, architecturally congruent with the
// online counterparts, never gradient-trained.
template <typename T>
struct TargetNetwork {
  Encoder<T> encoder;
  Mlp<T> projector;

  TargetNetwork() = default;
  TargetNetwork(size_t base_width, size_t hidden, size_t dim, Rng& rng)
      : encoder(base_width, T(0), rng), projector(base_width * 8, hidden, dim, rng) {}

  // Value-only path; parameters are frozen leaves so no graph is built.
  Tensor<T> projection(const Tensor<T>& images) const {
    return projector.forward(encoder.forward(Var<T>::constant(images))).value();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    encoder.collect(prefix + ".enc", out);
    projector.collect(prefix + ".proj", out);
  }
};

// L_theta,xi + its swapped counterpart over one quality pair: the restored
// member goes through the online network against the target projection of the
// original, then the roles swap.
template <typename T>
Var<T> symmetrized_loss(const QualityPair<T>& pair, const OnlineNetwork<T>& online,
                        const TargetNetwork<T>& target) {
  CQIL_CHECK_MSG(pair.enhanced.same_shape(pair.original),
                 "pair members must share a shape");
  const size_t c = pair.enhanced.dim(0), h = pair.enhanced.dim(1),
               w = pair.enhanced.dim(2);
  Tensor<T> enh = pair.enhanced.reshaped({1, c, h, w});
  Tensor<T> orig = pair.original.reshaped({1, c, h, w});
  Var<T> q_enh = online.prediction(Var<T>::constant(enh));
  Var<T> q_orig = online.prediction(Var<T>::constant(orig));
  return add(mean_all(contrastive_terms(q_enh, target.projection(orig))),
             mean_all(contrastive_terms(q_orig, target.projection(enh))));
}

// xi <- tau * xi + (1 - tau) * theta, applied in place without touching any
// gradient state.
template <typename T>
void ema_update(std::vector<Var<T>>& target_params,
                const std::vector<Var<T>>& online_params, T tau) {
  CQIL_CHECK_MSG(tau >= T(0) && tau <= T(1), "tau must be in [0,1]");
  CQIL_CHECK_MSG(target_params.size() == online_params.size(),
                 "parameter set size mismatch");
  for (size_t i = 0; i < target_params.size(); ++i) {
    Tensor<T>& xi = target_params[i].value();
    const Tensor<T>& th = online_params[i].value();
    CQIL_CHECK_MSG(xi.same_shape(th), "parameter " << i << " shape mismatch");
    for (size_t j = 0; j < xi.numel(); ++j)
      xi[j] = tau * xi[j] + (T(1) - tau) * th[j];
  }
}

}  // namespace cqil
