#pragma once

#include "cqil/contrast.hpp"
#include "cqil/layers.hpp"

namespace cqil {

// Separate Quality Network: a CDC backbone whose pooled features feed three
// heads — the auxiliary liveness head (plain cross-entropy), the quality
// discriminator (behind a gradient reversal layer) and, concatenated with the
// contrastive branch features, the main classifier living in the trainer.

// Mean cross-entropy of the discriminator logits against quality labels.
// Minimising this trains the discriminator; the reversed gradient drives the
// backbone to erase quality information.
template <typename T>
Var<T> adversarial_loss(const Var<T>& disc_logits, const std::vector<int>& quality_labels) {
  return softmax_cross_entropy(disc_logits, quality_labels);
}

template <typename T>
struct SqnBranch {
  Encoder<T> backbone;      // CDC quality-invariant backbone (CQI)
  LinearLayer<T> aux_head;  // liveness supervision of the backbone
  Mlp<T> discriminator;     // 2-layer perceptron over pooled features
  T lambda_grl = T(1);

  SqnBranch() = default;
  SqnBranch(size_t base_width, T theta, size_t disc_hidden, T lambda, Rng& rng)
      : backbone(base_width, theta, rng),
        aux_head(base_width * 8, 2, rng),
        discriminator(base_width * 8, disc_hidden, 2, rng),
        lambda_grl(lambda) {
    // Heads start at zero logits; features are unnormalised, so this keeps
    // the first steps off confident-wrong predictions.
    aux_head.w.value().fill(T(0));
    discriminator.l2.w.value().fill(T(0));
  }

  // Pooled CQI features for a batch.
  Var<T> features(const Var<T>& images) const { return backbone.forward(images); }

  Var<T> aux_logits(const Var<T>& feats) const { return aux_head.forward(feats); }

  Var<T> disc_logits(const Var<T>& feats) const {
    return discriminator.forward(gradient_reversal(feats, lambda_grl));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    backbone.collect(prefix + ".cqi", out);
    aux_head.collect(prefix + ".aux", out);
    discriminator.collect(prefix + ".disc", out);
  }
};

}  // namespace cqil
