#pragma once

#include <string>
#include <vector>

#include "cqil/nn_ops.hpp"
#include "cqil/rng.hpp"

namespace cqil {

template <typename T>
struct ParamRef {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
std::vector<Var<T>> param_vars(const ParamList<T>& list) {
  std::vector<Var<T>> out;
  out.reserve(list.size());
  for (const auto& p : list) out.push_back(p.var);
  return out;
}

template <typename T>
void set_requires_grad(ParamList<T>& list, bool flag) {
  for (auto& p : list) p.var.node()->requires_grad = flag;
}

template <typename T>
void zero_grads(ParamList<T>& list) {
  for (auto& p : list) p.var.zero_grad();
}

// Square convolution with same padding. theta > 0 turns it into a central
// difference convolution.
template <typename T>
struct ConvLayer {
  Var<T> w, b;
  size_t stride = 1;
  T theta = T(0);

  ConvLayer() = default;
  ConvLayer(size_t in_ch, size_t out_ch, size_t kernel, size_t stride_, T theta_,
            Rng& rng)
      : stride(stride_), theta(theta_) {
    Tensor<T> wt({out_ch, in_ch, kernel, kernel});
    const T stddev = static_cast<T>(std::sqrt(2.0 / (in_ch * kernel * kernel)));
    wt.fill_normal(rng, stddev);
    w = Var<T>::param(std::move(wt));
    b = Var<T>::param(Tensor<T>({out_ch}));
  }

  Var<T> forward(const Var<T>& x) const {
    if (theta > T(0)) return cdc_conv2d(x, w, b, theta, stride);
    return conv2d(x, w, b, stride, w.value().dim(2) / 2);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename T>
struct LinearLayer {
  Var<T> w, b;

  LinearLayer() = default;
  LinearLayer(size_t in_dim, size_t out_dim, Rng& rng) {
    Tensor<T> wt({out_dim, in_dim});
    wt.fill_normal(rng, static_cast<T>(std::sqrt(2.0 / in_dim)));
    w = Var<T>::param(std::move(wt));
    b = Var<T>::param(Tensor<T>({out_dim}));
  }

  Var<T> forward(const Var<T>& x) const { return linear(x, w, b); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

// Two-layer perceptron, ReLU in between. Used for the projector, predictor,
// quality discriminator and the main classifier.
template <typename T>
struct Mlp {
  LinearLayer<T> l1, l2;

  Mlp() = default;
  Mlp(size_t in_dim, size_t hidden, size_t out_dim, Rng& rng)
      : l1(in_dim, hidden, rng), l2(hidden, out_dim, rng) {}

  Var<T> forward(const Var<T>& x) const { return l2.forward(relu(l1.forward(x))); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }
};

// Compact residual CNN: stem conv, then four stages, each a stride-2
// downsampling conv followed by one residual block, global average pool at
// the end. Channel plan is base, 2*base, 4*base, 8*base; the feature vector
// has 8*base dimensions. theta > 0 makes every convolution a CDC.
template <typename T>
struct Encoder {
  ConvLayer<T> stem;
  struct Stage {
    ConvLayer<T> down, c1, c2;
  };
  std::vector<Stage> stages;
  size_t base = 0;

  Encoder() = default;
  Encoder(size_t base_width, T theta, Rng& rng) : base(base_width) {
    stem = ConvLayer<T>(3, base, 3, 1, theta, rng);
    size_t ch = base;
    for (int s = 0; s < 4; ++s) {
      size_t out_ch = (s == 0) ? base : ch * 2;
      Stage st;
      st.down = ConvLayer<T>(ch, out_ch, 3, 2, theta, rng);
      st.c1 = ConvLayer<T>(out_ch, out_ch, 3, 1, theta, rng);
      st.c2 = ConvLayer<T>(out_ch, out_ch, 3, 1, theta, rng);
      stages.push_back(std::move(st));
      ch = out_ch;
    }
  }

  size_t feature_dim() const { return base * 8; }

  // Returns the pooled feature vector [B, feature_dim], standardised per
  // row so downstream heads see a stable scale.
  Var<T> forward(const Var<T>& x) const {
    Var<T> h = relu(stem.forward(x));
    for (const auto& st : stages) {
      h = relu(st.down.forward(h));
      Var<T> r = st.c2.forward(relu(st.c1.forward(h)));
      h = relu(add(h, r));
    }
    return feature_norm(global_avg_pool(h));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    stem.collect(prefix + ".stem", out);
    for (size_t i = 0; i < stages.size(); ++i) {
      const std::string p = prefix + ".s" + std::to_string(i);
      stages[i].down.collect(p + ".down", out);
      stages[i].c1.collect(p + ".c1", out);
      stages[i].c2.collect(p + ".c2", out);
    }
  }
};

// Copies parameter values from src into dst (shapes must already agree).
template <typename T>
void copy_params(ParamList<T>& dst, const ParamList<T>& src) {
  CQIL_CHECK(dst.size() == src.size());
  for (size_t i = 0; i < dst.size(); ++i) {
    CQIL_CHECK_MSG(dst[i].var.value().same_shape(src[i].var.value()),
                   "copy_params: shape mismatch at " << src[i].name);
    dst[i].var.value() = src[i].var.value();
  }
}

}  // namespace cqil
