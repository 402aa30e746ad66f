#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <vector>

#include "cqil/autodiff.hpp"

namespace cqil {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline size_t conv_out_dim(size_t in, size_t k, size_t stride, size_t pad) {
  CQIL_CHECK_MSG(in + 2 * pad >= k, "kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// cols is [C*k*k, Ho*Wo] row-major for one sample.
template <typename T>
void im2col(const T* x, size_t C, size_t H, size_t W, size_t k, size_t stride,
            size_t pad, size_t Ho, size_t Wo, T* cols) {
  const size_t N = Ho * Wo;
  for (size_t c = 0; c < C; ++c) {
    for (size_t ky = 0; ky < k; ++ky) {
      for (size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * N;
        for (size_t oy = 0; oy < Ho; ++oy) {
          long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          const bool y_ok = iy >= 0 && iy < static_cast<long>(H);
          for (size_t ox = 0; ox < Wo; ++ox) {
            long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            row[oy * Wo + ox] = (y_ok && ix >= 0 && ix < static_cast<long>(W))
                                    ? x[(c * H + iy) * W + ix]
                                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, size_t C, size_t H, size_t W, size_t k,
                size_t stride, size_t pad, size_t Ho, size_t Wo, T* x) {
  const size_t N = Ho * Wo;
  for (size_t c = 0; c < C; ++c) {
    for (size_t ky = 0; ky < k; ++ky) {
      for (size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * N;
        for (size_t oy = 0; oy < Ho; ++oy) {
          long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (size_t ox = 0; ox < Wo; ++ox) {
            long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            x[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// y[B,O] = x[B,I] * w[O,I]^T + bias[O]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  CQIL_CHECK(x.value().ndim() == 2 && w.value().ndim() == 2);
  const size_t B = x.value().dim(0), I = x.value().dim(1), O = w.value().dim(0);
  CQIL_CHECK_MSG(w.value().dim(1) == I, "linear: input dim mismatch");
  CQIL_CHECK(bias.value().numel() == O);

  Tensor<T> y({B, O});
  {
    detail::CMapMat<T> xm(x.value().data(), B, I);
    detail::CMapMat<T> wm(w.value().data(), O, I);
    detail::MapMat<T> ym(y.data(), B, O);
    ym.noalias() = xm * wm.transpose();
    for (size_t b = 0; b < B; ++b)
      for (size_t o = 0; o < O; ++o) y.at2(b, o) += bias.value()[o];
  }
  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return make_op<T>(std::move(y), {x, w, bias}, [xn, wn, bn, B, I, O](Node<T>& n) {
    detail::CMapMat<T> gm(n.grad.data(), B, O);
    if (xn->requires_grad) {
      Tensor<T> gx({B, I});
      detail::MapMat<T> gxm(gx.data(), B, I);
      detail::CMapMat<T> wm(wn->value.data(), O, I);
      gxm.noalias() = gm * wm;
      detail::accumulate(xn, gx);
    }
    if (wn->requires_grad) {
      Tensor<T> gw({O, I});
      detail::MapMat<T> gwm(gw.data(), O, I);
      detail::CMapMat<T> xm(xn->value.data(), B, I);
      gwm.noalias() = gm.transpose() * xm;
      detail::accumulate(wn, gw);
    }
    if (bn->requires_grad) {
      Tensor<T> gb(bn->value.shape());
      for (size_t b = 0; b < B; ++b)
        for (size_t o = 0; o < O; ++o) gb[o] += n.grad.at2(b, o);
      detail::accumulate(bn, gb);
    }
  });
}

// Plain 2-d convolution, zero padding. x:[B,C,H,W] w:[O,C,k,k] bias:[O].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
              size_t stride, size_t pad) {
  CQIL_CHECK(x.value().ndim() == 4 && w.value().ndim() == 4);
  const size_t B = x.value().dim(0), C = x.value().dim(1);
  const size_t H = x.value().dim(2), W = x.value().dim(3);
  const size_t O = w.value().dim(0), k = w.value().dim(2);
  CQIL_CHECK_MSG(w.value().dim(1) == C, "conv2d: channel mismatch");
  CQIL_CHECK_MSG(w.value().dim(3) == k, "conv2d: kernel must be square");
  CQIL_CHECK(bias.value().numel() == O);
  const size_t Ho = detail::conv_out_dim(H, k, stride, pad);
  const size_t Wo = detail::conv_out_dim(W, k, stride, pad);
  const size_t K = C * k * k, N = Ho * Wo;

  auto cols = std::make_shared<Tensor<T>>(std::vector<size_t>{B, K, N});
  Tensor<T> y({B, O, Ho, Wo});
  {
    for (size_t b = 0; b < B; ++b) {
      T* cb = cols->data() + b * K * N;
      detail::im2col(x.value().data() + b * C * H * W, C, H, W, k, stride, pad, Ho, Wo, cb);
      detail::MapMat<T> ym(y.data() + b * O * N, O, N);
      detail::CMapMat<T> cm(cb, K, N);
      ym.noalias() = detail::CMapMat<T>(w.value().data(), O, K) * cm;
      for (size_t o = 0; o < O; ++o) {
        T bv = bias.value()[o];
        T* yo = y.data() + (b * O + o) * N;
        for (size_t i = 0; i < N; ++i) yo[i] += bv;
      }
    }
  }

  auto xn = x.node(), wn = w.node(), bn = bias.node();
  auto bw = [xn, wn, bn, cols, B, C, H, W, O, k, stride, pad, Ho, Wo, K, N](Node<T>& n) {
    if (wn->requires_grad) {
      Tensor<T> gw({O, C, k, k});
      detail::MapMat<T> gwm(gw.data(), O, K);
      for (size_t b = 0; b < B; ++b) {
        detail::CMapMat<T> gym(n.grad.data() + b * O * N, O, N);
        detail::CMapMat<T> cm(cols->data() + b * K * N, K, N);
        gwm.noalias() += gym * cm.transpose();
      }
      detail::accumulate(wn, gw);
    }
    if (bn->requires_grad) {
      Tensor<T> gb(bn->value.shape());
      for (size_t b = 0; b < B; ++b)
        for (size_t o = 0; o < O; ++o) {
          const T* gy = n.grad.data() + (b * O + o) * N;
          T s = T(0);
          for (size_t i = 0; i < N; ++i) s += gy[i];
          gb[o] += s;
        }
      detail::accumulate(bn, gb);
    }
    if (xn->requires_grad) {
      Tensor<T> gx({B, C, H, W});
      Tensor<T> gcols({K, N});
      detail::CMapMat<T> wm(wn->value.data(), O, K);
      for (size_t b = 0; b < B; ++b) {
        detail::CMapMat<T> gym(n.grad.data() + b * O * N, O, N);
        detail::MapMat<T> gcm(gcols.data(), K, N);
        gcm.noalias() = wm.transpose() * gym;
        detail::col2im_add(gcols.data(), C, H, W, k, stride, pad, Ho, Wo,
                           gx.data() + b * C * H * W);
      }
      detail::accumulate(xn, gx);
    }
  };
  return make_op<T>(std::move(y), {x, w, bias}, bw);
}

// Central difference convolution:
//   y(p0) = sum_{pn in R} w(pn) * x(p0 + pn) + theta * (-x(p0) * sum_{pn} w(pn))
// Requires an odd kernel with same padding so the window centre is x(p0).
template <typename T>
Var<T> cdc_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
                  T theta, size_t stride = 1) {
  CQIL_CHECK(x.value().ndim() == 4 && w.value().ndim() == 4);
  const size_t k = w.value().dim(2);
  CQIL_CHECK_MSG(k % 2 == 1, "cdc_conv2d: kernel side must be odd");
  CQIL_CHECK_MSG(theta >= T(0) && theta <= T(1), "cdc theta must be in [0,1]");
  const size_t pad = k / 2;
  const size_t B = x.value().dim(0), C = x.value().dim(1);
  const size_t H = x.value().dim(2), W = x.value().dim(3);
  const size_t O = w.value().dim(0);
  CQIL_CHECK_MSG(w.value().dim(1) == C, "cdc_conv2d: channel mismatch");
  CQIL_CHECK_MSG(H >= k && W >= k, "cdc_conv2d: input smaller than kernel");

  Var<T> y = conv2d(x, w, bias, stride, pad);
  if (theta == T(0)) return y;

  const size_t Ho = y.value().dim(2), Wo = y.value().dim(3), N = Ho * Wo;

  // wsum[o,c] = sum over the kernel window; centre samples x(oy*s, ox*s).
  auto wsum = std::make_shared<Tensor<T>>(std::vector<size_t>{O, C});
  for (size_t o = 0; o < O; ++o)
    for (size_t c = 0; c < C; ++c) {
      T s = T(0);
      const T* wp = w.value().data() + (o * C + c) * k * k;
      for (size_t i = 0; i < k * k; ++i) s += wp[i];
      (*wsum).at2(o, c) = s;
    }
  auto centers = std::make_shared<Tensor<T>>(std::vector<size_t>{B, C, N});
  for (size_t b = 0; b < B; ++b)
    for (size_t c = 0; c < C; ++c) {
      const T* xp = x.value().data() + (b * C + c) * H * W;
      T* cp = centers->data() + (b * C + c) * N;
      for (size_t oy = 0; oy < Ho; ++oy)
        for (size_t ox = 0; ox < Wo; ++ox)
          cp[oy * Wo + ox] = xp[(oy * stride) * W + ox * stride];
    }

  Tensor<T> v = y.value();
  for (size_t b = 0; b < B; ++b) {
    detail::CMapMat<T> wsm(wsum->data(), O, C);
    detail::CMapMat<T> ctm(centers->data() + b * C * N, C, N);
    detail::MapMat<T> vm(v.data() + b * O * N, O, N);
    vm.noalias() -= theta * (wsm * ctm);
  }

  auto xn = x.node(), wn = w.node();
  auto yn = y.node();
  auto bw = [xn, wn, yn, wsum, centers, theta, B, C, H, W, O, k, stride, Ho, Wo,
             N](Node<T>& n) {
    // Main convolution part reuses conv2d's backward via the inner node.
    detail::accumulate(yn, n.grad);
    if (wn->requires_grad) {
      // d y / d w[o,c,u,v] includes -theta * x_centre for every (u,v).
      Tensor<T> dwsum({O, C});
      detail::MapMat<T> dwm(dwsum.data(), O, C);
      for (size_t b = 0; b < B; ++b) {
        detail::CMapMat<T> gym(n.grad.data() + b * O * N, O, N);
        detail::CMapMat<T> ctm(centers->data() + b * C * N, C, N);
        dwm.noalias() += gym * ctm.transpose();
      }
      Tensor<T> gw({O, C, k, k});
      for (size_t o = 0; o < O; ++o)
        for (size_t c = 0; c < C; ++c) {
          T g = -theta * dwsum.at2(o, c);
          T* gp = gw.data() + (o * C + c) * k * k;
          for (size_t i = 0; i < k * k; ++i) gp[i] = g;
        }
      detail::accumulate(wn, gw);
    }
    if (xn->requires_grad) {
      Tensor<T> gcent({C, N});
      Tensor<T> gx({B, C, H, W});
      detail::CMapMat<T> wsm(wsum->data(), O, C);
      for (size_t b = 0; b < B; ++b) {
        detail::CMapMat<T> gym(n.grad.data() + b * O * N, O, N);
        detail::MapMat<T> gcm(gcent.data(), C, N);
        gcm.noalias() = wsm.transpose() * gym;
        for (size_t c = 0; c < C; ++c) {
          T* gxp = gx.data() + (b * C + c) * H * W;
          const T* gcp = gcent.data() + c * N;
          for (size_t oy = 0; oy < Ho; ++oy)
            for (size_t ox = 0; ox < Wo; ++ox)
              gxp[(oy * stride) * W + ox * stride] += -theta * gcp[oy * Wo + ox];
        }
      }
      detail::accumulate(xn, gx);
    }
  };
  // Parents are the conv output plus the raw inputs so both paths contribute.
  return make_op<T>(std::move(v), {y, x, w}, bw);
}

// [B,C,H,W] -> [B,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  CQIL_CHECK(x.value().ndim() == 4);
  const size_t B = x.value().dim(0), C = x.value().dim(1);
  const size_t HW = x.value().dim(2) * x.value().dim(3);
  Tensor<T> y({B, C});
  for (size_t b = 0; b < B; ++b)
    for (size_t c = 0; c < C; ++c) {
      const T* p = x.value().data() + (b * C + c) * HW;
      T s = T(0);
      for (size_t i = 0; i < HW; ++i) s += p[i];
      y.at2(b, c) = s / static_cast<T>(HW);
    }
  auto xn = x.node();
  return make_op<T>(std::move(y), {x}, [xn, B, C, HW](Node<T>& n) {
    if (!xn->requires_grad) return;
    Tensor<T> gx(xn->value.shape());
    for (size_t b = 0; b < B; ++b)
      for (size_t c = 0; c < C; ++c) {
        T g = n.grad.at2(b, c) / static_cast<T>(HW);
        T* p = gx.data() + (b * C + c) * HW;
        for (size_t i = 0; i < HW; ++i) p[i] = g;
      }
    detail::accumulate(xn, gx);
  });
}

// Row-wise standardisation of a [B,D] feature matrix (zero mean, unit
// variance per row, no learned affine). Keeps the magnitude of pooled
// features in a range the heads can learn from at small learning rates.
template <typename T>
Var<T> feature_norm(const Var<T>& x, T eps = T(1e-5)) {
  CQIL_CHECK(x.value().ndim() == 2);
  const size_t B = x.value().dim(0), D = x.value().dim(1);
  CQIL_CHECK(D > 1);
  Tensor<T> y({B, D});
  auto inv_sigma = std::make_shared<Tensor<T>>(std::vector<size_t>{B});
  for (size_t b = 0; b < B; ++b) {
    const T* xp = x.value().data() + b * D;
    double mu = 0;
    for (size_t i = 0; i < D; ++i) mu += xp[i];
    mu /= D;
    double var = 0;
    for (size_t i = 0; i < D; ++i) {
      const double d = xp[i] - mu;
      var += d * d;
    }
    var /= D;
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*inv_sigma)[b] = inv;
    for (size_t i = 0; i < D; ++i)
      y.at2(b, i) = static_cast<T>((xp[i] - mu) * inv);
  }
  auto xn = x.node();
  auto yc = std::make_shared<Tensor<T>>(y);
  return make_op<T>(std::move(y), {x}, [xn, yc, inv_sigma, B, D](Node<T>& n) {
    if (!xn->requires_grad) return;
    Tensor<T> gx({B, D});
    for (size_t b = 0; b < B; ++b) {
      const T* g = n.grad.data() + b * D;
      const T* yv = yc->data() + b * D;
      double gmean = 0, gymean = 0;
      for (size_t i = 0; i < D; ++i) {
        gmean += g[i];
        gymean += static_cast<double>(g[i]) * yv[i];
      }
      gmean /= D;
      gymean /= D;
      const T inv = (*inv_sigma)[b];
      for (size_t i = 0; i < D; ++i)
        gx.at2(b, i) = static_cast<T>(
            inv * (g[i] - gmean - yv[i] * gymean));
    }
    detail::accumulate(xn, gx);
  });
}

// Mean softmax cross-entropy. logits:[B,N], labels in {0..N-1}.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  CQIL_CHECK(logits.value().ndim() == 2);
  const size_t B = logits.value().dim(0), N = logits.value().dim(1);
  CQIL_CHECK_MSG(labels.size() == B, "label count mismatch");
  for (int y : labels)
    CQIL_CHECK_MSG(y >= 0 && y < static_cast<int>(N), "label " << y << " out of range");

  double total = 0.0;
  auto softmax = std::make_shared<Tensor<T>>(std::vector<size_t>{B, N});
  for (size_t b = 0; b < B; ++b) {
    const T* l = logits.value().data() + b * N;
    T m = l[0];
    for (size_t j = 1; j < N; ++j) m = std::max(m, l[j]);
    double z = 0.0;
    for (size_t j = 0; j < N; ++j) z += std::exp(static_cast<double>(l[j] - m));
    double lse = static_cast<double>(m) + std::log(z);
    total += lse - static_cast<double>(l[labels[b]]);
    for (size_t j = 0; j < N; ++j)
      softmax->at2(b, j) = static_cast<T>(std::exp(static_cast<double>(l[j]) - lse));
  }
  Tensor<T> v = Tensor<T>::scalar(static_cast<T>(total / B));
  auto ln = logits.node();
  return make_op<T>(std::move(v), {logits}, [ln, softmax, labels, B, N](Node<T>& n) {
    if (!ln->requires_grad) return;
    Tensor<T> g({B, N});
    const T scale = n.grad[0] / static_cast<T>(B);
    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < N; ++j) {
        T p = softmax->at2(b, j);
        if (static_cast<int>(j) == labels[b]) p -= T(1);
        g.at2(b, j) = p * scale;
      }
    detail::accumulate(ln, g);
  });
}

// (1/n) * sum (pred - target)^2 over every element.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  CQIL_CHECK_MSG(pred.value().same_shape(target.value()), "mse_loss: shape mismatch");
  const size_t n = pred.value().numel();
  CQIL_CHECK(n > 0);
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
    s += d * d;
  }
  Tensor<T> v = Tensor<T>::scalar(static_cast<T>(s / n));
  auto pn = pred.node(), tn = target.node();
  return make_op<T>(std::move(v), {pred, target}, [pn, tn, n](Node<T>& nd) {
    const T c = nd.grad[0] * T(2) / static_cast<T>(n);
    if (pn->requires_grad) {
      Tensor<T> g(pn->value.shape());
      for (size_t i = 0; i < n; ++i) g[i] = c * (pn->value[i] - tn->value[i]);
      detail::accumulate(pn, g);
    }
    if (tn->requires_grad) {
      Tensor<T> g(tn->value.shape());
      for (size_t i = 0; i < n; ++i) g[i] = c * (tn->value[i] - pn->value[i]);
      detail::accumulate(tn, g);
    }
  });
}

template <typename T>
double mse_value(const Tensor<T>& a, const Tensor<T>& b) {
  CQIL_CHECK_MSG(a.same_shape(b), "mse: shape mismatch");
  CQIL_CHECK(a.numel() > 0);
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / a.numel();
}

}  // namespace cqil
