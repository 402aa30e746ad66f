#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "cqil/common.hpp"
#include "cqil/tensor.hpp"

namespace cqil {

// Reverse-mode autodiff over Tensor<T>. Graphs are built define-by-run; a
// node's backward closure accumulates into its parents' grad buffers.
// Parameters are long-lived leaf Vars; op nodes live only as long as the
// loss Var that references them.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor<T>(value.shape());
      grad_alloc = true;
    }
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }

  static Var param(Tensor<T> v) { return Var(std::move(v), true); }
  static Var constant(Tensor<T> v) { return Var(std::move(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  void zero_grad() {
    if (node_->grad_alloc) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& p, const Tensor<T>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  CQIL_CHECK(p->grad.same_shape(g));
  for (size_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
}

template <typename T>
bool any_requires_grad(const std::vector<Var<T>>& vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

}  // namespace detail

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  bool rg = detail::any_requires_grad(inputs);
  Var<T> out(std::move(value), rg);
  if (rg) {
    for (auto& v : inputs) out.node()->parents.push_back(v.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Runs backpropagation from a scalar loss. Parent grads accumulate, so call
// zero_grad on parameters between steps.
template <typename T>
void backward(const Var<T>& loss) {
  CQIL_CHECK_MSG(loss.value().numel() == 1, "backward needs a scalar loss");
  CQIL_CHECK_MSG(loss.requires_grad(), "loss does not depend on any parameter");

  // Iterative post-order topological sort.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---- elementwise / scalar ops ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  CQIL_CHECK(a.value().same_shape(b.value()));
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value() + b.value(), {a, b}, [an, bn](Node<T>& n) {
    detail::accumulate(an, n.grad);
    detail::accumulate(bn, n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  CQIL_CHECK(a.value().same_shape(b.value()));
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value() - b.value(), {a, b}, [an, bn](Node<T>& n) {
    detail::accumulate(an, n.grad);
    if (bn->requires_grad) {
      Tensor<T> neg = n.grad * T(-1);
      detail::accumulate(bn, neg);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto an = a.node();
  return make_op<T>(a.value() * s, {a}, [an, s](Node<T>& n) {
    if (an->requires_grad) {
      Tensor<T> g = n.grad * s;
      detail::accumulate(an, g);
    }
  });
}

// Identity forward; upstream gradient is the downstream gradient times
// -lambda. lambda == 0 blocks the gradient entirely.
template <typename T>
Var<T> gradient_reversal(const Var<T>& a, T lambda) {
  auto an = a.node();
  return make_op<T>(a.value(), {a}, [an, lambda](Node<T>& n) {
    if (an->requires_grad) {
      Tensor<T> g = n.grad * (-lambda);
      detail::accumulate(an, g);
    }
  });
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const size_t n = a.value().numel();
  CQIL_CHECK(n > 0);
  Tensor<T> v = Tensor<T>::scalar(a.value().sum() / static_cast<T>(n));
  auto an = a.node();
  return make_op<T>(std::move(v), {a}, [an, n](Node<T>& nd) {
    if (!an->requires_grad) return;
    Tensor<T> g(an->value.shape(), nd.grad[0] / static_cast<T>(n));
    detail::accumulate(an, g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> v = a.value();
  for (size_t i = 0; i < v.numel(); ++i) v[i] = std::max(v[i], T(0));
  auto an = a.node();
  return make_op<T>(std::move(v), {a}, [an](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T> g = n.grad;
    for (size_t i = 0; i < g.numel(); ++i)
      if (an->value[i] <= T(0)) g[i] = T(0);
    detail::accumulate(an, g);
  });
}

// Concatenates two [B, C] feature matrices along the feature dimension.
template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b) {
  CQIL_CHECK(a.value().ndim() == 2 && b.value().ndim() == 2);
  CQIL_CHECK(a.value().dim(0) == b.value().dim(0));
  const size_t rows = a.value().dim(0);
  const size_t ca = a.value().dim(1), cb = b.value().dim(1);
  Tensor<T> v({rows, ca + cb});
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < ca; ++c) v.at2(r, c) = a.value().at2(r, c);
    for (size_t c = 0; c < cb; ++c) v.at2(r, ca + c) = b.value().at2(r, c);
  }
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(v), {a, b}, [an, bn, rows, ca, cb](Node<T>& n) {
    if (an->requires_grad) {
      Tensor<T> ga({rows, ca});
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < ca; ++c) ga.at2(r, c) = n.grad.at2(r, c);
      detail::accumulate(an, ga);
    }
    if (bn->requires_grad) {
      Tensor<T> gb({rows, cb});
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cb; ++c) gb.at2(r, c) = n.grad.at2(r, ca + c);
      detail::accumulate(bn, gb);
    }
  });
}

}  // namespace cqil
