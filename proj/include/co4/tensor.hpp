#pragma once
// Dense row-major arrays plus a define-by-run reverse-mode tape.
//
// The Graph owns all nodes of one forward pass; Tensor is a cheap handle
// (graph pointer + node id). Parameters live outside the graph as plain
// Array values and are re-inserted as leaves each pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "co4/common.hpp"

namespace co4 {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  Array(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw DimError("Array: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }

  std::size_t size() const { return data.size(); }

  static Array zeros(Shape s) { return Array(std::move(s)); }
  static Array full(Shape s, T v) {
    Array a(std::move(s));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
  }
  static Array randn(Shape s, Rng& rng, double stddev) {
    Array a(std::move(s));
    for (auto& x : a.data) x = static_cast<T>(rng.normal() * stddev);
    return a;
  }

  template <class U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// numpy trailing-dimension broadcast
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimError("shapes not broadcastable: " + shape_str(a) + " vs " +
                     shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// strides of `s` viewed as shape `out` (0 on broadcast dims)
inline std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
  auto nat = row_major_strides(s);
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t off = out.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : nat[i];
  return st;
}

// Odometer walk over `out`, calling f(offset_a, offset_b) per element in
// row-major order.
template <class F>
void for_each_pair(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& f) {
  std::size_t total = shape_numel(out);
  if (total == 0) return;
  std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t n = 0;;) {
    f(oa, ob);
    if (++n == total) break;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

template <class T>
class Graph;

template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* g, std::size_t id) : g_(g), id_(id) {}

  Graph<T>* graph() const { return g_; }
  std::size_t id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

  const Shape& shape() const { return g_->node(id_).shape; }
  const std::vector<T>& value() const { return g_->node(id_).value; }
  const std::vector<T>& grad() const { return g_->node(id_).grad; }
  bool requires_grad() const { return g_->node(id_).requires_grad; }
  std::size_t numel() const { return value().size(); }

  Array<T> to_array() const { return Array<T>(shape(), value()); }

 private:
  Graph<T>* g_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;  // empty for leaves/constants
  };

  // When false, no backward closures are recorded (forward-only mode).
  bool recording = true;
  // Every forward op checks its output for NaN/Inf unless disabled.
  bool check_finite = true;
  // Raised by softmax when a row is fully masked.
  int degenerate_mask_rows = 0;

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  Tensor<T> leaf(const Array<T>& a, bool requires_grad = false) {
    return make(a.shape, a.data, requires_grad && recording);
  }
  Tensor<T> constant(Array<T> a) {
    return make(std::move(a.shape), std::move(a.data), false);
  }
  Tensor<T> scalar(T v) { return make(Shape{}, std::vector<T>{v}, false); }

  Tensor<T> make(Shape shape, std::vector<T> value, bool requires_grad) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, nodes_.size() - 1);
  }

  void set_backward(std::size_t id, std::function<void()> fn) {
    nodes_[id].backward = std::move(fn);
  }

  // Reverse sweep from a scalar loss. Visits every recorded op once, in
  // reverse topological (= creation) order.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw InputError("backward: loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad.assign(n.value.size(), T(0));
    Node& ln = nodes_[loss.id()];
    if (!ln.requires_grad)
      throw InputError("backward: loss does not depend on any learnable leaf");
    ln.grad.assign(1, T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (nodes_[i].backward && nodes_[i].requires_grad) nodes_[i].backward();
    }
  }

  void throw_if_nonfinite(const Tensor<T>& t, const char* op) const {
    if (!check_finite) return;
    for (T v : t.value())
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string(op) + ": non-finite output");
  }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

template <class T>
void accumulate_reduced(const std::vector<T>& src, const Shape& src_shape,
                        std::vector<T>& dst, const Shape& dst_shape) {
  // dst has a shape broadcastable to src_shape; sum src into it.
  auto ss = row_major_strides(src_shape);
  auto ds = bcast_strides(dst_shape, src_shape);
  for_each_pair(src_shape, ss, ds,
                [&](std::size_t so, std::size_t do_) { dst[do_] += src[so]; });
}

// C(m,n) += or = A(m,k) * B(k,n)
template <class T>
void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
           std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      T av = a[i * k + l];
      if (av == T(0)) continue;
      const T* br = b + l * n;
      T* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
template <class T>
void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
           std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      const T* ar = a + i * k;
      const T* br = b + j * k;
      for (std::size_t l = 0; l < k; ++l) s += ar[l] * br[l];
      c[i * n + j] += s;
    }
}

// C(m,n) += A(k,m)^T * B(k,n)
template <class T>
void mm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
           std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, T(0));
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < m; ++i) {
      T av = a[l * m + i];
      if (av == T(0)) continue;
      const T* br = b + l * n;
      T* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <class T, class FwdF, class BwdA, class BwdB>
Tensor<T> ew_binary(Tensor<T> a, Tensor<T> b, const char* name, FwdF fwd,
                    BwdA dfa, BwdB dfb) {
  Graph<T>* g = a.graph();
  Shape out_shape = detail::broadcast_shapes(a.shape(), b.shape());
  auto sa = detail::bcast_strides(a.shape(), out_shape);
  auto sb = detail::bcast_strides(b.shape(), out_shape);
  std::vector<T> out(shape_numel(out_shape));
  const auto& av = a.value();
  const auto& bv = b.value();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    std::size_t i = 0;
    detail::for_each_pair(out_shape, sa, sb, [&](std::size_t oa, std::size_t ob) {
      out[i++] = fwd(av[oa], bv[ob]);
    });
  }
  bool rg = g->recording && (a.requires_grad() || b.requires_grad());
  Tensor<T> c = g->make(out_shape, std::move(out), rg);
  g->throw_if_nonfinite(c, name);
  if (rg) {
    std::size_t aid = a.id(), bid = b.id(), cid = c.id();
    g->set_backward(cid, [g, aid, bid, cid, sa, sb, out_shape, dfa, dfb]() {
      auto& an = g->node(aid);
      auto& bn = g->node(bid);
      auto& cn = g->node(cid);
      std::size_t i = 0;
      detail::for_each_pair(out_shape, sa, sb, [&](std::size_t oa, std::size_t ob) {
        T gu = cn.grad[i];
        if (an.requires_grad) an.grad[oa] += gu * dfa(an.value[oa], bn.value[ob]);
        if (bn.requires_grad) bn.grad[ob] += gu * dfb(an.value[oa], bn.value[ob]);
        ++i;
      });
    });
  }
  return c;
}

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  return ew_binary(a, b, "add", [](T x, T y) { return x + y; },
                   [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  return ew_binary(a, b, "sub", [](T x, T y) { return x - y; },
                   [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  return ew_binary(a, b, "mul", [](T x, T y) { return x * y; },
                   [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(Tensor<T> a, Tensor<T> b) {
  return ew_binary(a, b, "div", [](T x, T y) { return x / y; },
                   [](T, T y) { return T(1) / y; },
                   [](T x, T y) { return -x / (y * y); });
}

template <class T, class FwdF, class BwdF>
Tensor<T> ew_unary(Tensor<T> a, const char* name, FwdF fwd, BwdF bwd) {
  Graph<T>* g = a.graph();
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(a.shape(), std::move(out), rg);
  g->throw_if_nonfinite(c, name);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    g->set_backward(cid, [g, aid, cid, bwd]() {
      auto& an = g->node(aid);
      auto& cn = g->node(cid);
      for (std::size_t i = 0; i < cn.grad.size(); ++i)
        an.grad[i] += cn.grad[i] * bwd(an.value[i], cn.value[i]);
    });
  }
  return c;
}

template <class T>
Tensor<T> tanh(Tensor<T> a) {
  return ew_unary(a, "tanh", [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp(Tensor<T> a) {
  return ew_unary(a, "exp", [](T x) { return std::exp(x); },
                  [](T, T y) { return y; });
}

template <class T>
Tensor<T> sqrt(Tensor<T> a) {
  return ew_unary(a, "sqrt", [](T x) { return std::sqrt(x); },
                  [](T, T y) { return T(1) / (T(2) * y); });
}

template <class T>
Tensor<T> scale(Tensor<T> a, double c) {
  T cc = static_cast<T>(c);
  return ew_unary(a, "scale", [cc](T x) { return x * cc; },
                  [cc](T, T) { return cc; });
}

template <class T>
Tensor<T> add_scalar(Tensor<T> a, double c) {
  T cc = static_cast<T>(c);
  return ew_unary(a, "add_scalar", [cc](T x) { return x + cc; },
                  [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Tensor<T> reshape(Tensor<T> a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                   shape_str(shape));
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(std::move(shape), a.value(), rg);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    g->set_backward(cid, [g, aid, cid]() {
      auto& an = g->node(aid);
      auto& cn = g->node(cid);
      for (std::size_t i = 0; i < cn.grad.size(); ++i) an.grad[i] += cn.grad[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> permute(Tensor<T> a, const std::vector<std::size_t>& axes) {
  const Shape& sh = a.shape();
  if (axes.size() != sh.size())
    throw DimError("permute: axes rank mismatch for " + shape_str(sh));
  Shape out_shape(sh.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = sh[axes[i]];
  auto src_st = detail::row_major_strides(sh);
  std::vector<std::size_t> st(sh.size());
  for (std::size_t i = 0; i < axes.size(); ++i) st[i] = src_st[axes[i]];
  auto ident = detail::row_major_strides(out_shape);
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  detail::for_each_pair(out_shape, ident, st,
                        [&](std::size_t o, std::size_t s) { out[o] = av[s]; });
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(out_shape, std::move(out), rg);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    g->set_backward(cid, [g, aid, cid, out_shape, ident, st]() {
      auto& an = g->node(aid);
      auto& cn = g->node(cid);
      detail::for_each_pair(out_shape, ident, st, [&](std::size_t o, std::size_t s) {
        an.grad[s] += cn.grad[o];
      });
    });
  }
  return c;
}

template <class T>
Tensor<T> broadcast_to(Tensor<T> a, const Shape& shape) {
  Shape chk = detail::broadcast_shapes(a.shape(), shape);
  if (chk != shape)
    throw DimError("broadcast_to: " + shape_str(a.shape()) + " -> " +
                   shape_str(shape));
  auto sa = detail::bcast_strides(a.shape(), shape);
  auto ident = detail::row_major_strides(shape);
  std::vector<T> out(shape_numel(shape));
  const auto& av = a.value();
  detail::for_each_pair(shape, ident, sa,
                        [&](std::size_t o, std::size_t s) { out[o] = av[s]; });
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(shape, std::move(out), rg);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    Shape ash = a.shape();
    g->set_backward(cid, [g, aid, cid, shape, ash]() {
      detail::accumulate_reduced(g->node(cid).grad, shape, g->node(aid).grad, ash);
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Tensor<T> sum_axis(Tensor<T> a, std::size_t axis, bool keepdim = true) {
  const Shape& sh = a.shape();
  if (axis >= sh.size())
    throw DimError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                   shape_str(sh));
  Shape red = sh;
  red[axis] = 1;
  auto ident = detail::row_major_strides(sh);
  auto sr = detail::bcast_strides(red, sh);
  std::vector<T> out(shape_numel(red), T(0));
  const auto& av = a.value();
  detail::for_each_pair(sh, ident, sr,
                        [&](std::size_t s, std::size_t o) { out[o] += av[s]; });
  Shape out_shape = red;
  if (!keepdim) out_shape.erase(out_shape.begin() + axis);
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(out_shape, std::move(out), rg);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    g->set_backward(cid, [g, aid, cid, sh, ident, sr]() {
      auto& an = g->node(aid);
      auto& cn = g->node(cid);
      detail::for_each_pair(sh, ident, sr, [&](std::size_t s, std::size_t o) {
        an.grad[s] += cn.grad[o];
      });
    });
  }
  return c;
}

template <class T>
Tensor<T> mean_axis(Tensor<T> a, std::size_t axis, bool keepdim = true) {
  std::size_t n = a.shape()[axis];
  return scale(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

template <class T>
Tensor<T> sum_all(Tensor<T> a) {
  T s = 0;
  for (T v : a.value()) s += v;
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(Shape{}, std::vector<T>{s}, rg);
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    g->set_backward(cid, [g, aid, cid]() {
      auto& an = g->node(aid);
      T gu = g->node(cid).grad[0];
      for (auto& x : an.grad) x += gu;
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// matmul (batched, leading dims broadcast)

template <class T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  const Shape& ash = a.shape();
  const Shape& bsh = b.shape();
  if (ash.size() < 2 || bsh.size() < 2)
    throw DimError("matmul: operands must have rank >= 2, got " +
                   shape_str(ash) + " and " + shape_str(bsh));
  std::size_t m = ash[ash.size() - 2], k = ash[ash.size() - 1];
  std::size_t k2 = bsh[bsh.size() - 2], n = bsh[bsh.size() - 1];
  if (k != k2)
    throw DimError("matmul: inner extents differ: " + shape_str(ash) + " x " +
                   shape_str(bsh));
  Shape abatch(ash.begin(), ash.end() - 2), bbatch(bsh.begin(), bsh.end() - 2);
  Shape batch = detail::broadcast_shapes(abatch, bbatch);
  auto sa = detail::bcast_strides(abatch, batch);  // in matrices
  auto sb = detail::bcast_strides(bbatch, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(shape_numel(out_shape));
  const T* ap = a.value().data();
  const T* bp = b.value().data();
  T* cp = out.data();
  std::size_t ci = 0;
  detail::for_each_pair(batch, sa, sb, [&](std::size_t oa, std::size_t ob) {
    detail::mm_nn(ap + oa * m * k, bp + ob * k * n, cp + ci * m * n, m, k, n,
                  false);
    ++ci;
  });
  Graph<T>* g = a.graph();
  bool rg = g->recording && (a.requires_grad() || b.requires_grad());
  Tensor<T> c = g->make(out_shape, std::move(out), rg);
  g->throw_if_nonfinite(c, "matmul");
  if (rg) {
    std::size_t aid = a.id(), bid = b.id(), cid = c.id();
    bool a_bcast = abatch != batch, b_bcast = bbatch != batch;
    g->set_backward(cid, [g, aid, bid, cid, batch, sa, sb, m, k, n, a_bcast,
                          b_bcast]() {
      auto& an = g->node(aid);
      auto& bn = g->node(bid);
      auto& cn = g->node(cid);
      const T* gp = cn.grad.data();
      std::size_t ci2 = 0;
      detail::for_each_pair(batch, sa, sb, [&](std::size_t oa, std::size_t ob) {
        const T* gc = gp + ci2 * m * n;
        // dA = dC * B^T; accumulate when A's batch is broadcast or always
        if (an.requires_grad)
          detail::mm_nt(gc, bn.value.data() + ob * k * n, an.grad.data() + oa * m * k,
                        m, n, k, true);
        if (bn.requires_grad)
          detail::mm_tn(an.value.data() + oa * m * k, gc, bn.grad.data() + ob * k * n,
                        k, m, n, true);
        ++ci2;
      });
      (void)a_bcast;
      (void)b_bcast;
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, optional additive mask

inline constexpr double kMaskSentinel = -1e9;

template <class T>
Tensor<T> softmax_lastdim(Tensor<T> x, std::optional<Tensor<T>> mask = {}) {
  Graph<T>* g = x.graph();
  Tensor<T> z = mask ? add(x, *mask) : x;
  const Shape& sh = z.shape();
  std::size_t w = sh.empty() ? 1 : sh.back();
  if (w == 0) throw DimError("softmax_lastdim: empty last dimension");
  std::size_t rows = z.numel() / w;
  std::vector<T> out(z.numel());
  const auto& zv = z.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = zv.data() + r * w;
    T mx = row[0];
    for (std::size_t j = 1; j < w; ++j) mx = std::max(mx, row[j]);
    if (static_cast<double>(mx) <= kMaskSentinel / 2) {
      // fully masked row: fall back to uniform and flag it
      ++g->degenerate_mask_rows;
      for (std::size_t j = 0; j < w; ++j)
        out[r * w + j] = static_cast<T>(1.0 / static_cast<double>(w));
      continue;
    }
    T s = 0;
    for (std::size_t j = 0; j < w; ++j) {
      T e = std::exp(row[j] - mx);
      out[r * w + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] /= s;
  }
  bool rg = g->recording && z.requires_grad();
  Tensor<T> y = g->make(sh, std::move(out), rg);
  g->throw_if_nonfinite(y, "softmax_lastdim");
  if (rg) {
    std::size_t zid = z.id(), yid = y.id();
    g->set_backward(yid, [g, zid, yid, w, rows]() {
      auto& zn = g->node(zid);
      auto& yn = g->node(yid);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yv = yn.value.data() + r * w;
        const T* gy = yn.grad.data() + r * w;
        T dot = 0;
        for (std::size_t j = 0; j < w; ++j) dot += yv[j] * gy[j];
        for (std::size_t j = 0; j < w; ++j)
          zn.grad[r * w + j] += yv[j] * (gy[j] - dot);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// cumulative sum along an axis; backward is the reversed cumulative sum

template <class T>
Tensor<T> cumsum(Tensor<T> a, std::size_t axis) {
  const Shape& sh = a.shape();
  if (axis >= sh.size())
    throw DimError("cumsum: axis " + std::to_string(axis) + " out of range for " +
                   shape_str(sh));
  auto st = detail::row_major_strides(sh);
  std::size_t n = sh[axis], stride = st[axis];
  std::vector<T> out = a.value();
  // enumerate lane base offsets via odometer over the reduced shape
  Shape lanes = sh;
  lanes[axis] = 1;
  auto lane_ident = detail::row_major_strides(lanes);
  std::vector<std::size_t> base_strides(lanes.size());
  for (std::size_t i = 0; i < lanes.size(); ++i) base_strides[i] = st[i];
  detail::for_each_pair(lanes, base_strides, lane_ident,
                        [&](std::size_t base, std::size_t) {
                          for (std::size_t i = 1; i < n; ++i)
                            out[base + i * stride] += out[base + (i - 1) * stride];
                        });
  Graph<T>* g = a.graph();
  bool rg = g->recording && a.requires_grad();
  Tensor<T> c = g->make(sh, std::move(out), rg);
  g->throw_if_nonfinite(c, "cumsum");
  if (rg) {
    std::size_t aid = a.id(), cid = c.id();
    auto lane_ident2 = lane_ident;
    g->set_backward(cid, [g, aid, cid, lanes, base_strides, lane_ident2, n,
                          stride]() {
      auto& an = g->node(aid);
      auto& cn = g->node(cid);
      detail::for_each_pair(lanes, base_strides, lane_ident2,
                            [&](std::size_t base, std::size_t) {
                              T acc = 0;
                              for (std::size_t i = n; i-- > 0;) {
                                acc += cn.grad[base + i * stride];
                                an.grad[base + i * stride] += acc;
                              }
                            });
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// embedding lookup (row gather with scatter-add backward)

template <class T>
Tensor<T> embedding_lookup(Tensor<T> table, const std::vector<int>& ids) {
  const Shape& sh = table.shape();
  if (sh.size() != 2) throw DimError("embedding_lookup: table must be 2-d");
  std::size_t v = sh[0], e = sh[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  std::vector<T> out(ids.size() * e);
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.begin() + ids[i] * e, tv.begin() + (ids[i] + 1) * e,
              out.begin() + i * e);
  Graph<T>* g = table.graph();
  bool rg = g->recording && table.requires_grad();
  Tensor<T> c = g->make(Shape{ids.size(), e}, std::move(out), rg);
  if (rg) {
    std::size_t tid = table.id(), cid = c.id();
    g->set_backward(cid, [g, tid, cid, ids, e]() {
      auto& tn = g->node(tid);
      auto& cn = g->node(cid);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < e; ++j)
          tn.grad[ids[i] * e + j] += cn.grad[i * e + j];
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// causal latent summary: per lane, a running (online-softmax) average of V
// rows weighted by exp(scores), restricted to the prefix. scores (..., N),
// v (..., N, E) -> r (..., N, E) with
//   r(n) = sum_{m<=n} softmax_{m<=n}(s)_m * v(m).
// The scan keeps a running log-sum-exp so no global max over future
// positions is ever consulted; outputs at n are therefore bit-independent
// of anything after n.

template <class T>
Tensor<T> causal_latent_summary(Tensor<T> scores, Tensor<T> v) {
  const Shape& ssh = scores.shape();
  const Shape& vsh = v.shape();
  if (vsh.size() != ssh.size() + 1 ||
      !std::equal(ssh.begin(), ssh.end(), vsh.begin()) )
    throw DimError("causal_latent_summary: scores " + shape_str(ssh) +
                   " incompatible with v " + shape_str(vsh));
  std::size_t n = ssh.empty() ? 1 : ssh.back();
  std::size_t e = vsh.back();
  if (vsh[vsh.size() - 2] != n)
    throw DimError("causal_latent_summary: sequence extents differ");
  std::size_t lanes = scores.numel() / n;
  std::vector<T> out(v.numel());
  auto lse = std::make_shared<std::vector<T>>(scores.numel());  // saved for backward
  const auto& sv = scores.value();
  const auto& vv = v.value();
  for (std::size_t b = 0; b < lanes; ++b) {
    const T* s = sv.data() + b * n;
    const T* vb = vv.data() + b * n * e;
    T* rb = out.data() + b * n * e;
    T* ab = lse->data() + b * n;
    T a = s[0];  // running log-sum-exp of s[0..m]
    ab[0] = a;
    std::copy(vb, vb + e, rb);  // r(0) = v(0)
    for (std::size_t m = 1; m < n; ++m) {
      T hi = std::max(a, s[m]), lo = std::min(a, s[m]);
      T a2 = hi + std::log1p(std::exp(lo - hi));
      T keep = std::exp(a - a2);      // weight of the old average
      T wnew = std::exp(s[m] - a2);   // weight of the new row
      const T* vm = vb + m * e;
      const T* rp = rb + (m - 1) * e;
      T* rc = rb + m * e;
      for (std::size_t j = 0; j < e; ++j) rc[j] = keep * rp[j] + wnew * vm[j];
      a = a2;
      ab[m] = a;
    }
  }
  Graph<T>* g = scores.graph();
  bool rg = g->recording && (scores.requires_grad() || v.requires_grad());
  Tensor<T> r = g->make(vsh, std::move(out), rg);
  g->throw_if_nonfinite(r, "causal_latent_summary");
  if (rg) {
    std::size_t sid = scores.id(), vid = v.id(), rid = r.id();
    g->set_backward(rid, [g, sid, vid, rid, lse, lanes, n, e]() {
      auto& sn = g->node(sid);
      auto& vn = g->node(vid);
      auto& rn = g->node(rid);
      // Suffix scans at the running-lse scale. With A(m) = lse(s[0..m]):
      //   dV(m)  = exp(s_m - A(m)) * S(m),  S(m) = gbar(m) + exp(A(m)-A(m+1)) S(m+1)
      //   ds(m)  = exp(s_m - A(m)) * (V(m).S(m) - Tq(m)),
      //   Tq(m)  = gbar(m).r(m) + exp(A(m)-A(m+1)) Tq(m+1)
      // A is nondecreasing, so every exponent here is <= 0.
      std::vector<T> svec(e);
      for (std::size_t b = 0; b < lanes; ++b) {
        const T* s = sn.value.data() + b * n;
        const T* ab = lse->data() + b * n;
        const T* vb = vn.value.data() + b * n * e;
        const T* rb = rn.value.data() + b * n * e;
        const T* gb = rn.grad.data() + b * n * e;
        std::fill(svec.begin(), svec.end(), T(0));
        T tq = 0;
        for (std::size_t m = n; m-- > 0;) {
          T decay = (m + 1 < n) ? std::exp(ab[m] - ab[m + 1]) : T(0);
          const T* gm = gb + m * e;
          const T* rm = rb + m * e;
          const T* vm = vb + m * e;
          T gr = 0;
          for (std::size_t j = 0; j < e; ++j) {
            svec[j] = gm[j] + decay * svec[j];
            gr += gm[j] * rm[j];
          }
          tq = gr + decay * tq;
          T w = std::exp(s[m] - ab[m]);
          if (vn.requires_grad) {
            T* dv = vn.grad.data() + b * n * e + m * e;
            for (std::size_t j = 0; j < e; ++j) dv[j] += w * svec[j];
          }
          if (sn.requires_grad) {
            T vs = 0;
            for (std::size_t j = 0; j < e; ++j) vs += vm[j] * svec[j];
            sn.grad[b * n + m] += w * (vs - tq);
          }
        }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// masked mean cross-entropy over rows of (N, V) logits

template <class T>
Tensor<T> masked_cross_entropy(Tensor<T> logits, const std::vector<int>& targets,
                               const std::vector<char>& mask) {
  const Shape& sh = logits.shape();
  if (sh.size() != 2) throw DimError("masked_cross_entropy: logits must be 2-d");
  std::size_t rows = sh[0], v = sh[1];
  if (targets.size() != rows || mask.size() != rows)
    throw DimError("masked_cross_entropy: targets/mask length mismatch");
  std::size_t cnt = 0;
  for (char m : mask) cnt += (m != 0);
  if (cnt == 0) throw InputError("masked_cross_entropy: all positions masked");
  const auto& lv = logits.value();
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw IndexError("masked_cross_entropy: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(v) + ")");
    const T* row = lv.data() + r * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    loss += (mx + std::log(s)) - row[t];
  }
  loss /= static_cast<T>(cnt);
  Graph<T>* g = logits.graph();
  bool rg = g->recording && logits.requires_grad();
  Tensor<T> c = g->make(Shape{}, std::vector<T>{loss}, rg);
  g->throw_if_nonfinite(c, "masked_cross_entropy");
  if (rg) {
    std::size_t lid = logits.id(), cid = c.id();
    g->set_backward(cid, [g, lid, cid, targets, mask, rows, v, cnt]() {
      auto& ln = g->node(lid);
      T gu = g->node(cid).grad[0] / static_cast<T>(cnt);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const T* row = ln.value.data() + r * v;
        T* gr = ln.grad.data() + r * v;
        T mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < v; ++j)
          gr[j] += gu * (std::exp(row[j] - mx) / s);
        gr[targets[r]] -= gu;
      }
    });
  }
  return c;
}

// ---------------------------------------------------------------------------
// inverted dropout (training only; mask drawn from the given rng)

template <class T>
Tensor<T> apply_dropout(Tensor<T> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  Array<T> m(x.shape());
  double keep = 1.0 - rate;
  for (auto& v : m.data)
    v = rng.uniform() < keep ? static_cast<T>(1.0 / keep) : T(0);
  return mul(x, x.graph()->constant(std::move(m)));
}

}  // namespace co4
