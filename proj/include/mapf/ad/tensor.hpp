#pragma once

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapf::ad {

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using MatMap = Eigen::Map<
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), int64_t{1},
                         std::multiplies<int64_t>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeMismatch : public std::runtime_error {
 public:
  ShapeMismatch(const std::string& op, const Shape& a, const Shape& b)
      : std::runtime_error(op + ": incompatible shapes " + shape_str(a) +
                           " vs " + shape_str(b)) {}
};

template <class S>
struct Node {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // allocated on first touch during backward
  std::function<void(Node<S>&)> backprop;

  bool has_grad() const { return grad.size() == value.size(); }
  void ensure_grad() {
    if (!has_grad()) grad = ArrayX<S>::Zero(value.size());
  }
};

/// Append-only record of the forward pass; backward walks it once in
/// reverse, accumulating gradients additively on fan-out.
template <class S>
class Tape {
 public:
  Node<S>* emplace(Shape shape, ArrayX<S> value) {
    auto n = std::make_unique<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
  }

  void backward(Node<S>* loss) {
    if (loss->value.size() != 1)
      throw std::runtime_error("backward: loss must be scalar");
    loss->ensure_grad();
    loss->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<S>& n = **it;
      if (n.has_grad() && n.backprop) n.backprop(n);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::deque<std::unique_ptr<Node<S>>> nodes_;
};

/// Cheap handle pairing a node with its tape; all ops below are free
/// functions over Vars.
template <class S>
struct Var {
  Node<S>* node = nullptr;
  Tape<S>* tape = nullptr;

  const Shape& shape() const { return node->shape; }
  const ArrayX<S>& value() const { return node->value; }
  int64_t size() const { return node->value.size(); }
};

template <class S>
Var<S> constant(Tape<S>& tape, Shape shape, ArrayX<S> values) {
  if (numel(shape) != values.size())
    throw ShapeMismatch("constant", shape, {static_cast<int>(values.size())});
  return {tape.emplace(std::move(shape), std::move(values)), &tape};
}

template <class S>
Var<S> scalar(Tape<S>& tape, S v) {
  ArrayX<S> a(1);
  a[0] = v;
  return constant(tape, {1}, std::move(a));
}

namespace detail {

template <class S>
void require_same(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch(op, a.shape(), b.shape());
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same("add", a, b);
  Node<S>* out = a.tape->emplace(a.shape(), a.value() + b.value());
  Node<S>*pa = a.node, *pb = b.node;
  out->backprop = [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    pa->grad += n.grad;
    pb->grad += n.grad;
  };
  return {out, a.tape};
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same("sub", a, b);
  Node<S>* out = a.tape->emplace(a.shape(), a.value() - b.value());
  Node<S>*pa = a.node, *pb = b.node;
  out->backprop = [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    pa->grad += n.grad;
    pb->grad -= n.grad;
  };
  return {out, a.tape};
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same("mul", a, b);
  Node<S>* out = a.tape->emplace(a.shape(), a.value() * b.value());
  Node<S>*pa = a.node, *pb = b.node;
  out->backprop = [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    pa->grad += n.grad * pb->value;
    pb->grad += n.grad * pa->value;
  };
  return {out, a.tape};
}

template <class S>
Var<S> scale(const Var<S>& a, S c) {
  Node<S>* out = a.tape->emplace(a.shape(), a.value() * c);
  Node<S>* pa = a.node;
  out->backprop = [pa, c](Node<S>& n) {
    pa->ensure_grad();
    pa->grad += n.grad * c;
  };
  return {out, a.tape};
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  ArrayX<S> v = a.value().max(S(0)) + a.value().min(S(0)) * slope;
  Node<S>* out = a.tape->emplace(a.shape(), std::move(v));
  Node<S>* pa = a.node;
  out->backprop = [pa, slope](Node<S>& n) {
    pa->ensure_grad();
    pa->grad +=
        n.grad * (pa->value > S(0)).select(ArrayX<S>::Ones(pa->value.size()),
                                           ArrayX<S>::Constant(
                                               pa->value.size(), slope));
  };
  return {out, a.tape};
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  ArrayX<S> v = (S(1) / (S(1) + (-a.value()).exp()));
  Node<S>* out = a.tape->emplace(a.shape(), std::move(v));
  Node<S>* pa = a.node;
  out->backprop = [pa](Node<S>& n) {
    pa->ensure_grad();
    pa->grad += n.grad * n.value * (S(1) - n.value);
  };
  return {out, a.tape};
}

template <class S>
Var<S> tanh(const Var<S>& a) {
  ArrayX<S> v = a.value().tanh();
  Node<S>* out = a.tape->emplace(a.shape(), std::move(v));
  Node<S>* pa = a.node;
  out->backprop = [pa](Node<S>& n) {
    pa->ensure_grad();
    pa->grad += n.grad * (S(1) - n.value * n.value);
  };
  return {out, a.tape};
}

// ---- reductions and broadcasts --------------------------------------------

template <class S>
Var<S> sum_all(const Var<S>& a) {
  ArrayX<S> v(1);
  v[0] = a.value().sum();
  Node<S>* out = a.tape->emplace(Shape{1}, std::move(v));
  Node<S>* pa = a.node;
  out->backprop = [pa](Node<S>& n) {
    pa->ensure_grad();
    pa->grad += n.grad[0];
  };
  return {out, a.tape};
}

template <class S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), S(1) / S(a.size()));
}

/// y_i = x_i + coeff * s[0]; broadcasts a 1-element tensor across x.
template <class S>
Var<S> add_scalar_tensor(const Var<S>& x, const Var<S>& s, S coeff = S(1)) {
  if (s.size() != 1) throw ShapeMismatch("add_scalar_tensor", x.shape(), s.shape());
  Node<S>* out = x.tape->emplace(x.shape(), x.value() + coeff * s.value()[0]);
  Node<S>*px = x.node, *ps = s.node;
  out->backprop = [px, ps, coeff](Node<S>& n) {
    px->ensure_grad();
    ps->ensure_grad();
    px->grad += n.grad;
    ps->grad[0] += coeff * n.grad.sum();
  };
  return {out, x.tape};
}

// ---- linear algebra --------------------------------------------------------

/// x @ W + b. x is [N] or [B,N]; W is [N,M]; b is [M] (optional).
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w,
              const Var<S>* b = nullptr) {
  const bool batched = x.shape().size() == 2;
  const int in = batched ? x.shape()[1] : x.shape()[0];
  const int rows = batched ? x.shape()[0] : 1;
  if (w.shape().size() != 2 || w.shape()[0] != in)
    throw ShapeMismatch("linear", x.shape(), w.shape());
  const int out_dim = w.shape()[1];
  if (b && (b->shape().size() != 1 || b->shape()[0] != out_dim))
    throw ShapeMismatch("linear(bias)", w.shape(), b->shape());

  ConstMatMap<S> xm(x.value().data(), rows, in);
  ConstMatMap<S> wm(w.value().data(), in, out_dim);
  ArrayX<S> v(int64_t(rows) * out_dim);
  MatMap<S> vm(v.data(), rows, out_dim);
  vm.noalias() = xm * wm;
  if (b) vm.rowwise() += ConstMatMap<S>(b->value().data(), 1, out_dim).row(0);

  Shape out_shape = batched ? Shape{rows, out_dim} : Shape{out_dim};
  Node<S>* out = x.tape->emplace(std::move(out_shape), std::move(v));
  Node<S>*px = x.node, *pw = w.node, *pb = b ? b->node : nullptr;
  out->backprop = [px, pw, pb, rows, in, out_dim](Node<S>& n) {
    px->ensure_grad();
    pw->ensure_grad();
    ConstMatMap<S> gy(n.grad.data(), rows, out_dim);
    ConstMatMap<S> xm(px->value.data(), rows, in);
    ConstMatMap<S> wm(pw->value.data(), in, out_dim);
    MatMap<S> gx(px->grad.data(), rows, in);
    MatMap<S> gw(pw->grad.data(), in, out_dim);
    gx.noalias() += gy * wm.transpose();
    gw.noalias() += xm.transpose() * gy;
    if (pb) {
      pb->ensure_grad();
      MatMap<S> gb(pb->grad.data(), 1, out_dim);
      gb.row(0) += gy.colwise().sum();
    }
  };
  return {out, x.tape};
}

template <class S>
Var<S> linear_b(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return linear(x, w, &b);
}

/// Plain matrix product [B,K] x [K,N] -> [B,N].
template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeMismatch("matmul", a.shape(), b.shape());
  return linear(a, b);
}

// ---- shape ops -------------------------------------------------------------

template <class S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  if (numel(shape) != a.size()) throw ShapeMismatch("reshape", a.shape(), shape);
  Node<S>* out = a.tape->emplace(std::move(shape), a.value());
  Node<S>* pa = a.node;
  out->backprop = [pa](Node<S>& n) {
    pa->ensure_grad();
    pa->grad += n.grad;
  };
  return {out, a.tape};
}

/// Concatenation of 1-D tensors.
template <class S>
Var<S> concat(const std::vector<Var<S>>& xs) {
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x.shape().size() != 1)
      throw ShapeMismatch("concat", x.shape(), Shape{-1});
    total += x.size();
  }
  ArrayX<S> v(total);
  int64_t off = 0;
  for (const auto& x : xs) {
    v.segment(off, x.size()) = x.value();
    off += x.size();
  }
  Node<S>* out = xs[0].tape->emplace(Shape{static_cast<int>(total)},
                                     std::move(v));
  std::vector<Node<S>*> parents;
  for (const auto& x : xs) parents.push_back(x.node);
  out->backprop = [parents](Node<S>& n) {
    int64_t off = 0;
    for (Node<S>* p : parents) {
      p->ensure_grad();
      p->grad += n.grad.segment(off, p->value.size());
      off += p->value.size();
    }
  };
  return {out, xs[0].tape};
}

/// Row i of a [B,N] tensor as a 1-D [N] tensor.
template <class S>
Var<S> row(const Var<S>& x, int i) {
  if (x.shape().size() != 2) throw ShapeMismatch("row", x.shape(), {-1, -1});
  const int n = x.shape()[1];
  ArrayX<S> v = x.value().segment(int64_t(i) * n, n);
  Node<S>* out = x.tape->emplace(Shape{n}, std::move(v));
  Node<S>* px = x.node;
  out->backprop = [px, i, n](Node<S>& n_) {
    px->ensure_grad();
    px->grad.segment(int64_t(i) * n, n) += n_.grad;
  };
  return {out, x.tape};
}

/// Single element as a 1-element tensor.
template <class S>
Var<S> select(const Var<S>& x, int i) {
  ArrayX<S> v(1);
  v[0] = x.value()[i];
  Node<S>* out = x.tape->emplace(Shape{1}, std::move(v));
  Node<S>* px = x.node;
  out->backprop = [px, i](Node<S>& n) {
    px->ensure_grad();
    px->grad[i] += n.grad[0];
  };
  return {out, x.tape};
}

// ---- softmax ---------------------------------------------------------------

/// Softmax along the last axis of a 1-D or 2-D tensor.
template <class S>
Var<S> softmax(const Var<S>& a) {
  const int cols =
      a.shape().size() == 2 ? a.shape()[1] : a.shape()[0];
  const int rows = static_cast<int>(a.size() / cols);
  ArrayX<S> v(a.size());
  for (int r = 0; r < rows; ++r) {
    auto seg = a.value().segment(int64_t(r) * cols, cols);
    ArrayX<S> e = (seg - seg.maxCoeff()).exp();
    v.segment(int64_t(r) * cols, cols) = e / e.sum();
  }
  Node<S>* out = a.tape->emplace(a.shape(), std::move(v));
  Node<S>* pa = a.node;
  out->backprop = [pa, rows, cols](Node<S>& n) {
    pa->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      auto y = n.value.segment(int64_t(r) * cols, cols);
      auto gy = n.grad.segment(int64_t(r) * cols, cols);
      const S dot = (y * gy).sum();
      pa->grad.segment(int64_t(r) * cols, cols) += y * (gy - dot);
    }
  };
  return {out, a.tape};
}

// ---- conv2d ----------------------------------------------------------------

/// 2-D convolution, stride 1, symmetric zero padding. x is [B,C,H,W],
/// weight [O,C,kh,kw], bias [O]. Implemented as im2col + matmul per sample.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4 ||
      x.shape()[1] != w.shape()[1])
    throw ShapeMismatch("conv2d", x.shape(), w.shape());
  const int batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2],
            wd = x.shape()[3];
  const int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1;
  if (ho <= 0 || wo <= 0) throw ShapeMismatch("conv2d", x.shape(), w.shape());
  const int cols_rows = cin * kh * kw, cols_cols = ho * wo;

  // captured by value: the backward pass runs this after conv2d returns
  auto im2col = [cin, kh, kw, ho, wo, pad, h, wd](const S* img,
                                                  MatrixX<S>& cols) {
    int row_idx = 0;
    for (int c = 0; c < cin; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j, ++row_idx)
          for (int y = 0; y < ho; ++y) {
            const int sy = y + i - pad;
            for (int xcol = 0; xcol < wo; ++xcol) {
              const int sx = xcol + j - pad;
              cols(row_idx, y * wo + xcol) =
                  (sy >= 0 && sy < h && sx >= 0 && sx < wd)
                      ? img[(c * h + sy) * wd + sx]
                      : S(0);
            }
          }
  };

  ConstMatMap<S> wm(w.value().data(), cout, cols_rows);
  ArrayX<S> v(int64_t(batch) * cout * ho * wo);
  MatrixX<S> cols(cols_rows, cols_cols);
  for (int s = 0; s < batch; ++s) {
    im2col(x.value().data() + int64_t(s) * cin * h * wd, cols);
    MatMap<S> ym(v.data() + int64_t(s) * cout * ho * wo, cout, cols_cols);
    ym.noalias() = wm * cols;
    ym.colwise() +=
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.value().data(),
                                                              cout);
  }

  Node<S>* out = x.tape->emplace(Shape{batch, cout, ho, wo}, std::move(v));
  Node<S>*px = x.node, *pw = w.node, *pb = b.node;
  out->backprop = [=](Node<S>& n) {
    px->ensure_grad();
    pw->ensure_grad();
    pb->ensure_grad();
    ConstMatMap<S> wm(pw->value.data(), cout, cols_rows);
    MatMap<S> gw(pw->grad.data(), cout, cols_rows);
    MatrixX<S> cols(cols_rows, cols_cols);
    for (int s = 0; s < batch; ++s) {
      ConstMatMap<S> gy(n.grad.data() + int64_t(s) * cout * ho * wo, cout,
                        cols_cols);
      im2col(px->value.data() + int64_t(s) * cin * h * wd, cols);
      gw.noalias() += gy * cols.transpose();
      pb->grad += ArrayX<S>(
          Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(
              n.grad.data() + int64_t(s) * cout * ho * wo, cout, cols_cols)
              .rowwise()
              .sum());
      // col2im of wm^T * gy
      MatrixX<S> gcols = wm.transpose() * gy;
      S* gx = px->grad.data() + int64_t(s) * cin * h * wd;
      int row_idx = 0;
      for (int c = 0; c < cin; ++c)
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j, ++row_idx)
            for (int y = 0; y < ho; ++y) {
              const int sy = y + i - pad;
              if (sy < 0 || sy >= h) continue;
              for (int xcol = 0; xcol < wo; ++xcol) {
                const int sx = xcol + j - pad;
                if (sx < 0 || sx >= wd) continue;
                gx[(c * h + sy) * wd + sx] += gcols(row_idx, y * wo + xcol);
              }
            }
    }
  };
  return {out, x.tape};
}

// ---- losses ----------------------------------------------------------------

/// Mean of w_i * (pred_i - target_i)^2; target and weights are constants.
template <class S>
Var<S> weighted_mse(const Var<S>& pred, const ArrayX<S>& target,
                    const ArrayX<S>& weights) {
  if (pred.size() != target.size() || pred.size() != weights.size())
    throw ShapeMismatch("weighted_mse", pred.shape(),
                        {static_cast<int>(target.size())});
  ArrayX<S> diff = pred.value() - target;
  ArrayX<S> v(1);
  v[0] = (weights * diff * diff).mean();
  Node<S>* out = pred.tape->emplace(Shape{1}, std::move(v));
  Node<S>* pp = pred.node;
  const int64_t n = pred.size();
  out->backprop = [pp, target, weights, n](Node<S>& nd) {
    pp->ensure_grad();
    pp->grad +=
        nd.grad[0] * S(2) / S(n) * weights * (pp->value - target);
  };
  return {out, pred.tape};
}

template <class S>
Var<S> mse(const Var<S>& pred, const Var<S>& target) {
  detail::require_same("mse", pred, target);
  ArrayX<S> ones = ArrayX<S>::Ones(pred.size());
  ArrayX<S> t = target.value();
  Var<S> loss = weighted_mse(pred, t, ones);
  // target side gradient (target may be a tape var too)
  Node<S>*pt = target.node, *pp = pred.node;
  const int64_t n = pred.size();
  Node<S>* ln = loss.node;
  auto fwd = ln->backprop;
  ln->backprop = [fwd, pt, pp, n](Node<S>& nd) {
    fwd(nd);
    pt->ensure_grad();
    pt->grad += nd.grad[0] * S(2) / S(n) * (pt->value - pp->value);
  };
  return loss;
}

/// Standard GRU cell. Weight shapes: wx_* [in,D], wh_* [D,D], b_* [D].
template <class S>
struct GruParams {
  Var<S> wx_z, wh_z, b_z;
  Var<S> wx_r, wh_r, b_r;
  Var<S> wx_h, wh_h, b_h;
};

template <class S>
Var<S> gru_cell(const Var<S>& x, const Var<S>& h, const GruParams<S>& p) {
  Var<S> z = sigmoid(add(linear(x, p.wx_z, &p.b_z), linear(h, p.wh_z)));
  Var<S> r = sigmoid(add(linear(x, p.wx_r, &p.b_r), linear(h, p.wh_r)));
  Var<S> cand = tanh(add(linear(x, p.wx_h, &p.b_h), linear(mul(r, h), p.wh_h)));
  // h' = (1-z)*h + z*cand
  Var<S> one = constant(*x.tape, z.shape(), ArrayX<S>(ArrayX<S>::Ones(z.size())));
  return add(mul(sub(one, z), h), mul(z, cand));
}

}  // namespace mapf::ad
