#include "adanode/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adanode/errors.hpp"

namespace adanode {

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw ConfigError("unknown activation kind '" + std::string(name) + "'");
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::softplus:
      return "softplus";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (graph_ == nullptr) throw StateError("use of an unbound Var");
  return graph_->value(id_);
}

// --- Graph ------------------------------------------------------------------

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad && grad_enabled_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::emit(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Graph::emit(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& p : parents) {
      if (&p.graph() != this) throw UsageError("op mixes Vars from different graphs");
      needs = needs || nodes_[p.id()].requires_grad;
    }
  }
  Node node{std::move(value), {}, needs, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(std::size_t id) const {
  if (id >= nodes_.size()) throw StateError("Var refers to a node that is not on the tape");
  return nodes_[id].value;
}

std::span<double> Graph::grad_slot(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Tensor Graph::grad(Var v) const {
  const auto& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor::zeros(node.value.shape());
  return Tensor::unchecked(node.value.shape(), node.grad);
}

void Graph::backward(Var output, const Tensor& seed) {
  Seed s{output, seed};
  backward(std::span<const Seed>(&s, 1));
}

void Graph::backward(Var output) {
  if (!output.valid() || &output.graph() != this || output.id() >= nodes_.size()) {
    throw StateError("backward() called before the output was evaluated on this graph");
  }
  if (nodes_[output.id()].value.size() != 1) {
    throw UsageError("backward() without a seed needs a scalar output, got " +
                     shape_string(nodes_[output.id()].value.shape()));
  }
  backward(output, Tensor::scalar(1.0));
}

void Graph::backward(std::span<const Seed> seeds) {
  std::size_t top = 0;
  for (const auto& s : seeds) {
    if (!s.output.valid() || &s.output.graph() != this || s.output.id() >= nodes_.size()) {
      throw StateError("backward() called before the output was evaluated on this graph");
    }
    const auto& out = nodes_[s.output.id()].value;
    if (out.size() != s.cotangent.size()) {
      throw DimensionError("seed shape " + shape_string(s.cotangent.shape()) + " does not match output shape " +
                           shape_string(out.shape()));
    }
    top = std::max(top, s.output.id() + 1);
  }
  for (auto& n : nodes_) n.grad.clear();
  for (const auto& s : seeds) {
    auto slot = grad_slot(s.output.id());
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += s.cotangent[i];
  }
  for (std::size_t id = top; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.backward && !node.grad.empty()) node.backward(*this, id);
  }
}

void Graph::rewind(std::size_t mark) {
  if (mark < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(mark), nodes_.end());
}

// --- broadcasting -----------------------------------------------------------

namespace {

std::size_t rows_of(const Tensor::Shape& s) { return s.size() == 2 ? s[0] : 1; }

struct Bcast {
  enum class Kind { same, scalar, row };
  Kind kind = Kind::same;
  std::size_t cols = 1;

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Kind::same:
        return i;
      case Kind::scalar:
        return 0;
      case Kind::row:
        return i % cols;
    }
    return i;
  }
};

Bcast make_bcast(const Tensor::Shape& in, const Tensor::Shape& out) {
  if (shape_size(in) == shape_size(out) && in.back() == out.back()) return {Bcast::Kind::same, out.back()};
  if (shape_size(in) == 1) return {Bcast::Kind::scalar, out.back()};
  if (rows_of(in) == 1 && in.back() == out.back()) return {Bcast::Kind::row, out.back()};
  throw DimensionError("cannot broadcast " + shape_string(in) + " to " + shape_string(out));
}

template <class Fwd, class Da, class Db>
Var binary(Var a, Var b, Fwd fwd, Da da, Db db) {
  auto& g = a.graph();
  const auto& av = a.value();
  const auto& bv = b.value();
  auto shape = broadcast_shape(av.shape(), bv.shape());
  auto ba = make_bcast(av.shape(), shape);
  auto bb = make_bcast(bv.shape(), shape);
  std::vector<double> out(shape_size(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[ba(i)], bv[bb(i)]);
  auto ia = a.id();
  auto ib = b.id();
  return g.emit(Tensor::unchecked(shape, std::move(out)), {a, b}, [=](Graph& gr, std::size_t self) {
    const auto& x = gr.value(ia);
    const auto& y = gr.value(ib);
    auto gout = gr.grad_slot(self);
    if (gr.requires_grad(ia)) {
      auto ga = gr.grad_slot(ia);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[ba(i)] += gout[i] * da(x[ba(i)], y[bb(i)]);
    }
    if (gr.requires_grad(ib)) {
      auto gb = gr.grad_slot(ib);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[bb(i)] += gout[i] * db(x[ba(i)], y[bb(i)]);
    }
  });
}

template <class Fwd, class Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  auto& g = x.graph();
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto ix = x.id();
  return g.emit(Tensor::unchecked(xv.shape(), std::move(out)), {x}, [=](Graph& gr, std::size_t self) {
    const auto& in = gr.value(ix);
    const auto& y = gr.value(self);
    auto gout = gr.grad_slot(self);
    auto gx = gr.grad_slot(ix);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * deriv(in[i], y[i]);
  });
}

double softplus_value(double x) {
  double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return std::max(v, std::numeric_limits<double>::denorm_min());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor::Shape broadcast_shape(const Tensor::Shape& a, const Tensor::Shape& b) {
  auto na = shape_size(a);
  auto nb = shape_size(b);
  if (na == nb && a.back() == b.back()) return a;
  if (nb == 1) return a;
  if (na == 1) return b;
  if (rows_of(b) == 1 && b.back() == a.back()) return a;
  if (rows_of(a) == 1 && a.back() == b.back()) return b;
  throw DimensionError("incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

// --- dense algebra ------------------------------------------------------------

Var affine(Var x, Var W, Var b) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const auto& wv = W.value();
  const auto& bv = b.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols() || bv.size() != wv.rows() || bv.rows() != 1) {
    throw DimensionError("affine: x " + shape_string(xv.shape()) + " and W " + shape_string(wv.shape()) + " / b " +
                         shape_string(bv.shape()) + " do not conform");
  }
  const std::size_t batch = xv.rows();
  const std::size_t n = wv.cols();
  const std::size_t m = wv.rows();
  std::vector<double> out(batch * m);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = xv.data().data() + r * n;
    double* orow = out.data() + r * m;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wi = wv.data().data() + i * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += wi[j] * xr[j];
      orow[i] = acc + bv[i];
    }
  }
  Tensor::Shape shape = xv.rank() == 1 ? Tensor::Shape{m} : Tensor::Shape{batch, m};
  auto ix = x.id(), iw = W.id(), ib = b.id();
  return g.emit(Tensor::unchecked(std::move(shape), std::move(out)), {x, W, b},
                [=](Graph& gr, std::size_t self) {
                  const auto& xs = gr.value(ix).data();
                  const auto& ws = gr.value(iw).data();
                  auto go = gr.grad_slot(self);
                  if (gr.requires_grad(ix)) {
                    auto gx = gr.grad_slot(ix);
                    for (std::size_t r = 0; r < batch; ++r) {
                      for (std::size_t i = 0; i < m; ++i) {
                        double gi = go[r * m + i];
                        if (gi == 0.0) continue;
                        const double* wi = ws.data() + i * n;
                        double* gxr = gx.data() + r * n;
                        for (std::size_t j = 0; j < n; ++j) gxr[j] += gi * wi[j];
                      }
                    }
                  }
                  if (gr.requires_grad(iw)) {
                    auto gw = gr.grad_slot(iw);
                    for (std::size_t r = 0; r < batch; ++r) {
                      const double* xr = xs.data() + r * n;
                      for (std::size_t i = 0; i < m; ++i) {
                        double gi = go[r * m + i];
                        if (gi == 0.0) continue;
                        double* gwi = gw.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) gwi[j] += gi * xr[j];
                      }
                    }
                  }
                  if (gr.requires_grad(ib)) {
                    auto gb = gr.grad_slot(ib);
                    for (std::size_t r = 0; r < batch; ++r) {
                      for (std::size_t i = 0; i < m; ++i) gb[i] += go[r * m + i];
                    }
                  }
                });
}

Var matmul(Var a, Var b) {
  auto& g = a.graph();
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows() || bv.rank() != 2) {
    throw DimensionError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()) +
                         " do not conform");
  }
  const std::size_t p = av.rows(), q = av.cols(), r = bv.cols();
  std::vector<double> out(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      double aik = av[i * q + k];
      if (aik == 0.0) continue;
      const double* bk = bv.data().data() + k * r;
      double* oi = out.data() + i * r;
      for (std::size_t j = 0; j < r; ++j) oi[j] += aik * bk[j];
    }
  }
  auto ia = a.id(), ib = b.id();
  return g.emit(Tensor::unchecked({p, r}, std::move(out)), {a, b}, [=](Graph& gr, std::size_t self) {
    const auto& as = gr.value(ia);
    const auto& bs = gr.value(ib);
    auto go = gr.grad_slot(self);
    if (gr.requires_grad(ia)) {
      auto ga = gr.grad_slot(ia);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < r; ++j) acc += go[i * r + j] * bs[k * r + j];
          ga[i * q + k] += acc;
        }
      }
    }
    if (gr.requires_grad(ib)) {
      auto gb = gr.grad_slot(ib);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
          double aik = as[i * q + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * go[i * r + j];
        }
      }
    }
  });
}

// --- elementwise --------------------------------------------------------------

Var activation(Var x, Activation kind) {
  switch (kind) {
    case Activation::tanh:
      return tanh(x);
    case Activation::relu:
      return relu(x);
    case Activation::softplus:
      return softplus(x);
  }
  throw ConfigError("unsupported activation");
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  for (double v : x.value().data()) {
    if (v == 0.0) {
      x.graph().note_kink();
      break;
    }
  }
  // Subgradient 0 at the kink.
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var x) {
  return unary(x, softplus_value, [](double v, double) { return sigmoid(v); });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var add(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var x, double c) {
  return unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var shift(Var x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw UsageError("lincomb: terms/coefficients mismatch");
  auto& g = terms[0].graph();
  const auto& shape = terms[0].shape();
  std::vector<double> out(shape_size(shape), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& tv = terms[k].value();
    if (tv.shape() != shape) {
      throw DimensionError("lincomb: shape " + shape_string(tv.shape()) + " differs from " + shape_string(shape));
    }
    const double c = coeffs[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * tv[i];
  }
  std::vector<std::size_t> ids;
  ids.reserve(terms.size());
  for (const auto& t : terms) ids.push_back(t.id());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return g.emit(Tensor::unchecked(shape, std::move(out)), terms,
                [ids = std::move(ids), cs = std::move(cs)](Graph& gr, std::size_t self) {
                  auto go = gr.grad_slot(self);
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (!gr.requires_grad(ids[k])) continue;
                    auto gt = gr.grad_slot(ids[k]);
                    for (std::size_t i = 0; i < go.size(); ++i) gt[i] += cs[k] * go[i];
                  }
                });
}

// --- reductions and reshaping ---------------------------------------------------

Var sum(Var x) {
  auto& g = x.graph();
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  auto ix = x.id();
  return g.emit(Tensor::unchecked({1}, {acc}), {x}, [ix](Graph& gr, std::size_t self) {
    double go = gr.grad_slot(self)[0];
    for (auto& v : gr.grad_slot(ix)) v += go;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_rows(Var x) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  }
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& v : out) v *= inv;
  auto ix = x.id();
  return g.emit(Tensor::unchecked({1, c}, std::move(out)), {x}, [=](Graph& gr, std::size_t self) {
    auto go = gr.grad_slot(self);
    auto gx = gr.grad_slot(ix);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += inv * go[j];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (begin >= end || end > c) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * c + begin + j];
  }
  Tensor::Shape shape = xv.rank() == 1 ? Tensor::Shape{w} : Tensor::Shape{r, w};
  auto ix = x.id();
  return g.emit(Tensor::unchecked(std::move(shape), std::move(out)), {x}, [=](Graph& gr, std::size_t self) {
    auto go = gr.grad_slot(self);
    auto gx = gr.grad_slot(ix);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += go[i * w + j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows: nothing to concatenate");
  auto& g = parts[0].graph();
  const std::size_t c = parts[0].value().cols();
  std::vector<double> out;
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    if (pv.cols() != c) {
      throw DimensionError("concat_rows: " + shape_string(pv.shape()) + " vs " +
                           shape_string(parts[0].value().shape()));
    }
    out.insert(out.end(), pv.data().begin(), pv.data().end());
    rows += pv.rows();
    ids.push_back(p.id());
  }
  return g.emit(Tensor::unchecked({rows, c}, std::move(out)), parts, [ids = std::move(ids)](Graph& gr, std::size_t self) {
    auto go = gr.grad_slot(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      std::size_t n = gr.value(id).size();
      if (gr.requires_grad(id)) {
        auto gp = gr.grad_slot(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += go[offset + i];
      }
      offset += n;
    }
  });
}

Var reshape(Var x, Tensor::Shape shape) {
  auto& g = x.graph();
  auto ix = x.id();
  return g.emit(x.value().reshaped(std::move(shape)), {x}, [ix](Graph& gr, std::size_t self) {
    auto go = gr.grad_slot(self);
    auto gx = gr.grad_slot(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

// --- Gaussian -------------------------------------------------------------------

double gaussian_log_density(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_log_density: sigma must be positive, got " + std::to_string(sigma));
  double z = (x - mu) / sigma;
  return -kHalfLog2Pi - std::log(sigma) - 0.5 * z * z;
}

Var gaussian_nll(Var x, Var mu, Var sigma) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const auto& mv = mu.value();
  const auto& sv = sigma.value();
  auto shape = broadcast_shape(broadcast_shape(xv.shape(), mv.shape()), sv.shape());
  auto bx = make_bcast(xv.shape(), shape);
  auto bm = make_bcast(mv.shape(), shape);
  auto bs = make_bcast(sv.shape(), shape);
  std::vector<double> out(shape_size(shape));
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = sv[bs(i)];
    double d = xv[bx(i)] - mv[bm(i)];
    out[i] = kHalfLog2Pi + std::log(s) + 0.5 * d * d / (s * s);
  }
  auto ix = x.id(), im = mu.id(), is = sigma.id();
  return g.emit(Tensor::unchecked(shape, std::move(out)), {x, mu, sigma}, [=](Graph& gr, std::size_t self) {
    const auto& xs = gr.value(ix);
    const auto& ms = gr.value(im);
    const auto& ss = gr.value(is);
    auto go = gr.grad_slot(self);
    const bool need_x = gr.requires_grad(ix), need_m = gr.requires_grad(im), need_s = gr.requires_grad(is);
    std::span<double> gx, gm, gs;
    if (need_x) gx = gr.grad_slot(ix);
    if (need_m) gm = gr.grad_slot(im);
    if (need_s) gs = gr.grad_slot(is);
    for (std::size_t i = 0; i < go.size(); ++i) {
      double s = ss[bs(i)];
      double d = xs[bx(i)] - ms[bm(i)];
      double inv_var = 1.0 / (s * s);
      if (need_x) gx[bx(i)] += go[i] * d * inv_var;
      if (need_m) gm[bm(i)] -= go[i] * d * inv_var;
      if (need_s) gs[bs(i)] += go[i] * (1.0 / s - d * d * inv_var / s);
    }
  });
}

}  // namespace adanode
