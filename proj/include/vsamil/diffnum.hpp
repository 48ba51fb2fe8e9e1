#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Graph is a tape: nodes are appended in creation order, which is
// already a topological order, so backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vsamil/error.hpp"

namespace vsamil {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// 64-byte aligned storage. Eigen picks its vectorized summation order from
/// the address alignment, so fixed alignment keeps results bit-reproducible
/// across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n == 0) n = 1;
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense tensor of rank 0, 1 or 2 holding 64-bit reals in row-major order.
/// Rank-1 tensors behave as row vectors wherever a matrix view is needed.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Tensor(Shape shape, const std::vector<double>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("from_rows: no rows");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return matrix(rows.size(), cols, std::move(flat));
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<std::vector<double>> v;
    for (const auto& r : rows) v.emplace_back(r);
    return from_rows(v);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    if (shape_.size() == 2) return shape_[1];
    return shape_.size() == 1 ? shape_[0] : 1;
  }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.size() > 2) throw ShapeError("rank > 2 not supported: " + shape_string(shape));
    std::size_t n = 1;
    for (auto s : shape) {
      if (s == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
      n *= s;
    }
    return n;
  }

  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

/// A named learnable tensor that outlives the graphs it takes part in.
struct Parameter {
  std::string name;
  Tensor value;
};

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t index() const noexcept { return index_; }
  Graph* graph() const noexcept { return graph_; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t i) : graph_(g), index_(i) {}
  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

/// Gradients of a scalar loss keyed by Parameter identity.
class Gradients {
 public:
  /// Gradient of `p`; zeros of p's shape when p did not reach the loss.
  Tensor operator()(const Parameter& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? Tensor(p.value.shape(), 0.0) : it->second;
  }
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }

 private:
  friend class Graph;
  std::unordered_map<const Parameter*, Tensor> grads_;
};

class Graph {
 public:
  using Adjoints = std::vector<Tensor>;
  /// Adds this node's contribution into the adjoints of its parents.
  using BackwardRule = std::function<void(const Graph&, std::size_t self, Adjoints&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(Node{std::move(value), {}, nullptr, nullptr, false}); }

  Var parameter(const Parameter& p) { return push(Node{p.value, {}, nullptr, &p, true}); }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardRule rule) {
    bool needs = false;
    for (auto i : parents) needs = needs || nodes_.at(i).requires_grad;
    return push(Node{std::move(value), std::move(parents), needs ? std::move(rule) : nullptr, nullptr, needs});
  }

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients backward(Var loss) const {
    if (loss.graph_ != this) throw ValueError("backward: loss belongs to another graph");
    const Tensor& lv = nodes_[loss.index_].value;
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.shape()));

    Adjoints adj(loss.index_ + 1);
    for (std::size_t i = 0; i <= loss.index_; ++i) {
      if (nodes_[i].requires_grad) adj[i] = Tensor(nodes_[i].value.shape(), 0.0);
    }
    Gradients out;
    if (nodes_[loss.index_].requires_grad) adj[loss.index_].values()[0] = 1.0;
    for (std::size_t i = loss.index_ + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.rule) n.rule(*this, i, adj);
      if (n.param) accumulate(out.grads_, n.param, adj[i]);
    }
    for (std::size_t i = loss.index_ + 1; i < nodes_.size(); ++i) {
      if (nodes_[i].param && !out.grads_.count(nodes_[i].param)) {
        out.grads_.emplace(nodes_[i].param, Tensor(nodes_[i].value.shape(), 0.0));
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardRule rule;
    const Parameter* param;
    bool requires_grad;
  };

  static void accumulate(std::unordered_map<const Parameter*, Tensor>& m, const Parameter* p, const Tensor& g) {
    auto [it, inserted] = m.try_emplace(p, g);
    if (!inserted) {
      auto dst = it->second.values();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(index_); }

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> view(const Tensor& t) {
  return {t.values().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline Eigen::Map<RowMatrix> view(Tensor& t) {
  return {t.values().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline void same_graph(Var a, Var b, const char* op) {
  if (a.graph() != b.graph() || a.graph() == nullptr) {
    throw ValueError(std::string(op) + ": operands belong to different graphs");
  }
}

inline void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

/// Elementwise map with derivative df(x, y) where y = f(x).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.index();
  return a.graph()->record(std::move(y), {ai}, [ai, df](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
    if (!g.requires_grad(ai)) return;
    const Tensor& xv = g.value(ai);
    const Tensor& yv = g.value(self);
    const Tensor& up = adj[self];
    Tensor& da = adj[ai];
    for (std::size_t i = 0; i < xv.size(); ++i) da[i] += up[i] * df(xv[i], yv[i]);
  });
}

/// Elementwise binary op; either operand may be a single element broadcast
/// over the other. ga/gb are the partials with respect to each operand.
template <class F, class GA, class GB>
Var binary(Var a, Var b, const char* op, F f, GA ga, GB gb) {
  same_graph(a, b, op);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Shape out_shape;
  if (x.shape() == z.shape()) {
    out_shape = x.shape();
  } else if (x.size() == 1) {
    out_shape = z.shape();
  } else if (z.size() == 1) {
    out_shape = x.shape();
  } else {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(x.shape()) + " and " + shape_string(z.shape()) +
                     " do not conform");
  }
  Tensor y(out_shape);
  const bool bx = x.size() == 1 && y.size() != 1;
  const bool bz = z.size() == 1 && y.size() != 1;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[bx ? 0 : i], z[bz ? 0 : i]);
  const std::size_t ai = a.index(), bi = b.index();
  return a.graph()->record(std::move(y), {ai, bi},
                           [ai, bi, bx, bz, ga, gb](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
                             const Tensor& xv = g.value(ai);
                             const Tensor& zv = g.value(bi);
                             const Tensor& up = adj[self];
                             const bool need_a = g.requires_grad(ai), need_b = g.requires_grad(bi);
                             for (std::size_t i = 0; i < up.size(); ++i) {
                               const double xi = xv[bx ? 0 : i], zi = zv[bz ? 0 : i];
                               if (need_a) adj[ai][bx ? 0 : i] += up[i] * ga(xi, zi);
                               if (need_b) adj[bi][bz ? 0 : i] += up[i] * gb(xi, zi);
                             }
                           });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::same_graph(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.cols() != z.rows()) {
    throw ShapeError("matmul: shapes " + shape_string(x.shape()) + " and " + shape_string(z.shape()) +
                     " do not conform");
  }
  Tensor y(Shape{x.rows(), z.cols()});
  detail::view(y).noalias() = detail::view(x) * detail::view(z);
  const std::size_t ai = a.index(), bi = b.index();
  return a.graph()->record(std::move(y), {ai, bi}, [ai, bi](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
    auto up = detail::view(adj[self]);
    if (g.requires_grad(ai)) detail::view(adj[ai]).noalias() += up * detail::view(g.value(bi)).transpose();
    if (g.requires_grad(bi)) detail::view(adj[bi]).noalias() += detail::view(g.value(ai)).transpose() * up;
  });
}

inline Var transpose(Var a) {
  const Tensor& x = a.value();
  Tensor y(Shape{x.cols(), x.rows()});
  detail::view(y) = detail::view(x).transpose();
  const std::size_t ai = a.index();
  return a.graph()->record(std::move(y), {ai}, [ai](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
    if (g.requires_grad(ai)) detail::view(adj[ai]) += detail::view(adj[self]).transpose();
  });
}

/// x·W + b with x: n×in, W: in×out, b: 1×out (or length out) added to every row.
inline Var affine(Var x, Var w, Var b) {
  detail::same_graph(x, w, "affine");
  detail::same_graph(x, b, "affine");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw ShapeError("affine: shapes " + shape_string(xv.shape()) + ", " + shape_string(wv.shape()) + " and " +
                     shape_string(bv.shape()) + " do not conform");
  }
  Tensor y(Shape{xv.rows(), wv.cols()});
  auto ym = detail::view(y);
  ym.noalias() = detail::view(xv) * detail::view(wv);
  Eigen::Map<const Eigen::RowVectorXd> bias(bv.values().data(), static_cast<Eigen::Index>(bv.size()));
  ym.rowwise() += bias;
  const std::size_t xi = x.index(), wi = w.index(), bi = b.index();
  return x.graph()->record(std::move(y), {xi, wi, bi},
                           [xi, wi, bi](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
                             auto up = detail::view(adj[self]);
                             if (g.requires_grad(xi)) {
                               detail::view(adj[xi]).noalias() += up * detail::view(g.value(wi)).transpose();
                             }
                             if (g.requires_grad(wi)) {
                               detail::view(adj[wi]).noalias() += detail::view(g.value(xi)).transpose() * up;
                             }
                             if (g.requires_grad(bi)) {
                               Eigen::Map<Eigen::RowVectorXd> db(adj[bi].values().data(),
                                                                 static_cast<Eigen::Index>(adj[bi].size()));
                               db += up.colwise().sum();
                             }
                           });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double z) { return x + z; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double z) { return x - z; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var hadamard(Var a, Var b) {
  return detail::binary(
      a, b, "hadamard", [](double x, double z) { return x * z; }, [](double, double z) { return z; },
      [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
  return detail::unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return detail::stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::fabs(x); }, [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Var square(Var a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return hadamard(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(scale(a, -1.0), c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Reductions

/// all: to a scalar; per_row: r×c → r×1; per_column: r×c → 1×c.
enum class Reduce { all, per_row, per_column };

namespace detail {

inline Shape reduced_shape(const Tensor& x, Reduce how) {
  switch (how) {
    case Reduce::all:
      return {};
    case Reduce::per_row:
      return {x.rows(), 1};
    case Reduce::per_column:
      return {1, x.cols()};
  }
  return {};
}

// Output slot of element (r, c).
inline std::size_t reduced_index(Reduce how, std::size_t r, std::size_t c) {
  switch (how) {
    case Reduce::all:
      return 0;
    case Reduce::per_row:
      return r;
    case Reduce::per_column:
      return c;
  }
  return 0;
}

// First-index arg-extremum per output slot; `better(a, b)` is strict.
template <class Better>
Var extremum(Var a, Reduce how, Better better) {
  const Tensor& x = a.value();
  Tensor y(reduced_shape(x, how));
  std::vector<std::size_t> arg(y.size(), static_cast<std::size_t>(-1));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const std::size_t o = reduced_index(how, r, c), i = r * x.cols() + c;
      if (arg[o] == static_cast<std::size_t>(-1) || better(x[i], y[o])) {
        y[o] = x[i];
        arg[o] = i;
      }
    }
  }
  const std::size_t ai = a.index();
  return a.graph()->record(std::move(y), {ai},
                           [ai, arg = std::move(arg)](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
                             if (!g.requires_grad(ai)) return;
                             const Tensor& up = adj[self];
                             for (std::size_t o = 0; o < arg.size(); ++o) adj[ai][arg[o]] += up[o];
                           });
}

}  // namespace detail

inline Var sum(Var a, Reduce how = Reduce::all) {
  const Tensor& x = a.value();
  Tensor y(detail::reduced_shape(x, how));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[detail::reduced_index(how, r, c)] += x(r, c);
  const std::size_t ai = a.index();
  return a.graph()->record(std::move(y), {ai}, [ai, how](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
    if (!g.requires_grad(ai)) return;
    Tensor& da = adj[ai];
    const Tensor& up = adj[self];
    for (std::size_t r = 0; r < da.rows(); ++r)
      for (std::size_t c = 0; c < da.cols(); ++c) da(r, c) += up[detail::reduced_index(how, r, c)];
  });
}

inline Var mean(Var a, Reduce how = Reduce::all) {
  const Tensor& x = a.value();
  const std::size_t n = how == Reduce::all ? x.size() : (how == Reduce::per_row ? x.cols() : x.rows());
  return scale(sum(a, how), 1.0 / static_cast<double>(n));
}

/// Euclidean norm; the subgradient at the zero vector is taken as zero.
inline Var l2norm(Var a, Reduce how = Reduce::all) {
  const Tensor& x = a.value();
  Tensor y(detail::reduced_shape(x, how));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[detail::reduced_index(how, r, c)] += x(r, c) * x(r, c);
  for (auto& v : y.values()) v = std::sqrt(v);
  const std::size_t ai = a.index();
  return a.graph()->record(std::move(y), {ai}, [ai, how](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
    if (!g.requires_grad(ai)) return;
    const Tensor& xv = g.value(ai);
    const Tensor& norm = g.value(self);
    const Tensor& up = adj[self];
    Tensor& da = adj[ai];
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      for (std::size_t c = 0; c < xv.cols(); ++c) {
        const std::size_t o = detail::reduced_index(how, r, c);
        if (norm[o] > 0) da(r, c) += up[o] * xv(r, c) / norm[o];
      }
    }
  });
}

/// Gradient flows to exactly one element per output: the first maximum.
inline Var max_reduce(Var a, Reduce how = Reduce::all) {
  return detail::extremum(a, how, [](double v, double best) { return v > best; });
}

/// Gradient flows to exactly one element per output: the first minimum.
inline Var min_reduce(Var a, Reduce how = Reduce::all) {
  return detail::extremum(a, how, [](double v, double best) { return v < best; });
}

// ---------------------------------------------------------------------------
// Losses

/// Elementwise numerically stable binary cross-entropy on logits.
/// `targets` must match the logit shape (or be a single value) and lie in [0, 1].
inline Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& x = logits.value();
  if (targets.shape() != x.shape() && targets.size() != 1) {
    throw ShapeError("bce_with_logits: shapes " + shape_string(x.shape()) + " and " +
                     shape_string(targets.shape()) + " do not conform");
  }
  for (double t : targets.values()) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValueError("bce_with_logits: target " + std::to_string(t) + " outside [0, 1]");
  }
  const bool broadcast = targets.size() == 1 && x.size() != 1;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = targets[broadcast ? 0 : i];
    y[i] = std::max(x[i], 0.0) - x[i] * t + std::log1p(std::exp(-std::fabs(x[i])));
  }
  const std::size_t ai = logits.index();
  return logits.graph()->record(
      std::move(y), {ai}, [ai, targets, broadcast](const Graph& g, std::size_t self, Graph::Adjoints& adj) {
        if (!g.requires_grad(ai)) return;
        const Tensor& xv = g.value(ai);
        const Tensor& up = adj[self];
        for (std::size_t i = 0; i < xv.size(); ++i) {
          adj[ai][i] += up[i] * (detail::stable_sigmoid(xv[i]) - targets[broadcast ? 0 : i]);
        }
      });
}

inline Var bce_with_logits(Var logits, double target) { return bce_with_logits(logits, Tensor::scalar(target)); }

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update of `param` in place.
inline void adamw_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamWConfig& cfg) {
  if (!(cfg.lr > 0)) throw ValueError("adamw: learning rate must be positive");
  if (grad.shape() != param.shape()) {
    throw ShapeError("adamw: parameter " + shape_string(param.shape()) + " vs gradient " + shape_string(grad.shape()));
  }
  if (state.step == 0) {
    state.m = Tensor(param.shape(), 0.0);
    state.v = Tensor(param.shape(), 0.0);
  } else if (state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw ShapeError("adamw: state shape " + shape_string(state.m.shape()) + " vs parameter " +
                     shape_string(param.shape()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] = param[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// AdamW over a fixed list of parameters.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
      : params_(std::move(params)), states_(params_.size()), config_(cfg) {
    if (!(config_.lr > 0)) throw ValueError("adamw: learning rate must be positive");
  }

  void step(const Gradients& grads) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adamw_step(params_[i]->value, grads(*params_[i]), states_[i], config_);
    }
  }

  const AdamWConfig& config() const noexcept { return config_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
  AdamWConfig config_;
};

}  // namespace vsamil
