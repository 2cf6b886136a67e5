// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense double vectors.
//
// A Tape records nodes in creation order, which is always a valid topological
// order; backward() walks it once in reverse. Values are column vectors unless
// a Shape says otherwise (matrices are row-major). Parameters live outside the
// tape in a ParamStore and receive their gradients directly.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "explicit3d/errors.hpp"

namespace explicit3d::diff {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<double> init)
      : name_(std::move(name)),
        shape_(shape),
        value_(std::move(init)),
        grad_(shape.size(), 0.0),
        m_(shape.size(), 0.0),
        v_(shape.size(), 0.0) {
    if (value_.size() != shape_.size()) {
      throw InvalidInput("parameter '" + name_ + "': init size mismatch");
    }
  }

  const std::string& name() const { return name_; }
  Shape shape() const { return shape_; }
  std::span<double> value() { return value_; }
  std::span<const double> value() const { return value_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  std::span<double> first_moment() { return m_; }
  std::span<double> second_moment() { return v_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

 private:
  std::string name_;
  Shape shape_;
  std::vector<double> value_;
  std::vector<double> grad_;
  std::vector<double> m_;
  std::vector<double> v_;
};

enum class Init { kZeros, kXavier, kSmallNormal };

/// Named parameters in creation order; names are unique.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Parameter& create(const std::string& name, Shape shape, Init init) {
    std::vector<double> values(shape.size(), 0.0);
    if (init == Init::kXavier) {
      const double fan_in = static_cast<double>(shape.cols);
      const double fan_out = static_cast<double>(shape.rows);
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& x : values) x = dist(rng_);
    } else if (init == Init::kSmallNormal) {
      std::normal_distribution<double> dist(0.0, 0.1);
      for (double& x : values) x = dist(rng_);
    }
    return create(name, shape, std::move(values));
  }

  Parameter& create(const std::string& name, Shape shape,
                    std::vector<double> values) {
    if (index_.count(name) != 0) {
      throw InvalidInput("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, params_.size());
    params_.push_back(
        std::make_unique<Parameter>(name, shape, std::move(values)));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->shape().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline Shape shape() const;
  inline std::size_t size() const;
  inline std::span<const double> value() const;
  inline double operator[](std::size_t i) const;
  /// Value of a single-element node.
  inline double item() const;
  inline std::span<const double> grad() const;
  inline bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(std::vector<double> v) {
    const Shape s{v.size(), 1};
    return constant(std::move(v), s);
  }
  Var constant(std::vector<double> v, Shape s) {
    return push(s, std::move(v), false, nullptr, true);
  }
  Var scalar(double x) { return constant(std::vector<double>{x}); }
  Var zeros(std::size_t n) { return constant(std::vector<double>(n, 0.0)); }

  /// A leaf whose gradient is tracked (used for inputs under test).
  Var variable(std::vector<double> v) {
    const Shape s{v.size(), 1};
    return variable(std::move(v), s);
  }
  Var variable(std::vector<double> v, Shape s) {
    return push(s, std::move(v), true, nullptr, true);
  }

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.shape = p.shape();
    n.param = &p;
    n.requires_grad = true;
    n.leaf = true;
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return Var(this, id);
  }

  /// Records a computed node. `backward` is dropped when no parent needs
  /// gradients.
  Var push(Shape s, std::vector<double> value, bool requires_grad,
           Backward backward, bool leaf = false) {
    if (value.size() != s.size()) {
      throw InvalidInput("tape: value size does not match shape");
    }
    Node n;
    n.shape = s;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.leaf = leaf;
    if (requires_grad && !leaf) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  std::size_t size() const { return nodes_.size(); }

  Shape shape(std::uint32_t id) const { return nodes_[id].shape; }

  std::span<const double> value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->value();
    return n.value;
  }

  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated on first use.
  std::span<double> grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->grad();
    if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
    return n.grad;
  }

  std::span<const double> grad(std::uint32_t id) const {
    const Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->grad();
    return n.grad;
  }

  bool has_grad(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr || !n.grad.empty();
  }

  /// Propagates d(root)/d(node) to every reachable node. Interior gradients
  /// are recomputed on each call; leaf and parameter gradients accumulate.
  void backward(Var root) {
    if (root.tape() != this) throw InvalidInput("backward: foreign variable");
    if (nodes_[root.id()].shape.size() != 1) {
      throw InvalidInput("backward: root must be a scalar");
    }
    for (Node& n : nodes_) {
      if (!n.leaf) n.grad.clear();
    }
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] += 1.0;
    for (std::int64_t i = root.id(); i >= 0; --i) {
      const auto id = static_cast<std::uint32_t>(i);
      Node& n = nodes_[id];
      if (n.leaf || !n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool leaf = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

inline Shape Var::shape() const { return tape_->shape(id_); }
inline std::size_t Var::size() const { return tape_->shape(id_).size(); }
inline std::span<const double> Var::value() const { return tape_->value(id_); }
inline double Var::operator[](std::size_t i) const { return value()[i]; }
inline double Var::item() const {
  if (size() != 1) throw InvalidInput("item: variable is not a scalar");
  return value()[0];
}
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InvalidInput("operands live on different tapes");
  }
  return *a.tape();
}

inline std::vector<double> to_vector(std::span<const double> s) {
  return {s.begin(), s.end()};
}

// Element-wise unary op: f gives the value, df(x, y) the local derivative.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  const auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::uint32_t ia = a.id();
  return t.push(a.shape(), std::move(out), a.requires_grad(),
                [ia, df](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  const auto x = tp.value(ia);
                  const auto y = tp.value(self);
                  auto ga = tp.grad_buffer(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * df(x[i], y[i]);
                  }
                });
}

// Element-wise binary op with size-1 broadcasting on either side.
// dfa/dfb(x, y, out) give the partial derivatives.
template <class F, class DFA, class DFB>
Var binary(const Var& a, const Var& b, F f, DFA dfa, DFB dfb) {
  Tape& t = same_tape(a, b);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  if (na != nb && na != 1 && nb != 1) {
    throw InvalidInput("element-wise op: shape mismatch");
  }
  const Shape s = na >= nb ? a.shape() : b.shape();
  const std::size_t n = s.size();
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
  }
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return t.push(
      s, std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib, na, nb, dfa, dfb](Tape& tp, std::uint32_t self) {
        const auto g = tp.grad(self);
        const auto x = tp.value(ia);
        const auto y = tp.value(ib);
        const auto o = tp.value(self);
        if (tp.requires_grad(ia)) {
          auto ga = tp.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double xi = x[na == 1 ? 0 : i];
            const double yi = y[nb == 1 ? 0 : i];
            ga[na == 1 ? 0 : i] += g[i] * dfa(xi, yi, o[i]);
          }
        }
        if (tp.requires_grad(ib)) {
          auto gb = tp.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double xi = x[na == 1 ? 0 : i];
            const double yi = y[nb == 1 ? 0 : i];
            gb[nb == 1 ? 0 : i] += g[i] * dfb(xi, yi, o[i]);
          }
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

/// Element-wise minimum; ties send the gradient to the first operand.
inline Var minimum(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

/// Element-wise maximum; ties send the gradient to the first operand.
inline Var maximum(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

inline Var atan2(const Var& y, const Var& x) {
  return detail::binary(
      y, x, [](double a, double b) { return std::atan2(a, b); },
      [](double a, double b, double) { return b / (a * a + b * b); },
      [](double a, double b, double) { return -a / (a * a + b * b); });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }

// ---------------------------------------------------------------------------
// Element-wise nonlinearities

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Var sin(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

inline Var cos(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// Wraps to [-pi, pi); the derivative is 1 away from the cut.
inline Var wrap_angle(const Var& a) {
  constexpr double pi = 3.14159265358979323846;
  return detail::unary(
      a,
      [](double x) {
        double w = x - 2.0 * pi * std::floor((x + pi) / (2.0 * pi));
        if (w >= pi) w -= 2.0 * pi;
        if (w < -pi) w += 2.0 * pi;
        return w;
      },
      [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions and structure

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  const auto av = a.value();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  const std::uint32_t ia = a.id();
  return t.push({1, 1}, {s}, a.requires_grad(), [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    for (double& x : tp.grad_buffer(ia)) x += g;
  });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw InvalidInput("dot: size mismatch");
  return sum(mul(a, b));
}

/// Euclidean norm; the gradient at the zero vector is taken as zero.
inline Var l2norm(const Var& a) {
  Tape& t = *a.tape();
  const auto av = a.value();
  double ss = 0.0;
  for (double x : av) ss += x * x;
  const double n = std::sqrt(ss);
  const std::uint32_t ia = a.id();
  return t.push({1, 1}, {n}, a.requires_grad(), [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    const double nv = tp.value(self)[0];
    if (nv <= 0.0) return;
    const auto x = tp.value(ia);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * x[i] / nv;
  });
}

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  Tape& t = *parts.front().tape();
  std::size_t n = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw InvalidInput("concat: operands on different tapes");
    n += p.size();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(n);
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    const auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.id());
  }
  return t.push({n, 1}, std::move(out), rg,
                [ids = std::move(ids)](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  std::size_t off = 0;
                  for (std::uint32_t id : ids) {
                    const std::size_t len = tp.shape(id).size();
                    if (tp.requires_grad(id)) {
                      auto gp = tp.grad_buffer(id);
                      for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
                    }
                    off += len;
                  }
                });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice(const Var& a, std::size_t offset, std::size_t len) {
  if (offset + len > a.size()) throw InvalidInput("slice: out of range");
  Tape& t = *a.tape();
  const auto av = a.value();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(offset),
                          av.begin() + static_cast<std::ptrdiff_t>(offset + len));
  const std::uint32_t ia = a.id();
  return t.push({len, 1}, std::move(out), a.requires_grad(),
                [ia, offset](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  auto ga = tp.grad_buffer(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                });
}

inline Var element(const Var& a, std::size_t i) { return slice(a, i, 1); }

/// y = W x for a rows x cols matrix W and a cols-vector x.
inline Var matvec(const Var& w, const Var& x) {
  Tape& t = detail::same_tape(w, x);
  const Shape ws = w.shape();
  if (ws.cols != x.size()) throw InvalidInput("matvec: shape mismatch");
  const auto wv = w.value();
  const auto xv = x.value();
  std::vector<double> out(ws.rows, 0.0);
  for (std::size_t r = 0; r < ws.rows; ++r) {
    const double* row = wv.data() + r * ws.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < ws.cols; ++c) acc += row[c] * xv[c];
    out[r] = acc;
  }
  const std::uint32_t iw = w.id();
  const std::uint32_t ix = x.id();
  return t.push({ws.rows, 1}, std::move(out), w.requires_grad() || x.requires_grad(),
                [iw, ix, ws](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  const auto wv2 = tp.value(iw);
                  const auto xv2 = tp.value(ix);
                  if (tp.requires_grad(iw)) {
                    auto gw = tp.grad_buffer(iw);
                    for (std::size_t r = 0; r < ws.rows; ++r) {
                      const double gr = g[r];
                      if (gr == 0.0) continue;
                      double* row = gw.data() + r * ws.cols;
                      for (std::size_t c = 0; c < ws.cols; ++c) row[c] += gr * xv2[c];
                    }
                  }
                  if (tp.requires_grad(ix)) {
                    auto gx = tp.grad_buffer(ix);
                    for (std::size_t r = 0; r < ws.rows; ++r) {
                      const double gr = g[r];
                      if (gr == 0.0) continue;
                      const double* row = wv2.data() + r * ws.cols;
                      for (std::size_t c = 0; c < ws.cols; ++c) gx[c] += gr * row[c];
                    }
                  }
                });
}

/// Dense affine map w x + b.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  if (b.size() != w.shape().rows) throw InvalidInput("linear: bias size mismatch");
  return add(matvec(w, x), b);
}

/// Numerically stable softmax.
inline Var softmax(const Var& a) {
  Tape& t = *a.tape();
  const auto av = a.value();
  const double mx = *std::max_element(av.begin(), av.end());
  std::vector<double> out(av.size());
  double z = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = std::exp(av[i] - mx);
    z += out[i];
  }
  for (double& x : out) x /= z;
  const std::uint32_t ia = a.id();
  return t.push(a.shape(), std::move(out), a.requires_grad(),
                [ia](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  const auto y = tp.value(self);
                  double gy = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
                  auto ga = tp.grad_buffer(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += y[i] * (g[i] - gy);
                  }
                });
}

/// -log softmax(logits)[target], stabilized by max subtraction.
inline Var softmax_cross_entropy(const Var& logits, std::size_t target) {
  if (target >= logits.size()) {
    throw InvalidInput("softmax_cross_entropy: target index out of range");
  }
  Tape& t = *logits.tape();
  const auto lv = logits.value();
  const double mx = *std::max_element(lv.begin(), lv.end());
  double z = 0.0;
  for (double x : lv) z += std::exp(x - mx);
  const double loss = std::log(z) + mx - lv[target];
  const std::uint32_t il = logits.id();
  return t.push({1, 1}, {loss}, logits.requires_grad(),
                [il, target](Tape& tp, std::uint32_t self) {
                  const double g = tp.grad(self)[0];
                  const auto l = tp.value(il);
                  const double m = *std::max_element(l.begin(), l.end());
                  double zz = 0.0;
                  for (double x : l) zz += std::exp(x - m);
                  auto gl = tp.grad_buffer(il);
                  for (std::size_t i = 0; i < l.size(); ++i) {
                    const double p = std::exp(l[i] - m) / zz;
                    gl[i] += g * (p - (i == target ? 1.0 : 0.0));
                  }
                });
}

/// Mean squared difference against a constant target.
inline Var mse(const Var& a, std::span<const double> target) {
  if (a.size() != target.size()) throw InvalidInput("mse: shape mismatch");
  Tape& t = *a.tape();
  return mean(square(sub(a, t.constant(detail::to_vector(target)))));
}

/// Rotates a 3-vector about Z by the scalar angle `theta`.
inline Var rotate_z(const Var& theta, const Var& v) {
  Tape& t = detail::same_tape(theta, v);
  if (theta.size() != 1 || v.size() != 3) throw InvalidInput("rotate_z: shape");
  const double th = theta.item();
  const auto x = v.value();
  const double c = std::cos(th);
  const double s = std::sin(th);
  std::vector<double> out = {c * x[0] - s * x[1], s * x[0] + c * x[1], x[2]};
  const std::uint32_t it = theta.id();
  const std::uint32_t iv = v.id();
  return t.push({3, 1}, std::move(out), theta.requires_grad() || v.requires_grad(),
                [it, iv](Tape& tp, std::uint32_t self) {
                  const auto g = tp.grad(self);
                  const double a = tp.value(it)[0];
                  const auto xv = tp.value(iv);
                  const double c2 = std::cos(a);
                  const double s2 = std::sin(a);
                  if (tp.requires_grad(iv)) {
                    auto gv = tp.grad_buffer(iv);
                    gv[0] += c2 * g[0] + s2 * g[1];
                    gv[1] += -s2 * g[0] + c2 * g[1];
                    gv[2] += g[2];
                  }
                  if (tp.requires_grad(it)) {
                    const double d0 = -s2 * xv[0] - c2 * xv[1];
                    const double d1 = c2 * xv[0] - s2 * xv[1];
                    tp.grad_buffer(it)[0] += g[0] * d0 + g[1] * d1;
                  }
                });
}

// ---------------------------------------------------------------------------
// Learnable building blocks

/// Feed-forward stack: ReLU after every layer except the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::vector<std::size_t> widths)
      : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw InvalidInput("Mlp: need at least two widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const std::string base = name + ".l" + std::to_string(l);
      weights_.push_back(
          &store.create(base + ".w", {widths_[l + 1], widths_[l]}, Init::kXavier));
      biases_.push_back(&store.create(base + ".b", {widths_[l + 1], 1}, Init::kZeros));
    }
  }

  Var operator()(Tape& t, const Var& x) const {
    Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = linear(h, t.param(*weights_[l]), t.param(*biases_[l]));
      if (l + 1 < weights_.size()) h = relu(h);
    }
    return h;
  }

  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  const std::vector<Parameter*>& weights() const { return weights_; }
  const std::vector<Parameter*>& biases() const { return biases_; }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Parameter*> weights_;
  std::vector<Parameter*> biases_;
};

/// Standard GRU cell parameters: input weights W_*, recurrent weights U_*.
struct GruParams {
  Parameter* w_z = nullptr;
  Parameter* w_r = nullptr;
  Parameter* w_h = nullptr;
  Parameter* u_z = nullptr;
  Parameter* u_r = nullptr;
  Parameter* u_h = nullptr;
  Parameter* b_z = nullptr;
  Parameter* b_r = nullptr;
  Parameter* b_h = nullptr;

  static GruParams create(ParamStore& store, const std::string& name,
                          std::size_t input, std::size_t hidden) {
    GruParams p;
    p.w_z = &store.create(name + ".w_z", {hidden, input}, Init::kXavier);
    p.w_r = &store.create(name + ".w_r", {hidden, input}, Init::kXavier);
    p.w_h = &store.create(name + ".w_h", {hidden, input}, Init::kXavier);
    p.u_z = &store.create(name + ".u_z", {hidden, hidden}, Init::kXavier);
    p.u_r = &store.create(name + ".u_r", {hidden, hidden}, Init::kXavier);
    p.u_h = &store.create(name + ".u_h", {hidden, hidden}, Init::kXavier);
    p.b_z = &store.create(name + ".b_z", {hidden, 1}, Init::kZeros);
    p.b_r = &store.create(name + ".b_r", {hidden, 1}, Init::kZeros);
    p.b_h = &store.create(name + ".b_h", {hidden, 1}, Init::kZeros);
    return p;
  }

  std::size_t hidden() const { return u_z->shape().rows; }
};

/// One GRU step:
///   z = sigmoid(W_z x + U_z h + b_z)
///   r = sigmoid(W_r x + U_r h + b_r)
///   c = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * c
inline Var gru_step(Tape& t, const Var& h_prev, const Var& x, const GruParams& p) {
  if (h_prev.size() != p.hidden()) throw InvalidInput("gru_step: state size mismatch");
  if (x.size() != p.w_z->shape().cols) throw InvalidInput("gru_step: input size mismatch");
  const Var z = sigmoid(add(add(matvec(t.param(*p.w_z), x), matvec(t.param(*p.u_z), h_prev)),
                            t.param(*p.b_z)));
  const Var r = sigmoid(add(add(matvec(t.param(*p.w_r), x), matvec(t.param(*p.u_r), h_prev)),
                            t.param(*p.b_r)));
  const Var c = tanh(add(add(matvec(t.param(*p.w_h), x),
                             matvec(t.param(*p.u_h), mul(r, h_prev))),
                         t.param(*p.b_h)));
  return add(h_prev, mul(z, sub(c, h_prev)));
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every parameter; `step` counts from 1.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, std::uint64_t step) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto v = p.value();
    auto g = p.grad();
    auto m1 = p.first_moment();
    auto m2 = p.second_moment();
    for (std::size_t k = 0; k < v.size(); ++k) {
      m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g[k];
      m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      v[k] -= cfg.lr * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Text format, version 1:
//   explicit3d-checkpoint 1
//   epoch <int>
//   step <int>
//   config_hash <hex>
//   params <count>
//   then per parameter:
//     param <name> <rows> <cols>
//     value <rows*cols numbers>
//     adam_m <rows*cols numbers>
//     adam_v <rows*cols numbers>
//   end
// Numbers are written with 17 significant digits, which round-trips doubles.

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::int64_t epoch = 0;
  std::uint64_t step = 0;
  std::string config_hash;
};

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const CheckpointMeta& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << std::setprecision(17);
  out << "explicit3d-checkpoint " << kCheckpointVersion << '\n';
  out << "epoch " << meta.epoch << '\n';
  out << "step " << meta.step << '\n';
  out << "config_hash " << (meta.config_hash.empty() ? "-" : meta.config_hash) << '\n';
  out << "params " << store.size() << '\n';
  auto write_row = [&out](const char* tag, std::span<const double> xs) {
    out << tag;
    for (double x : xs) out << ' ' << x;
    out << '\n';
  };
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    out << "param " << p.name() << ' ' << p.shape().rows << ' ' << p.shape().cols << '\n';
    write_row("value", p.value());
    write_row("adam_m", p.first_moment());
    write_row("adam_v", p.second_moment());
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

namespace detail {

inline void expect_token(std::istream& in, const std::string& path, const std::string& word) {
  std::string tok;
  if (!(in >> tok) || tok != word) {
    throw std::runtime_error("checkpoint " + path + ": expected '" + word + "'");
  }
}

inline CheckpointMeta read_checkpoint_header(std::istream& in, const std::string& path) {
  int version = 0;
  expect_token(in, path, "explicit3d-checkpoint");
  if (!(in >> version) || version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path + ": unsupported version");
  }
  CheckpointMeta meta;
  expect_token(in, path, "epoch");
  in >> meta.epoch;
  expect_token(in, path, "step");
  in >> meta.step;
  expect_token(in, path, "config_hash");
  in >> meta.config_hash;
  if (!in) throw std::runtime_error("checkpoint " + path + ": truncated header");
  if (meta.config_hash == "-") meta.config_hash.clear();
  return meta;
}

}  // namespace detail

/// Header only, without touching any parameters.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return detail::read_checkpoint_header(in, path);
}

/// Loads values and optimizer moments into an already-constructed store whose
/// parameter names and shapes must match the file exactly.
inline CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  auto expect = [&in, &path](const std::string& word) { detail::expect_token(in, path, word); };
  const CheckpointMeta meta = detail::read_checkpoint_header(in, path);
  std::size_t count = 0;
  expect("params");
  in >> count;
  if (!in || count != store.size()) {
    throw std::runtime_error("checkpoint " + path + ": parameter count mismatch");
  }
  auto read_row = [&](const std::string& tag, std::span<double> dst) {
    expect(tag);
    for (double& x : dst) {
      std::string tok;
      if (!(in >> tok)) throw std::runtime_error("checkpoint " + path + ": truncated");
      x = std::strtod(tok.c_str(), nullptr);
    }
  };
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    Shape s;
    expect("param");
    in >> name >> s.rows >> s.cols;
    if (!in || !store.contains(name) || store.at(name).shape() != s) {
      throw std::runtime_error("checkpoint " + path + ": parameter '" + name +
                               "' does not match the model");
    }
    Parameter& p = store.at(name);
    read_row("value", p.value());
    read_row("adam_m", p.first_moment());
    read_row("adam_v", p.second_moment());
  }
  expect("end");
  return meta;
}

}  // namespace explicit3d::diff
