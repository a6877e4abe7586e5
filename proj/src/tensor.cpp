#include "dynakf/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dynakf {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_serial{1};

std::string shape_to_str(const std::vector<int>& dims) {
  std::string s = "(";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  s += ")";
  return s;
}

void check_finite(const Tensor& t, Op op) {
  for (double x : t.v) {
    if (!std::isfinite(x)) {
      throw NonFiniteError(std::string("op ") + op_name(op) +
                           " produced a non-finite value");
    }
  }
}

// Registers the result on the active tape when any input is tracked there.
// Untracked inputs become anonymous constant leaves; the caller's tensor is
// left unstamped so it can be reused across tapes.
int track(Op op, Tensor* a, Tensor* b, Tensor& out, int i0 = 0, int i1 = 0,
          std::vector<double> aux = {}) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return -1;
  auto tracked = [&](const Tensor* t) {
    if (t == nullptr || t->node < 0) return false;
    if (t->tape_serial != tape->serial()) {
      throw TapeError("tensor recorded on a different tape used as op input");
    }
    return true;
  };
  bool any = tracked(a) || tracked(b);
  if (!any) return -1;
  auto node_of = [&](Tensor* t) {
    if (t == nullptr) return -1;
    if (t->node >= 0) return t->node;
    Node leaf;
    leaf.op = Op::kLeaf;
    leaf.out = t->detached();
    return tape->push(std::move(leaf));
  };
  Node n;
  n.op = op;
  n.a = node_of(a);
  n.b = node_of(b);
  n.i0 = i0;
  n.i1 = i1;
  n.out = out.detached();
  n.aux = std::move(aux);
  int id = tape->push(std::move(n));
  out.node = id;
  out.tape_serial = tape->serial();
  return id;
}

enum class EwKind { Add, Sub, Mul, Div };

Tensor elementwise_binary(const Tensor& a, const Tensor& b, EwKind kind, Op op) {
  const bool a_scalar = a.is_scalar();
  const bool b_scalar = b.is_scalar();
  if (!a.same_shape(b) && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op_name(op)) + " shape mismatch: " +
                     a.shape_str() + " vs " + b.shape_str());
  }
  const Tensor& big = (b_scalar && !a_scalar) ? a : (a_scalar && !b_scalar ? b : a);
  Tensor out(big.dims, std::vector<double>(big.v.size()));
  const size_t n = big.v.size();
  for (size_t i = 0; i < n; ++i) {
    double x = a_scalar ? a.v[0] : a.v[i];
    double y = b_scalar ? b.v[0] : b.v[i];
    switch (kind) {
      case EwKind::Add: out.v[i] = x + y; break;
      case EwKind::Sub: out.v[i] = x - y; break;
      case EwKind::Mul: out.v[i] = x * y; break;
      case EwKind::Div: out.v[i] = x / y; break;
    }
  }
  check_finite(out, op);
  track(op, const_cast<Tensor*>(&a), const_cast<Tensor*>(&b), out);
  return out;
}

Tensor elementwise_unary(const Tensor& x, Op op, double (*f)(double)) {
  Tensor out(x.dims, std::vector<double>(x.v.size()));
  for (size_t i = 0; i < x.v.size(); ++i) out.v[i] = f(x.v[i]);
  check_finite(out, op);
  track(op, const_cast<Tensor*>(&x), nullptr, out);
  return out;
}

// Accumulates src into dst, summing to a single slot when dst was a scalar
// broadcast against a larger operand.
void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  if (dst.size() == src.size()) {
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  } else if (dst.size() == 1) {
    for (double s : src) dst[0] += s;
  } else {
    throw TapeError("gradient accumulation shape mismatch");
  }
}

void cholesky_in_place(std::vector<double>& m, int n) {
  for (int j = 0; j < n; ++j) {
    double d = m[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double l = m[static_cast<size_t>(j) * n + k];
      d -= l * l;
    }
    if (d <= 0.0) throw NonFiniteError("spd_inverse: matrix not positive definite");
    d = std::sqrt(d);
    m[static_cast<size_t>(j) * n + j] = d;
    for (int i = j + 1; i < n; ++i) {
      double s = m[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        s -= m[static_cast<size_t>(i) * n + k] * m[static_cast<size_t>(j) * n + k];
      }
      m[static_cast<size_t>(i) * n + j] = s / d;
    }
  }
  // zero the strict upper triangle
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m[static_cast<size_t>(i) * n + j] = 0.0;
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSum: return "sum";
    case Op::kSquare: return "square";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kTranspose: return "transpose";
    case Op::kReciprocal: return "reciprocal";
    case Op::kReshape: return "reshape";
    case Op::kSpdInverse: return "spd_inverse";
    case Op::kDirichlet: return "dirichlet_sample";
  }
  return "?";
}

Tensor Tensor::zeros(std::vector<int> d) {
  size_t n = 1;
  for (int x : d) n *= static_cast<size_t>(x);
  return Tensor(std::move(d), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> d, double x) {
  size_t n = 1;
  for (int k : d) n *= static_cast<size_t>(k);
  return Tensor(std::move(d), std::vector<double>(n, x));
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> vals) {
  if (static_cast<int>(vals.size()) != rows * cols) {
    throw ShapeError("matrix: " + std::to_string(vals.size()) + " values for (" +
                     std::to_string(rows) + "," + std::to_string(cols) + ")");
  }
  return Tensor({rows, cols}, std::move(vals));
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str());
  return v[0];
}

std::string Tensor::shape_str() const { return shape_to_str(dims); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)) {}

int Tape::leaf(Tensor& t) {
  if (t.node >= 0 && t.tape_serial == serial_) return t.node;
  Node n;
  n.op = Op::kLeaf;
  n.out = t.detached();
  int id = push(std::move(n));
  t.node = id;
  t.tape_serial = serial_;
  return id;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

bool Gradients::reached(int node_id) const {
  return node_id >= 0 && node_id < static_cast<int>(slots_.size()) &&
         !slots_[static_cast<size_t>(node_id)].empty();
}

Tensor Gradients::at(int node_id) const {
  if (node_id < 0 || nodes_ == nullptr || node_id >= static_cast<int>(nodes_->size())) {
    throw TapeError("gradient requested for a tensor not on the tape");
  }
  const Node& n = (*nodes_)[static_cast<size_t>(node_id)];
  if (!reached(node_id)) return Tensor::zeros(n.out.dims);
  return Tensor(n.out.dims, slots_[static_cast<size_t>(node_id)]);
}

Tensor Gradients::at(const Tensor& t) const { return at(t.node); }

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("tape already consumed by a previous backward");
  if (loss.node < 0 || loss.tape_serial != serial_) {
    throw TapeError("loss tensor is not recorded on this tape");
  }
  if (!loss.is_scalar()) {
    throw TapeError("backward requires a scalar loss, got shape " + loss.shape_str());
  }
  consumed_ = true;

  std::vector<std::vector<double>> grad(nodes_.size());
  grad[static_cast<size_t>(loss.node)] = {1.0};

  auto g_of = [&](int id) -> std::vector<double>& {
    auto& g = grad[static_cast<size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<size_t>(id)].out.v.size(), 0.0);
    return g;
  };

  for (int id = loss.node; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    const auto& g = grad[static_cast<size_t>(id)];
    if (g.empty() || n.op == Op::kLeaf) continue;
    const Tensor& av = n.a >= 0 ? nodes_[static_cast<size_t>(n.a)].out : n.out;
    const Tensor& bv = n.b >= 0 ? nodes_[static_cast<size_t>(n.b)].out : n.out;
    switch (n.op) {
      case Op::kAdd: {
        std::vector<double> tmp(g);
        accumulate(g_of(n.a), tmp);
        accumulate(g_of(n.b), tmp);
        break;
      }
      case Op::kSub: {
        accumulate(g_of(n.a), g);
        std::vector<double> neg(g.size());
        for (size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate(g_of(n.b), neg);
        break;
      }
      case Op::kMul: {
        std::vector<double> ga(g.size()), gb(g.size());
        const bool as = av.is_scalar(), bs = bv.is_scalar();
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * (bs ? bv.v[0] : bv.v[i]);
          gb[i] = g[i] * (as ? av.v[0] : av.v[i]);
        }
        accumulate(g_of(n.a), ga);
        accumulate(g_of(n.b), gb);
        break;
      }
      case Op::kDiv: {
        std::vector<double> ga(g.size()), gb(g.size());
        const bool bs = bv.is_scalar();
        for (size_t i = 0; i < g.size(); ++i) {
          double bi = bs ? bv.v[0] : bv.v[i];
          double yi = n.out.v[i];
          ga[i] = g[i] / bi;
          gb[i] = -g[i] * yi / bi;
        }
        accumulate(g_of(n.a), ga);
        accumulate(g_of(n.b), gb);
        break;
      }
      case Op::kMatMul: {
        const int m = av.dims[0];
        const int k = av.rank() == 2 ? av.dims[1] : 1;
        const int p = bv.rank() == 2 ? bv.dims[1] : 1;
        std::vector<double> ga(av.v.size(), 0.0), gb(bv.v.size(), 0.0);
        // C = A(m,k) * B(k,p); gA = G * B^T, gB = A^T * G
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < p; ++j) {
            double gij = g[static_cast<size_t>(i) * p + j];
            if (gij == 0.0) continue;
            for (int t = 0; t < k; ++t) {
              ga[static_cast<size_t>(i) * k + t] += gij * bv.v[static_cast<size_t>(t) * p + j];
              gb[static_cast<size_t>(t) * p + j] += gij * av.v[static_cast<size_t>(i) * k + t];
            }
          }
        }
        accumulate(g_of(n.a), ga);
        accumulate(g_of(n.b), gb);
        break;
      }
      case Op::kSigmoid: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          double y = n.out.v[i];
          ga[i] = g[i] * y * (1.0 - y);
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kTanh: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          double y = n.out.v[i];
          ga[i] = g[i] * (1.0 - y * y);
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kRelu: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] = av.v[i] > 0.0 ? g[i] : 0.0;  // subgradient at 0 is 0
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kExp: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * n.out.v[i];
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kLog: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / av.v[i];
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kSum: {
        std::vector<double> ga(av.v.size(), g[0]);
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kSquare: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * g[i] * av.v[i];
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kConcat: {
        size_t na = av.v.size();
        std::vector<double> ga(g.begin(), g.begin() + static_cast<long>(na));
        std::vector<double> gb(g.begin() + static_cast<long>(na), g.end());
        accumulate(g_of(n.a), ga);
        accumulate(g_of(n.b), gb);
        break;
      }
      case Op::kSlice: {
        std::vector<double> ga(av.v.size(), 0.0);
        for (int i = 0; i < n.i1; ++i) ga[static_cast<size_t>(n.i0 + i)] = g[static_cast<size_t>(i)];
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kTranspose: {
        const int r = n.out.dims[0], c = n.out.dims[1];
        std::vector<double> ga(g.size());
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) {
            ga[static_cast<size_t>(j) * r + i] = g[static_cast<size_t>(i) * c + j];
          }
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kReciprocal: {
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          double y = n.out.v[i];
          ga[i] = -g[i] * y * y;
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kReshape: {
        accumulate(g_of(n.a), g);
        break;
      }
      case Op::kSpdInverse: {
        // Y = X^-1 with X symmetric: gX = -Y * G * Y
        const int d = n.out.dims[0];
        const auto& y = n.out.v;
        std::vector<double> yg(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) {
          for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int t = 0; t < d; ++t) s += y[static_cast<size_t>(i) * d + t] * g[static_cast<size_t>(t) * d + j];
            yg[static_cast<size_t>(i) * d + j] = s;
          }
        }
        std::vector<double> ga(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) {
          for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int t = 0; t < d; ++t) s += yg[static_cast<size_t>(i) * d + t] * y[static_cast<size_t>(t) * d + j];
            ga[static_cast<size_t>(i) * d + j] = -s;
          }
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kDirichlet: {
        // y = softmax(log-gamma draws); aux holds s_i = d log x_i / d alpha_i.
        // dL/da_i = s_i * y_i * (g_i - sum_j g_j y_j)
        const auto& y = n.out.v;
        double dot = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] = n.aux[i] * y[i] * (g[i] - dot);
        }
        accumulate(g_of(n.a), ga);
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
  return Gradients(std::move(grad), &nodes_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2)) {
    throw ShapeError("matmul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  const int m = a.dims[0];
  const int k = a.dims[1];
  const int kb = b.dims[0];
  const int p = b.rank() == 2 ? b.dims[1] : 1;
  if (k != kb) {
    throw ShapeError("matmul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = b.rank() == 2 ? Tensor::zeros({m, p}) : Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    for (int t = 0; t < k; ++t) {
      double ait = a.v[static_cast<size_t>(i) * k + t];
      if (ait == 0.0) continue;
      const size_t boff = static_cast<size_t>(t) * p;
      const size_t ooff = static_cast<size_t>(i) * p;
      for (int j = 0; j < p; ++j) out.v[ooff + j] += ait * b.v[boff + j];
    }
  }
  check_finite(out, Op::kMatMul);
  track(Op::kMatMul, const_cast<Tensor*>(&a), const_cast<Tensor*>(&b), out);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, EwKind::Add, Op::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, EwKind::Sub, Op::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, EwKind::Mul, Op::kMul); }
Tensor divide(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, EwKind::Div, Op::kDiv); }

Tensor sigmoid(const Tensor& x) {
  return elementwise_unary(x, Op::kSigmoid, +[](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}
Tensor tanh(const Tensor& x) {
  return elementwise_unary(x, Op::kTanh, +[](double v) { return std::tanh(v); });
}
Tensor relu(const Tensor& x) {
  return elementwise_unary(x, Op::kRelu, +[](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor exp(const Tensor& x) {
  return elementwise_unary(x, Op::kExp, +[](double v) { return std::exp(v); });
}
Tensor log(const Tensor& x) {
  return elementwise_unary(x, Op::kLog, +[](double v) { return std::log(v); });
}
Tensor square(const Tensor& x) {
  return elementwise_unary(x, Op::kSquare, +[](double v) { return v * v; });
}
Tensor reciprocal(const Tensor& x) {
  return elementwise_unary(x, Op::kReciprocal, +[](double v) { return 1.0 / v; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.v) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, Op::kSum);
  track(Op::kSum, const_cast<Tensor*>(&x), nullptr, out);
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw ShapeError("concat expects rank-1 tensors: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = Tensor::zeros({a.size() + b.size()});
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.size());
  check_finite(out, Op::kConcat);
  track(Op::kConcat, const_cast<Tensor*>(&a), const_cast<Tensor*>(&b), out);
  return out;
}

Tensor slice(const Tensor& x, int offset, int len) {
  if (x.rank() != 1) throw ShapeError("slice expects a rank-1 tensor, got " + x.shape_str());
  if (offset < 0 || len < 0 || offset + len > x.size()) {
    throw ShapeError("slice [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                     ") out of range for " + x.shape_str());
  }
  Tensor out = Tensor::zeros({len});
  std::copy(x.v.begin() + offset, x.v.begin() + offset + len, out.v.begin());
  track(Op::kSlice, const_cast<Tensor*>(&x), nullptr, out, offset, len);
  return out;
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose expects a rank-2 tensor, got " + m.shape_str());
  const int r = m.dims[0], c = m.dims[1];
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out(j, i) = m(i, j);
  }
  track(Op::kTranspose, const_cast<Tensor*>(&m), nullptr, out);
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> dims) {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  if (n != x.v.size()) {
    throw ShapeError("reshape " + x.shape_str() + " to " + shape_to_str(dims) +
                     " changes element count");
  }
  Tensor out(dims, x.v);
  track(Op::kReshape, const_cast<Tensor*>(&x), nullptr, out);
  return out;
}

Tensor spd_inverse(const Tensor& m) {
  if (m.rank() != 2 || m.dims[0] != m.dims[1]) {
    throw ShapeError("spd_inverse expects a square matrix, got " + m.shape_str());
  }
  const int n = m.dims[0];
  std::vector<double> chol = m.v;
  cholesky_in_place(chol, n);
  // invert L, then X^-1 = L^-T L^-1
  std::vector<double> linv(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    linv[static_cast<size_t>(j) * n + j] = 1.0 / chol[static_cast<size_t>(j) * n + j];
    for (int i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (int k = j; k < i; ++k) {
        s += chol[static_cast<size_t>(i) * n + k] * linv[static_cast<size_t>(k) * n + j];
      }
      linv[static_cast<size_t>(i) * n + j] = -s / chol[static_cast<size_t>(i) * n + i];
    }
  }
  Tensor out = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int k = i; k < n; ++k) {
        s += linv[static_cast<size_t>(k) * n + i] * linv[static_cast<size_t>(k) * n + j];
      }
      out(i, j) = s;
      out(j, i) = s;
    }
  }
  check_finite(out, Op::kSpdInverse);
  track(Op::kSpdInverse, const_cast<Tensor*>(&m), nullptr, out);
  return out;
}

Tensor add_scalar(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }
Tensor mul_scalar(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    char buf[176];
    std::snprintf(buf, sizeof(buf),
                  "%-28s max_rel_err=%.3e worst=%d kinks_skipped=%d tiny_skipped=%d %s",
                  e.name.c_str(), e.max_rel_err, e.worst_index, e.skipped_kinks, e.skipped_tiny,
                  e.pass ? "ok" : "FAIL");
    os << buf << "\n";
  }
  os << (all_pass ? "grad_check: all parameter groups pass" : "grad_check: FAILURES present");
  return os.str();
}

GradCheckReport grad_check(const GradFn& fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol) {
  std::vector<Tensor> plain;
  plain.reserve(params.size());
  for (const auto& [name, t] : params) plain.push_back(t.detached());

  auto eval = [&](const std::vector<Tensor>& p) {
    Tensor r = fn(p);
    return r.item();
  };

  const double f0 = eval(plain);
  const double f0_again = eval(plain);
  if (f0 != f0_again) {
    throw std::runtime_error("grad_check: function is non-deterministic "
                             "(two forward passes disagree)");
  }

  // reverse-mode gradients
  Tape tape;
  std::vector<Tensor> taped = plain;
  std::vector<Tensor> ad_grads;
  {
    TapeScope scope(tape);
    for (auto& t : taped) tape.leaf(t);
    Tensor loss = fn(taped);
    Gradients g = tape.backward(loss);
    for (auto& t : taped) ad_grads.push_back(g.at(t));
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (size_t pi = 0; pi < plain.size(); ++pi) {
    GradCheckEntry entry;
    entry.name = params[pi].first;
    for (int j = 0; j < plain[pi].size(); ++j) {
      const double orig = plain[pi].v[static_cast<size_t>(j)];
      plain[pi].v[static_cast<size_t>(j)] = orig + eps;
      const double fp = eval(plain);
      plain[pi].v[static_cast<size_t>(j)] = orig - eps;
      const double fm = eval(plain);
      plain[pi].v[static_cast<size_t>(j)] = orig;

      const double left = (f0 - fm) / eps;
      const double right = (fp - f0) / eps;
      const double scale = std::max({std::fabs(left), std::fabs(right), 1e-6});
      if (std::fabs(left - right) > 0.25 * scale + 1e-4) {
        // one-sided slopes disagree: the perturbation straddles a kink
        ++entry.skipped_kinks;
        continue;
      }
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double g_ad = ad_grads[pi].v[static_cast<size_t>(j)];
      // central differences carry rounding noise ~ eps_mach * |f| / eps; an
      // entry is only certifiable at tol if the gradient clears that floor
      const double f_scale = std::max({std::fabs(f0), std::fabs(fp), std::fabs(fm), 1e-3});
      const double fd_noise = 4.0 * 2.2e-16 * f_scale / (2.0 * eps);
      if (tol * (std::fabs(g_ad) + std::fabs(g_fd)) < 3.0 * fd_noise) {
        ++entry.skipped_tiny;
        continue;
      }
      const double rel = std::fabs(g_ad - g_fd) / std::max(1e-8, std::fabs(g_ad) + std::fabs(g_fd));
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = j;
      }
    }
    entry.pass = entry.max_rel_err <= tol;
    report.all_pass = report.all_pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dynakf
