#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dynakf {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of doubles, rank 1 or 2. When an op runs under an
/// open Tape, the result remembers its node id so backward() can reach it.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;
  int node = -1;
  std::uint64_t tape_serial = 0;

  Tensor() = default;
  Tensor(std::vector<int> d, std::vector<double> vals)
      : dims(std::move(d)), v(std::move(vals)) {}

  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor vec(std::vector<double> vals) {
    int n = static_cast<int>(vals.size());
    return Tensor({n}, std::move(vals));
  }
  static Tensor zeros(std::vector<int> d);
  static Tensor full(std::vector<int> d, double x);
  static Tensor identity(int n);
  static Tensor matrix(int rows, int cols, std::vector<double> vals);

  int rank() const { return static_cast<int>(dims.size()); }
  int size() const { return static_cast<int>(v.size()); }
  int rows() const { return dims.empty() ? 0 : dims[0]; }
  int cols() const { return rank() < 2 ? 1 : dims[1]; }
  bool is_scalar() const { return size() == 1; }
  double item() const;

  double& operator()(int i) { return v[static_cast<size_t>(i)]; }
  double operator()(int i) const { return v[static_cast<size_t>(i)]; }
  double& operator()(int i, int j) { return v[static_cast<size_t>(i) * dims[1] + j]; }
  double operator()(int i, int j) const { return v[static_cast<size_t>(i) * dims[1] + j]; }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }
  std::string shape_str() const;

  /// Copy of the values with no tape attachment.
  Tensor detached() const { return Tensor(dims, v); }

  double max_abs() const;
  bool all_finite() const;
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kSigmoid,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSum,
  kSquare,
  kConcat,
  kSlice,
  kTranspose,
  kReciprocal,
  kReshape,
  kSpdInverse,
  kDirichlet,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  int a = -1;
  int b = -1;
  int i0 = 0;  // op parameter (slice offset)
  int i1 = 0;  // op parameter (slice length)
  Tensor out;
  std::vector<double> aux;  // per-op extra state (Dirichlet: d log x / d alpha)
};

/// Per-node gradients produced by Tape::backward. Nodes the loss never
/// reached report zero gradients of the node's shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::vector<double>> slots, const std::vector<Node>* nodes)
      : slots_(std::move(slots)), nodes_(nodes) {}

  bool reached(int node_id) const;
  Tensor at(int node_id) const;
  Tensor at(const Tensor& t) const;

 private:
  std::vector<std::vector<double>> slots_;
  const std::vector<Node>* nodes_ = nullptr;
};

/// Append-only record of one forward computation. Single use: after
/// backward() the tape must be discarded and the graph re-recorded.
/// Confine each tape to one thread.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers t as a leaf and stamps its node id. Returns the id.
  int leaf(Tensor& t);

  Gradients backward(const Tensor& loss);

  std::uint64_t serial() const { return serial_; }
  size_t node_count() const { return nodes_.size(); }
  const Node& node_at(int id) const { return nodes_[static_cast<size_t>(id)]; }
  bool consumed() const { return consumed_; }

  int push(Node n);

 private:
  std::vector<Node> nodes_;
  std::uint64_t serial_;
  bool consumed_ = false;
};

/// Makes a tape the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// Forward ops. Each validates shapes, checks the result for non-finite
// values, and records a node when a tape is open.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor square(const Tensor& x);
Tensor concat(const Tensor& a, const Tensor& b);
Tensor slice(const Tensor& x, int offset, int len);
Tensor transpose(const Tensor& m);
Tensor reciprocal(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> dims);
/// Inverse of a symmetric positive definite matrix via Cholesky.
Tensor spd_inverse(const Tensor& m);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

// Gradient checking against central finite differences.
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int worst_index = -1;
  int skipped_kinks = 0;
  int skipped_tiny = 0;  // both gradients below finite-difference resolution
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool all_pass = true;
  std::string summary() const;
};

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of fn against central finite differences
/// for every element of every parameter. fn must be deterministic; elements
/// sitting on an activation kink (left/right slopes disagree) are skipped.
/// Relative error: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const GradFn& fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol);

}  // namespace dynakf
