#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dynakf/random.hpp"
#include "dynakf/tensor.hpp"

namespace dynakf {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OptimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Named pointer to a parameter tensor owned by some model struct.
struct ParamRef {
  std::string name;
  Tensor* t;
};
using ParamList = std::vector<ParamRef>;

/// Registers every parameter as a leaf on the tape.
void bind_params(Tape& tape, const ParamList& params);

enum class Activation { kNone, kRelu, kTanh, kSigmoid };

Tensor apply_activation(const Tensor& x, Activation act);
Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

struct DenseLayer {
  Tensor w;  // (out, in)
  Tensor b;  // (out)
  Activation act = Activation::kNone;

  Tensor forward(const Tensor& x) const;
  int in_dim() const { return w.cols(); }
  int out_dim() const { return w.rows(); }
};

DenseLayer make_dense(int in, int out, Activation act, RngStream& rng);

struct Mlp {
  std::vector<DenseLayer> layers;

  Tensor forward(const Tensor& x) const;
  int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  void collect(ParamList& out, const std::string& prefix);
};

Mlp make_mlp(const std::vector<int>& dims, const std::vector<Activation>& acts,
             RngStream& rng);

struct LstmState {
  Tensor h;
  Tensor c;
};

/// Single LSTM cell. Gate weights act on [input; hidden].
struct LstmCell {
  Tensor wi, wf, wg, wo;  // each (hidden, in + hidden)
  Tensor bi, bf, bg, bo;  // each (hidden)

  int hidden_dim() const { return wi.rows(); }
  int input_dim() const { return wi.cols() - wi.rows(); }

  LstmState initial_state() const;
  /// Returns the new state; the cell output is state.h.
  LstmState step(const Tensor& input, const LstmState& state) const;
  void collect(ParamList& out, const std::string& prefix);
};

/// Forget-gate bias starts at +1; weights are Glorot-uniform.
LstmCell make_lstm(int input, int hidden, RngStream& rng);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment tensors mirror the parameter list the
/// optimizer was built for.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamList& params, AdamConfig cfg);

  void step(const ParamList& params, const std::vector<Tensor>& grads);
  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // checkpoint plumbing
  void save_state(std::vector<std::pair<std::string, Tensor>>& out) const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& in,
                  std::int64_t step_count);

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_json;
  std::uint64_t train_step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Little-endian binary: magic, version u32, train-step u64, config blob,
/// tensor count, then per tensor: name, rank, dims, raw f64 values.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_params(const ParamList& params, const std::string& config_json,
                           std::uint64_t train_step);
/// Copies checkpoint tensors into the parameter list by name; throws on
/// missing names or shape mismatches.
void restore_params(const ParamList& params, const Checkpoint& ckpt);

}  // namespace dynakf
