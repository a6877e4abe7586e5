#include "dynakf/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dynakf {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'A', 'K', 'F', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

Tensor glorot_uniform(int rows, int cols, RngStream& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (double& x : t.v) x = (2.0 * rng.uniform01() - 1.0) * limit;
  return t;
}

template <typename T>
void write_pod(std::ostream& os, const T& x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T x{};
  is.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!is) throw CheckpointError("corrupt checkpoint: truncated file");
  return x;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  auto n = read_pod<std::uint32_t>(is);
  if (n > (1u << 26)) throw CheckpointError("corrupt checkpoint: absurd string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw CheckpointError("corrupt checkpoint: truncated file");
  return s;
}

}  // namespace

void bind_params(Tape& tape, const ParamList& params) {
  for (const auto& p : params) tape.leaf(*p.t);
}

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kNone: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw std::runtime_error("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "none";
}

Tensor DenseLayer::forward(const Tensor& x) const {
  return apply_activation(add(matmul(w, x), b), act);
}

DenseLayer make_dense(int in, int out, Activation act, RngStream& rng) {
  DenseLayer l;
  l.w = glorot_uniform(out, in, rng);
  l.b = Tensor::zeros({out});
  l.act = act;
  return l;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor t = x;
  for (const auto& layer : layers) t = layer.forward(t);
  return t;
}

void Mlp::collect(ParamList& out, const std::string& prefix) {
  for (size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + ".l" + std::to_string(i) + ".w", &layers[i].w});
    out.push_back({prefix + ".l" + std::to_string(i) + ".b", &layers[i].b});
  }
}

Mlp make_mlp(const std::vector<int>& dims, const std::vector<Activation>& acts,
             RngStream& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw std::runtime_error("make_mlp: need n+1 dims for n activations");
  }
  Mlp mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    mlp.layers.push_back(make_dense(dims[i], dims[i + 1], acts[i], rng));
  }
  return mlp;
}

LstmState LstmCell::initial_state() const {
  return {Tensor::zeros({hidden_dim()}), Tensor::zeros({hidden_dim()})};
}

LstmState LstmCell::step(const Tensor& input, const LstmState& state) const {
  if (input.size() != input_dim()) {
    throw ShapeError("lstm input " + input.shape_str() + " does not match cell input dim " +
                     std::to_string(input_dim()));
  }
  Tensor xh = concat(input, state.h);
  Tensor i_gate = sigmoid(add(matmul(wi, xh), bi));
  Tensor f_gate = sigmoid(add(matmul(wf, xh), bf));
  Tensor g_cand = tanh(add(matmul(wg, xh), bg));
  Tensor o_gate = sigmoid(add(matmul(wo, xh), bo));
  Tensor c_next = add(mul(f_gate, state.c), mul(i_gate, g_cand));
  Tensor h_next = mul(o_gate, tanh(c_next));
  return {h_next, c_next};
}

void LstmCell::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".wi", &wi});
  out.push_back({prefix + ".wf", &wf});
  out.push_back({prefix + ".wg", &wg});
  out.push_back({prefix + ".wo", &wo});
  out.push_back({prefix + ".bi", &bi});
  out.push_back({prefix + ".bf", &bf});
  out.push_back({prefix + ".bg", &bg});
  out.push_back({prefix + ".bo", &bo});
}

LstmCell make_lstm(int input, int hidden, RngStream& rng) {
  LstmCell cell;
  cell.wi = glorot_uniform(hidden, input + hidden, rng);
  cell.wf = glorot_uniform(hidden, input + hidden, rng);
  cell.wg = glorot_uniform(hidden, input + hidden, rng);
  cell.wo = glorot_uniform(hidden, input + hidden, rng);
  cell.bi = Tensor::zeros({hidden});
  cell.bf = Tensor::full({hidden}, 1.0);
  cell.bg = Tensor::zeros({hidden});
  cell.bo = Tensor::zeros({hidden});
  return cell;
}

Adam::Adam(const ParamList& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.push_back(Tensor::zeros(p.t->dims));
    v_.push_back(Tensor::zeros(p.t->dims));
  }
}

void Adam::step(const ParamList& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size() || params.size() != m_.size()) {
    throw OptimError("adam: parameter/gradient count mismatch");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].t;
    const Tensor& g = grads[i];
    if (!g.same_shape(w)) {
      throw OptimError("adam: gradient shape " + g.shape_str() + " does not match parameter " +
                       params[i].name + " " + w.shape_str());
    }
    if (!g.all_finite()) {
      throw OptimError("adam: non-finite gradient for parameter " + params[i].name);
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (size_t j = 0; j < w.v.size(); ++j) {
      m.v[j] = cfg_.beta1 * m.v[j] + (1.0 - cfg_.beta1) * g.v[j];
      v.v[j] = cfg_.beta2 * v.v[j] + (1.0 - cfg_.beta2) * g.v[j] * g.v[j];
      const double mh = m.v[j] / bc1;
      const double vh = v.v[j] / bc2;
      w.v[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void Adam::save_state(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (size_t i = 0; i < m_.size(); ++i) {
    out.emplace_back("adam.m." + std::to_string(i), m_[i]);
    out.emplace_back("adam.v." + std::to_string(i), v_[i]);
  }
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& in,
                      std::int64_t step_count) {
  step_ = step_count;
  for (size_t i = 0; i < m_.size(); ++i) {
    for (const auto& [name, t] : in) {
      if (name == "adam.m." + std::to_string(i)) m_[i] = t.detached();
      if (name == "adam.v." + std::to_string(i)) v_[i] = t.detached();
    }
  }
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint path for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, ckpt.version);
  write_pod<std::uint64_t>(os, ckpt.train_step);
  write_string(os, ckpt.config_json);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_string(os, name);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.dims) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("corrupt checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.version = read_pod<std::uint32_t>(is);
  if (ckpt.version != kVersion) {
    throw CheckpointError("checkpoint version mismatch: file has " +
                          std::to_string(ckpt.version) + ", expected " +
                          std::to_string(kVersion));
  }
  ckpt.train_step = read_pod<std::uint64_t>(is);
  ckpt.config_json = read_string(is);
  const auto count = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto rank = read_pod<std::uint32_t>(is);
    if (rank > 2) throw CheckpointError("corrupt checkpoint: tensor rank " + std::to_string(rank));
    std::vector<int> dims;
    size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      auto d = read_pod<std::uint32_t>(is);
      dims.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n > (1u << 28)) throw CheckpointError("corrupt checkpoint: absurd tensor size");
    Tensor t(dims, std::vector<double>(n));
    is.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw CheckpointError("corrupt checkpoint: truncated tensor data in " + path);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

Checkpoint snapshot_params(const ParamList& params, const std::string& config_json,
                           std::uint64_t train_step) {
  Checkpoint ckpt;
  ckpt.config_json = config_json;
  ckpt.train_step = train_step;
  for (const auto& p : params) ckpt.tensors.emplace_back(p.name, p.t->detached());
  return ckpt;
}

void restore_params(const ParamList& params, const Checkpoint& ckpt) {
  for (const auto& p : params) {
    const Tensor* t = ckpt.find(p.name);
    if (t == nullptr) throw CheckpointError("checkpoint is missing parameter " + p.name);
    if (t->dims != p.t->dims) {
      throw CheckpointError("checkpoint parameter " + p.name + " has shape " + t->shape_str() +
                            ", model expects " + p.t->shape_str());
    }
    *p.t = t->detached();
  }
}

}  // namespace dynakf
