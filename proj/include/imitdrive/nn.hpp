#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "errors.hpp"
#include "io.hpp"

namespace imitdrive {

enum class Activation : std::uint32_t {
  linear = 0,
  relu = 1,
  softsign = 2,
  /// (1/16) * sigmoid(3x): bounded, strictly positive variance.
  variance = 3,
  softmax = 4,
  /// First half of the units softsign, second half variance.
  mdn_head = 5,
};

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double softsign(double x) { return x / (1.0 + std::abs(x)); }
inline double variance_act(double x) { return (1.0 / 16.0) / (1.0 + std::exp(-3.0 * x)); }

inline double softsign_grad(double x) {
  const double d = 1.0 + std::abs(x);
  return 1.0 / (d * d);
}
inline double variance_act_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-3.0 * x));
  return (3.0 / 16.0) * s * (1.0 - s);
}

/// Column-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd y(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const auto e = (z.col(c).array() - z.col(c).maxCoeff()).exp();
    y.col(c) = e / e.sum();
  }
  return y;
}

inline Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::linear: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::softsign: return z.unaryExpr(&softsign);
    case Activation::variance: return z.unaryExpr(&variance_act);
    case Activation::softmax: return softmax(z);
    case Activation::mdn_head: {
      Eigen::MatrixXd y(z.rows(), z.cols());
      const Eigen::Index half = z.rows() / 2;
      y.topRows(half) = z.topRows(half).unaryExpr(&softsign);
      y.bottomRows(z.rows() - half) = z.bottomRows(z.rows() - half).unaryExpr(&variance_act);
      return y;
    }
  }
  throw ValidationError("unknown activation");
}

/// Gradient w.r.t. pre-activations given the gradient w.r.t. outputs.
inline Eigen::MatrixXd activation_backward(Activation act, const Eigen::MatrixXd& z, const Eigen::MatrixXd& y,
                                           const Eigen::MatrixXd& dy) {
  switch (act) {
    case Activation::linear: return dy;
    case Activation::relu: return (z.array() > 0.0).select(dy, 0.0);
    case Activation::softsign: return dy.cwiseProduct(z.unaryExpr(&softsign_grad));
    case Activation::variance: return dy.cwiseProduct(z.unaryExpr(&variance_act_grad));
    case Activation::softmax: {
      Eigen::MatrixXd dz(z.rows(), z.cols());
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double s = dy.col(c).dot(y.col(c));
        dz.col(c) = y.col(c).array() * (dy.col(c).array() - s);
      }
      return dz;
    }
    case Activation::mdn_head: {
      Eigen::MatrixXd dz(z.rows(), z.cols());
      const Eigen::Index half = z.rows() / 2;
      dz.topRows(half) = dy.topRows(half).cwiseProduct(z.topRows(half).unaryExpr(&softsign_grad));
      dz.bottomRows(z.rows() - half) =
          dy.bottomRows(z.rows() - half).cwiseProduct(z.bottomRows(z.rows() - half).unaryExpr(&variance_act_grad));
      return dz;
    }
  }
  throw ValidationError("unknown activation");
}

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd biases;   // out
  Activation activation = Activation::relu;
};

/// Fully connected network operating on column batches.
class DenseNet {
 public:
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // per layer
    std::vector<Eigen::MatrixXd> pre;     // per layer
    Eigen::MatrixXd output;
  };

  struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    void add(const Gradients& o) {
      for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i] += o.weights[i];
        biases[i] += o.biases[i];
      }
    }
  };

  DenseNet() = default;

  /// dims = {in, h1, ..., out}; hidden layers use `hidden`, the last layer `head`.
  DenseNet(const std::vector<int>& dims, Activation hidden, Activation head, std::mt19937_64& rng) {
    if (dims.size() < 2) throw ValidationError("network needs at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      DenseLayer layer;
      const int in = dims[i], out = dims[i + 1];
      if (in <= 0 || out <= 0) throw ValidationError("layer dims must be positive");
      std::normal_distribution<double> he(0.0, std::sqrt(2.0 / in));
      layer.weights.resize(out, in);
      for (Eigen::Index c = 0; c < in; ++c)
        for (Eigen::Index r = 0; r < out; ++r) layer.weights(r, c) = he(rng);
      layer.biases = Eigen::VectorXd::Zero(out);
      layer.activation = (i + 2 == dims.size()) ? head : hidden;
      layers_.push_back(std::move(layer));
    }
  }

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i)
      if (layers_[i].weights.cols() != layers_[i - 1].weights.rows())
        throw ValidationError("layer dims do not chain");
  }

  int input_dim() const { return static_cast<int>(layers_.front().weights.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weights.rows()); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
    return n;
  }

  Tape forward(const Eigen::MatrixXd& x) const {
    check_input(x);
    Tape t;
    Eigen::MatrixXd h = x;
    for (const auto& l : layers_) {
      t.inputs.push_back(h);
      Eigen::MatrixXd z = l.weights * h;
      z.colwise() += l.biases;
      h = apply_activation(l.activation, z);
      t.pre.push_back(std::move(z));
    }
    t.output = std::move(h);
    return t;
  }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const {
    check_input(x);
    Eigen::MatrixXd h = x;
    for (const auto& l : layers_) {
      Eigen::MatrixXd z = l.weights * h;
      z.colwise() += l.biases;
      h = apply_activation(l.activation, z);
    }
    return h;
  }

  /// Reverse pass; `d_output` is dLoss/dOutput with the batch in columns.
  Gradients backward(const Tape& t, const Eigen::MatrixXd& d_output) const {
    if (t.pre.size() != layers_.size()) throw ValidationError("tape does not match network");
    Gradients g;
    g.weights.resize(layers_.size());
    g.biases.resize(layers_.size());
    Eigen::MatrixXd dy = d_output;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& l = layers_[k];
      const Eigen::MatrixXd& y = (k + 1 == layers_.size()) ? t.output : t.inputs[k + 1];
      const Eigen::MatrixXd dz = activation_backward(l.activation, t.pre[k], y, dy);
      g.weights[k] = dz * t.inputs[k].transpose();
      g.biases[k] = dz.rowwise().sum();
      if (!g.weights[k].allFinite() || !g.biases[k].allFinite())
        throw NumericalError("non-finite gradient in layer " + std::to_string(k));
      if (k > 0) dy = l.weights.transpose() * dz;
    }
    return g;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& l : layers_) {
      g.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
      g.biases.push_back(Eigen::VectorXd::Zero(l.biases.size()));
    }
    return g;
  }

  bool operator==(const DenseNet& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].activation != o.layers_[i].activation || layers_[i].weights != o.layers_[i].weights ||
          layers_[i].biases != o.layers_[i].biases)
        return false;
    return true;
  }

 private:
  void check_input(const Eigen::MatrixXd& x) const {
    if (layers_.empty()) throw ValidationError("empty network");
    if (x.rows() != input_dim())
      throw ValidationError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                            std::to_string(input_dim()));
  }

  std::vector<DenseLayer> layers_;
};

inline constexpr int kMixtureComponents = 3;

/// Actor (means and variances), critic (state value) and mixing-weight
/// networks sharing one trunk shape.
struct PolicyNets {
  DenseNet actor;
  DenseNet critic;
  DenseNet mixing;

  bool operator==(const PolicyNets&) const = default;
};

/// Output-layer initialization of the actor and mixing networks.
struct HeadInit {
  /// Multiplies the He-initialized output weights.
  double output_gain = 1.0;
  /// Bias of the variance outputs (pre-activation).
  double variance_bias = 0.0;
};

/// in -> hidden -> hidden -> {12 mdn_head | 1 linear | 3 softmax}, ReLU
/// trunks, He-initialized weights and zero biases.
inline PolicyNets build_policy_networks(int input_dim, int hidden, std::uint64_t seed, const HeadInit& head = {}) {
  std::mt19937_64 rng(seed);
  PolicyNets n;
  n.actor = DenseNet({input_dim, hidden, hidden, 4 * kMixtureComponents}, Activation::relu, Activation::mdn_head, rng);
  n.critic = DenseNet({input_dim, hidden, hidden, 1}, Activation::relu, Activation::linear, rng);
  n.mixing = DenseNet({input_dim, hidden, hidden, kMixtureComponents}, Activation::relu, Activation::softmax, rng);
  n.actor.layers().back().weights *= head.output_gain;
  n.mixing.layers().back().weights *= head.output_gain;
  n.actor.layers().back().biases.tail(2 * kMixtureComponents).setConstant(head.variance_bias);
  return n;
}

/// Full-size networks: two hidden layers of 600 units.
inline PolicyNets build_full_networks(int input_dim, std::uint64_t seed = 0) {
  return build_policy_networks(input_dim, 600, seed);
}

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for a list of networks updated jointly.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void step(std::vector<DenseNet*> nets, const std::vector<DenseNet::Gradients>& grads) {
    if (nets.size() != grads.size()) throw ValidationError("one gradient set per network required");
    if (m_.empty()) {
      for (const DenseNet* n : nets) {
        m_.push_back(n->zero_gradients());
        v_.push_back(n->zero_gradients());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t n = 0; n < nets.size(); ++n) {
      auto& layers = nets[n]->layers();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        update(layers[k].weights, grads[n].weights[k], m_[n].weights[k], v_[n].weights[k], bc1, bc2);
        update(layers[k].biases, grads[n].biases[k], m_[n].biases[k], v_[n].biases[k], bc1, bc2);
      }
    }
  }

 private:
  template <typename P, typename G>
  void update(P& param, const G& grad, G& m, G& v, double bc1, double bc2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.epsilon);
  }

  AdamConfig cfg_;
  long t_ = 0;
  std::vector<DenseNet::Gradients> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoint layout (all integers uint32 little-endian, floats IEEE-754
// binary64 little-endian):
//   magic      8 bytes  "IMDRVCKP"
//   version    u32      = 1
//   net_count  u32      = 3 (actor, critic, mixing)
//   per net:   layer_count u32, then per layer: in u32, out u32, activation u32
//   payload:   per net, per layer: weights row-major (out x in) f64,
//              then biases (out) f64
//   crc32      u32      zlib CRC-32 of every preceding byte
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'I', 'M', 'D', 'R', 'V', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  double f64() {
    double v;
    take(&v, 8);
    return v;
  }
  std::size_t position() const { return pos_; }

 private:
  void take(void* dst, std::size_t n) {
    if (pos_ + n > data_.size()) throw ValidationError("checkpoint is truncated");
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

inline std::string serialize_checkpoint(const PolicyNets& nets) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  const DenseNet* list[3] = {&nets.actor, &nets.critic, &nets.mixing};
  detail::put_u32(out, 3);
  for (const DenseNet* n : list) {
    detail::put_u32(out, static_cast<std::uint32_t>(n->layers().size()));
    for (const auto& l : n->layers()) {
      detail::put_u32(out, static_cast<std::uint32_t>(l.weights.cols()));
      detail::put_u32(out, static_cast<std::uint32_t>(l.weights.rows()));
      detail::put_u32(out, static_cast<std::uint32_t>(l.activation));
    }
  }
  for (const DenseNet* n : list) {
    for (const auto& l : n->layers()) {
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) detail::put_f64(out, l.weights(r, c));
      for (Eigen::Index r = 0; r < l.biases.size(); ++r) detail::put_f64(out, l.biases[r]);
    }
  }
  detail::put_u32(out, detail::crc32_of(out));
  return out;
}

/// Parses a checkpoint. When `expected` is given, layer dims and activations
/// must match it.
inline PolicyNets deserialize_checkpoint(std::string_view bytes, const PolicyNets* expected = nullptr) {
  if (bytes.size() < 8 + 4 + 4 + 4) throw ValidationError("checkpoint is truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw ValidationError("not a checkpoint file");
  detail::Reader crc_reader(bytes.substr(bytes.size() - 4));
  if (crc_reader.u32() != detail::crc32_of(bytes.substr(0, bytes.size() - 4)))
    throw ValidationError("checkpoint checksum mismatch (corrupt or truncated file)");
  detail::Reader r(bytes.substr(8, bytes.size() - 12));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (r.u32() != 3) throw ValidationError("checkpoint must hold three networks");
  struct Shape {
    std::uint32_t in, out, act;
  };
  std::vector<std::vector<Shape>> shapes(3);
  for (auto& s : shapes) {
    const std::uint32_t count = r.u32();
    if (count == 0 || count > 64) throw ValidationError("implausible layer count in checkpoint");
    for (std::uint32_t k = 0; k < count; ++k) {
      Shape sh{r.u32(), r.u32(), r.u32()};
      if (sh.act > static_cast<std::uint32_t>(Activation::mdn_head)) throw ValidationError("unknown activation tag");
      s.push_back(sh);
    }
  }
  static const char* names[3] = {"actor", "critic", "mixing"};
  if (expected) {
    const DenseNet* exp[3] = {&expected->actor, &expected->critic, &expected->mixing};
    for (int n = 0; n < 3; ++n) {
      const auto& layers = exp[n]->layers();
      bool same = layers.size() == shapes[n].size();
      for (std::size_t k = 0; same && k < layers.size(); ++k)
        same = layers[k].weights.cols() == shapes[n][k].in && layers[k].weights.rows() == shapes[n][k].out &&
               static_cast<std::uint32_t>(layers[k].activation) == shapes[n][k].act;
      if (!same) {
        std::string got, want;
        for (const auto& s : shapes[n]) got += std::to_string(s.in) + "->" + std::to_string(s.out) + " ";
        for (const auto& l : layers) want += std::to_string(l.weights.cols()) + "->" + std::to_string(l.weights.rows()) + " ";
        throw ValidationError(std::string("checkpoint ") + names[n] + " dims [" + got + "] do not match configuration [" +
                              want + "]");
      }
    }
  }
  PolicyNets out;
  DenseNet* list[3] = {&out.actor, &out.critic, &out.mixing};
  for (int n = 0; n < 3; ++n) {
    std::vector<DenseLayer> layers;
    for (const Shape& sh : shapes[n]) {
      DenseLayer l;
      l.weights.resize(sh.out, sh.in);
      for (Eigen::Index row = 0; row < l.weights.rows(); ++row)
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(row, c) = r.f64();
      l.biases.resize(sh.out);
      for (Eigen::Index row = 0; row < l.biases.size(); ++row) l.biases[row] = r.f64();
      l.activation = static_cast<Activation>(sh.act);
      layers.push_back(std::move(l));
    }
    *list[n] = DenseNet(std::move(layers));
  }
  return out;
}

inline void save_checkpoint(const PolicyNets& nets, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(nets));
}

inline PolicyNets load_checkpoint(const std::string& path, const PolicyNets* expected = nullptr) {
  return deserialize_checkpoint(read_file(path), expected);
}

}  // namespace imitdrive
