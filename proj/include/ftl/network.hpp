#ifndef FTL_NETWORK_HPP_
#define FTL_NETWORK_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/numerics.hpp"

namespace ftl {

enum class Activation : std::uint32_t { kIdentity = 0, kTanh = 1 };

// Fully connected layer y = act(W x + b), W is (out x in).
struct Dense {
  Matrix weight;
  Vector bias;
  Activation activation = Activation::kIdentity;

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct LayerStack {
  std::vector<Dense> layers;

  std::size_t input_dim() const { return layers.front().weight.cols(); }
  std::size_t output_dim() const { return layers.back().weight.rows(); }

  friend bool operator==(const LayerStack&, const LayerStack&) = default;
};

struct NetworkConfig {
  std::uint32_t input_dim = 32;
  std::uint32_t hidden_dim = 64;
  std::uint32_t rich_dim = 32;
  std::uint32_t feature_dim = 32;
  std::uint32_t n_classes = 100;

  void validate() const;
};

enum class Module : std::size_t { kEnc = 0, kDec = 1, kFilter = 2, kFc = 3 };

// Encoder (D -> hidden -> d_g), decoder (d_g -> hidden -> D), filter
// (d_g -> hidden -> d_f) and a bias-free classifier W (N_c x d_f).
// Hidden layers use tanh; the last layer of each stack is linear.
struct NetworkParams {
  LayerStack enc;
  LayerStack dec;
  LayerStack filter;
  Matrix fc;

  // Fan-in scaled uniform init, biases zero.
  static NetworkParams init(const NetworkConfig& cfg, SeededRng& rng);
  static NetworkParams zeros_like(const NetworkParams& shape);

  std::size_t input_dim() const { return enc.input_dim(); }
  std::size_t rich_dim() const { return enc.output_dim(); }
  std::size_t feature_dim() const { return filter.output_dim(); }
  std::size_t n_classes() const { return fc.rows(); }
  std::size_t parameter_count() const;
  bool all_finite() const;
  // Throws DimensionMismatch if the stacks do not chain.
  void validate() const;

  // Every parameter array of one module, in a fixed order.
  std::vector<std::span<double>> tensors(Module m);
  std::vector<std::span<const double>> tensors(Module m) const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct Trainable {
  bool enc = true;
  bool dec = true;
  bool filter = true;
  bool fc = true;

  bool operator[](Module m) const;
  static Trainable all() { return {}; }
  static Trainable filter_and_fc() { return {false, false, true, true}; }
  static Trainable all_but_fc() { return {true, true, true, false}; }
};

struct LossWeights {
  double sfmx = 1.0;
  double recon = 1.0;
  double reg = 0.25;

  void validate() const;
};

struct Batch {
  Matrix x;  // one sample per row
  std::vector<ClassId> labels;
};

struct LossBreakdown {
  double total = 0.0;
  double sfmx = 0.0;
  double recon = 0.0;
  double reg = 0.0;
};

struct LossResult {
  LossBreakdown loss;
  NetworkParams grad;  // same shapes as the params; zero where no path exists
};

// Single-sample forward passes.
Vector encode(const NetworkParams& p, std::span<const double> x);
Vector decode(const NetworkParams& p, std::span<const double> g);
Vector filter(const NetworkParams& p, std::span<const double> g);
Vector logits(const NetworkParams& p, std::span<const double> f);

// Batched forward passes, one sample per row.
Matrix forward(const LayerStack& stack, const Matrix& x);
Matrix encode_batch(const NetworkParams& p, const Matrix& x);
Matrix filter_batch(const NetworkParams& p, const Matrix& g);
Matrix logits_batch(const NetworkParams& p, const Matrix& f);

// Squared L2 reconstruction error summed over dimensions.
double loss_recon(std::span<const double> x, std::span<const double> x_rec);
// Batch mean of the above.
double loss_recon(const Matrix& x, const Matrix& x_rec);
// -log softmax(z)[label], max-subtracted.
double loss_softmax(std::span<const double> z, ClassId label);
double loss_softmax(const Matrix& z, std::span<const ClassId> labels);
// ||W f||^2.
double loss_ml2(const Matrix& w, std::span<const double> f);
// Batch mean of ||W f||^2 over the rows of `f`.
double loss_ml2(const Matrix& w, const Matrix& f);

// Weighted composite objective over a batch of inputs, with gradients for
// every parameter.
LossResult loss_total(const NetworkParams& p, const Batch& batch, const LossWeights& weights);

// Softmax + m-L2 on rich features fed directly to the filter; the encoder and
// decoder are bypassed and receive zero gradient.
LossResult loss_features(const NetworkParams& p, const Matrix& rich,
                         std::span<const ClassId> labels, const LossWeights& weights);

// Adam moments, one accumulator set per parameter and one step counter per
// module so that frozen modules keep their bias correction intact.
struct OptimizerState {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::array<std::uint64_t, 4> steps{};

  static OptimizerState for_params(const NetworkParams& p, double learning_rate);
};

void adam_step(NetworkParams& p, const NetworkParams& grad, OptimizerState& state,
               const Trainable& trainable);

LossBreakdown train_step(NetworkParams& p, const Batch& batch, const LossWeights& weights,
                         OptimizerState& state, const Trainable& trainable);

// Stage-1 transferred-batch update: filter and classifier only.
LossBreakdown train_step_features(NetworkParams& p, const Matrix& rich,
                                  std::span<const ClassId> labels, const LossWeights& weights,
                                  OptimizerState& state);

// "FTLC" checkpoint: versioned, shape headers, little-endian f64.
void save_checkpoint(const NetworkParams& p, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ftl

#endif  // FTL_NETWORK_HPP_
