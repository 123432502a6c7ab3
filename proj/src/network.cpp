#include "ftl/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "ftl/error.hpp"

namespace ftl {

namespace {

constexpr std::string_view kCheckpointMagic = "FTLC";
constexpr std::uint16_t kCheckpointVersion = 1;

Dense make_dense(std::size_t in, std::size_t out, Activation act, SeededRng& rng) {
  Dense d;
  d.weight = Matrix(out, in);
  d.bias.assign(out, 0.0);
  d.activation = act;
  const double limit = std::sqrt(3.0 / static_cast<double>(in));
  for (double& w : d.weight.data()) w = rng.uniform(-limit, limit);
  return d;
}

LayerStack make_stack(std::size_t in, std::size_t hidden, std::size_t out, SeededRng& rng) {
  LayerStack s;
  s.layers.push_back(make_dense(in, hidden, Activation::kTanh, rng));
  s.layers.push_back(make_dense(hidden, out, Activation::kIdentity, rng));
  return s;
}

LayerStack zeros_like(const LayerStack& shape) {
  LayerStack s = shape;
  for (Dense& d : s.layers) {
    std::fill(d.weight.data().begin(), d.weight.data().end(), 0.0);
    std::fill(d.bias.begin(), d.bias.end(), 0.0);
  }
  return s;
}

void validate_stack(const LayerStack& s, const char* name) {
  require(!s.layers.empty(), ErrorCode::kDimensionMismatch, std::string(name) + ": empty stack");
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const Dense& d = s.layers[l];
    require(d.bias.size() == d.weight.rows(), ErrorCode::kDimensionMismatch,
            std::string(name) + ": bias size does not match layer output");
    if (l > 0)
      require(d.weight.cols() == s.layers[l - 1].weight.rows(), ErrorCode::kDimensionMismatch,
              std::string(name) + ": layer dimensions do not chain");
  }
}

// Activations kept for backpropagation: inputs[l] feeds layer l, the final
// entry is the stack output.
struct StackCache {
  std::vector<Matrix> activations;
};

Matrix forward_cached(const LayerStack& stack, const Matrix& x, StackCache* cache) {
  require(x.cols() == stack.input_dim(), ErrorCode::kDimensionMismatch,
          "forward: input has " + std::to_string(x.cols()) + " columns, stack expects " +
              std::to_string(stack.input_dim()));
  Matrix h = x;
  if (cache != nullptr) cache->activations.assign(1, h);
  for (const Dense& d : stack.layers) {
    Matrix z = matmul_bt(h, d.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < z.cols(); ++c) {
        row[c] += d.bias[c];
        if (d.activation == Activation::kTanh) row[c] = std::tanh(row[c]);
      }
    }
    h = std::move(z);
    if (cache != nullptr) cache->activations.push_back(h);
  }
  return h;
}

// Accumulates parameter gradients into `grad` and returns dL/dx.
Matrix backward(const LayerStack& stack, const StackCache& cache, Matrix d_out, LayerStack& grad) {
  for (std::size_t l = stack.layers.size(); l-- > 0;) {
    const Dense& d = stack.layers[l];
    const Matrix& out = cache.activations[l + 1];
    const Matrix& in = cache.activations[l];
    if (d.activation == Activation::kTanh) {
      for (std::size_t i = 0; i < d_out.data().size(); ++i) {
        const double y = out.data()[i];
        d_out.data()[i] *= 1.0 - y * y;
      }
    }
    Dense& g = grad.layers[l];
    const Matrix dw = matmul_at(d_out, in);
    for (std::size_t i = 0; i < dw.data().size(); ++i) g.weight.data()[i] += dw.data()[i];
    for (std::size_t r = 0; r < d_out.rows(); ++r) {
      auto row = d_out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    d_out = matmul(d_out, d.weight);
  }
  return d_out;
}

Matrix single_row(std::span<const double> v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.row(0).begin());
  return m;
}

void check_labels(std::span<const ClassId> labels, std::size_t n_classes) {
  for (ClassId y : labels)
    require(y < n_classes, ErrorCode::kLabelOutOfRange,
            "label " + std::to_string(y) + " out of range for " + std::to_string(n_classes) +
                " classes");
}

// Softmax and m-L2 terms plus dL/dlogits for a batch of logits.
struct HeadTerms {
  double sfmx = 0.0;
  double reg = 0.0;
  Matrix d_logits;
};

HeadTerms head_terms(const Matrix& z, std::span<const ClassId> labels, const LossWeights& w) {
  const std::size_t batch = z.rows();
  const double inv_b = 1.0 / static_cast<double>(batch);
  HeadTerms t;
  t.d_logits = Matrix(z.rows(), z.cols());
  // Loss values are summed and then divided, exactly as the standalone
  // losses do, so a single-term composite reproduces them bit for bit.
  double sfmx_sum = 0.0, reg_sum = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    auto zr = z.row(b);
    auto dz = t.d_logits.row(b);
    const double sample_loss = loss_softmax(zr, labels[b]);
    sfmx_sum += sample_loss;
    reg_sum += dot(zr, zr);
    const double lse = sample_loss + zr[labels[b]];
    for (std::size_t j = 0; j < zr.size(); ++j) {
      const double prob = std::exp(zr[j] - lse);
      dz[j] = w.sfmx * (prob - (j == labels[b] ? 1.0 : 0.0)) * inv_b + w.reg * 2.0 * zr[j] * inv_b;
    }
  }
  t.sfmx = sfmx_sum / static_cast<double>(batch);
  t.reg = reg_sum / static_cast<double>(batch);
  return t;
}

// Shared tail of both loss paths: logits, classifier gradient and the
// gradient flowing back into the filter input.
Matrix filter_and_head(const NetworkParams& p, const Matrix& rich, std::span<const ClassId> labels,
                       const LossWeights& w, LossResult& result) {
  StackCache filter_cache;
  const Matrix f = forward_cached(p.filter, rich, &filter_cache);
  const Matrix z = matmul_bt(f, p.fc);
  HeadTerms head = head_terms(z, labels, w);
  result.loss.sfmx = head.sfmx;
  result.loss.reg = head.reg;
  result.grad.fc = matmul_at(head.d_logits, f);
  const Matrix d_f = matmul(head.d_logits, p.fc);
  return backward(p.filter, filter_cache, d_f, result.grad.filter);
}

void finish_total(LossResult& r, const LossWeights& w) {
  r.loss.total = w.sfmx * r.loss.sfmx + w.recon * r.loss.recon + w.reg * r.loss.reg;
}

}  // namespace

void NetworkConfig::validate() const {
  require(input_dim >= 1 && hidden_dim >= 1 && rich_dim >= 1 && feature_dim >= 1 &&
              n_classes >= 1,
          ErrorCode::kConfigInvalid, "network config: all dimensions must be positive");
}

NetworkParams NetworkParams::init(const NetworkConfig& cfg, SeededRng& rng) {
  cfg.validate();
  NetworkParams p;
  p.enc = make_stack(cfg.input_dim, cfg.hidden_dim, cfg.rich_dim, rng);
  p.dec = make_stack(cfg.rich_dim, cfg.hidden_dim, cfg.input_dim, rng);
  p.filter = make_stack(cfg.rich_dim, cfg.hidden_dim, cfg.feature_dim, rng);
  p.fc = Matrix(cfg.n_classes, cfg.feature_dim);
  const double limit = std::sqrt(3.0 / static_cast<double>(cfg.feature_dim));
  for (double& w : p.fc.data()) w = rng.uniform(-limit, limit);
  return p;
}

NetworkParams NetworkParams::zeros_like(const NetworkParams& shape) {
  NetworkParams p;
  p.enc = ftl::zeros_like(shape.enc);
  p.dec = ftl::zeros_like(shape.dec);
  p.filter = ftl::zeros_like(shape.filter);
  p.fc = Matrix(shape.fc.rows(), shape.fc.cols());
  return p;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (Module m : {Module::kEnc, Module::kDec, Module::kFilter, Module::kFc})
    for (auto t : tensors(m)) n += t.size();
  return n;
}

bool NetworkParams::all_finite() const {
  for (Module m : {Module::kEnc, Module::kDec, Module::kFilter, Module::kFc})
    for (auto t : tensors(m))
      if (!std::all_of(t.begin(), t.end(), [](double v) { return std::isfinite(v); })) return false;
  return true;
}

void NetworkParams::validate() const {
  validate_stack(enc, "encoder");
  validate_stack(dec, "decoder");
  validate_stack(filter, "filter");
  require(dec.input_dim() == enc.output_dim() && filter.input_dim() == enc.output_dim(),
          ErrorCode::kDimensionMismatch, "network: decoder/filter do not accept rich features");
  require(dec.output_dim() == enc.input_dim(), ErrorCode::kDimensionMismatch,
          "network: decoder output does not match input dimension");
  require(fc.cols() == filter.output_dim() && fc.rows() >= 1, ErrorCode::kDimensionMismatch,
          "network: classifier does not accept filter output");
}

std::vector<std::span<double>> NetworkParams::tensors(Module m) {
  std::vector<std::span<double>> out;
  auto add_stack = [&](LayerStack& s) {
    for (Dense& d : s.layers) {
      out.emplace_back(d.weight.data());
      out.emplace_back(d.bias);
    }
  };
  switch (m) {
    case Module::kEnc: add_stack(enc); break;
    case Module::kDec: add_stack(dec); break;
    case Module::kFilter: add_stack(filter); break;
    case Module::kFc: out.emplace_back(fc.data()); break;
  }
  return out;
}

std::vector<std::span<const double>> NetworkParams::tensors(Module m) const {
  std::vector<std::span<const double>> out;
  for (auto t : const_cast<NetworkParams*>(this)->tensors(m)) out.emplace_back(t);
  return out;
}

bool Trainable::operator[](Module m) const {
  switch (m) {
    case Module::kEnc: return enc;
    case Module::kDec: return dec;
    case Module::kFilter: return filter;
    case Module::kFc: return fc;
  }
  return false;
}

void LossWeights::validate() const {
  require(sfmx >= 0.0 && recon >= 0.0 && reg >= 0.0 && std::isfinite(sfmx) &&
              std::isfinite(recon) && std::isfinite(reg),
          ErrorCode::kConfigInvalid, "loss weights must be finite and nonnegative");
}

Matrix forward(const LayerStack& stack, const Matrix& x) { return forward_cached(stack, x, nullptr); }

Matrix encode_batch(const NetworkParams& p, const Matrix& x) { return forward(p.enc, x); }
Matrix filter_batch(const NetworkParams& p, const Matrix& g) { return forward(p.filter, g); }

Matrix logits_batch(const NetworkParams& p, const Matrix& f) {
  require(f.cols() == p.fc.cols(), ErrorCode::kDimensionMismatch,
          "logits: feature dimension does not match classifier");
  return matmul_bt(f, p.fc);
}

Vector encode(const NetworkParams& p, std::span<const double> x) {
  return forward(p.enc, single_row(x)).data();
}
Vector decode(const NetworkParams& p, std::span<const double> g) {
  return forward(p.dec, single_row(g)).data();
}
Vector filter(const NetworkParams& p, std::span<const double> g) {
  return forward(p.filter, single_row(g)).data();
}
Vector logits(const NetworkParams& p, std::span<const double> f) {
  require(f.size() == p.fc.cols(), ErrorCode::kDimensionMismatch,
          "logits: feature dimension does not match classifier");
  return matvec(p.fc, f);
}

double loss_recon(std::span<const double> x, std::span<const double> x_rec) {
  require(x.size() == x_rec.size(), ErrorCode::kDimensionMismatch,
          "loss_recon: input and reconstruction differ in size");
  return squared_distance(x, x_rec);
}

double loss_recon(const Matrix& x, const Matrix& x_rec) {
  require(x.rows() == x_rec.rows() && x.cols() == x_rec.cols() && x.rows() > 0,
          ErrorCode::kDimensionMismatch, "loss_recon: batch shapes differ");
  double total = 0.0;
  for (std::size_t b = 0; b < x.rows(); ++b) total += loss_recon(x.row(b), x_rec.row(b));
  return total / static_cast<double>(x.rows());
}

double loss_softmax(std::span<const double> z, ClassId label) {
  require(label < z.size(), ErrorCode::kLabelOutOfRange,
          "loss_softmax: label " + std::to_string(label) + " out of range");
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  return zmax + std::log(sum) - z[label];
}

double loss_softmax(const Matrix& z, std::span<const ClassId> labels) {
  require(z.rows() == labels.size() && !labels.empty(), ErrorCode::kDimensionMismatch,
          "loss_softmax: label count does not match batch");
  double total = 0.0;
  for (std::size_t b = 0; b < z.rows(); ++b) total += loss_softmax(z.row(b), labels[b]);
  return total / static_cast<double>(z.rows());
}

double loss_ml2(const Matrix& w, std::span<const double> f) {
  require(w.cols() == f.size(), ErrorCode::kDimensionMismatch,
          "loss_ml2: feature dimension does not match classifier");
  const Vector z = matvec(w, f);
  return dot(z, z);
}

double loss_ml2(const Matrix& w, const Matrix& f) {
  require(f.rows() > 0, ErrorCode::kEmptyBatch, "loss_ml2: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < f.rows(); ++b) total += loss_ml2(w, f.row(b));
  return total / static_cast<double>(f.rows());
}

LossResult loss_total(const NetworkParams& p, const Batch& batch, const LossWeights& weights) {
  require(batch.x.rows() > 0, ErrorCode::kEmptyBatch, "loss_total: empty batch");
  require(batch.labels.size() == batch.x.rows(), ErrorCode::kDimensionMismatch,
          "loss_total: label count does not match batch");
  check_labels(batch.labels, p.n_classes());

  LossResult result;
  result.grad = NetworkParams::zeros_like(p);

  StackCache enc_cache;
  const Matrix g = forward_cached(p.enc, batch.x, &enc_cache);
  Matrix d_g = filter_and_head(p, g, batch.labels, weights, result);

  StackCache dec_cache;
  const Matrix x_rec = forward_cached(p.dec, g, &dec_cache);
  const double inv_b = 1.0 / static_cast<double>(batch.x.rows());
  Matrix d_rec(x_rec.rows(), x_rec.cols());
  for (std::size_t i = 0; i < d_rec.data().size(); ++i)
    d_rec.data()[i] = weights.recon * 2.0 * (x_rec.data()[i] - batch.x.data()[i]) * inv_b;
  result.loss.recon = loss_recon(batch.x, x_rec);
  const Matrix d_g_rec = backward(p.dec, dec_cache, std::move(d_rec), result.grad.dec);
  for (std::size_t i = 0; i < d_g.data().size(); ++i) d_g.data()[i] += d_g_rec.data()[i];

  backward(p.enc, enc_cache, std::move(d_g), result.grad.enc);
  finish_total(result, weights);
  return result;
}

LossResult loss_features(const NetworkParams& p, const Matrix& rich,
                         std::span<const ClassId> labels, const LossWeights& weights) {
  require(rich.rows() > 0, ErrorCode::kEmptyBatch, "loss_features: empty batch");
  require(labels.size() == rich.rows(), ErrorCode::kDimensionMismatch,
          "loss_features: label count does not match batch");
  require(rich.cols() == p.rich_dim(), ErrorCode::kDimensionMismatch,
          "loss_features: rich feature dimension mismatch");
  check_labels(labels, p.n_classes());

  LossResult result;
  result.grad = NetworkParams::zeros_like(p);
  filter_and_head(p, rich, labels, weights, result);
  result.loss.recon = 0.0;
  result.loss.total = weights.sfmx * result.loss.sfmx + weights.reg * result.loss.reg;
  return result;
}

OptimizerState OptimizerState::for_params(const NetworkParams& p, double learning_rate) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.first_moment = NetworkParams::zeros_like(p);
  s.second_moment = NetworkParams::zeros_like(p);
  return s;
}

void adam_step(NetworkParams& p, const NetworkParams& grad, OptimizerState& state,
               const Trainable& trainable) {
  for (Module m : {Module::kEnc, Module::kDec, Module::kFilter, Module::kFc}) {
    if (!trainable[m]) continue;
    const std::uint64_t t = ++state.steps[static_cast<std::size_t>(m)];
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    auto params = p.tensors(m);
    auto grads = grad.tensors(m);
    auto m1 = state.first_moment.tensors(m);
    auto m2 = state.second_moment.tensors(m);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        const double g = grads[k][i];
        m1[k][i] = state.beta1 * m1[k][i] + (1.0 - state.beta1) * g;
        m2[k][i] = state.beta2 * m2[k][i] + (1.0 - state.beta2) * g * g;
        const double m_hat = m1[k][i] / bc1;
        const double v_hat = m2[k][i] / bc2;
        params[k][i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
      }
    }
  }
}

LossBreakdown train_step(NetworkParams& p, const Batch& batch, const LossWeights& weights,
                         OptimizerState& state, const Trainable& trainable) {
  LossResult r = loss_total(p, batch, weights);
  adam_step(p, r.grad, state, trainable);
  return r.loss;
}

LossBreakdown train_step_features(NetworkParams& p, const Matrix& rich,
                                  std::span<const ClassId> labels, const LossWeights& weights,
                                  OptimizerState& state) {
  LossResult r = loss_features(p, rich, labels, weights);
  adam_step(p, r.grad, state, Trainable::filter_and_fc());
  return r.loss;
}

void save_checkpoint(const NetworkParams& p, const std::filesystem::path& path) {
  p.validate();
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  for (const LayerStack* s : {&p.enc, &p.dec, &p.filter}) {
    w.u32(static_cast<std::uint32_t>(s->layers.size()));
    for (const Dense& d : s->layers) {
      w.u32(static_cast<std::uint32_t>(d.activation));
      w.u32(static_cast<std::uint32_t>(d.weight.rows()));
      w.u32(static_cast<std::uint32_t>(d.weight.cols()));
      for (double v : d.weight.data()) w.f64(v);
      for (double v : d.bias) w.f64(v);
    }
  }
  w.u32(static_cast<std::uint32_t>(p.fc.rows()));
  w.u32(static_cast<std::uint32_t>(p.fc.cols()));
  for (double v : p.fc.data()) w.f64(v);
  w.bytes("END!");
  w.write_file(path);
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r = detail::ByteReader::from_file(path);
  if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
    fail(ErrorCode::kCorruptRecord, path.string() + ": not a checkpoint file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    fail(ErrorCode::kFormatVersionMismatch,
         path.string() + ": unsupported checkpoint version " + std::to_string(version));

  NetworkParams p;
  for (LayerStack* s : {&p.enc, &p.dec, &p.filter}) {
    const std::uint32_t n_layers = r.u32();
    r.expect_at_least(n_layers, 12);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
      Dense d;
      const std::uint32_t act = r.u32();
      if (act > 1) fail(ErrorCode::kCorruptRecord, path.string() + ": unknown activation");
      d.activation = static_cast<Activation>(act);
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      r.expect_at_least(static_cast<std::uint64_t>(rows) * (cols + 1), 8);
      d.weight = Matrix(rows, cols);
      for (double& v : d.weight.data()) v = r.f64();
      d.bias.resize(rows);
      for (double& v : d.bias) v = r.f64();
      s->layers.push_back(std::move(d));
    }
  }
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  r.expect_at_least(static_cast<std::uint64_t>(rows) * cols, 8);
  p.fc = Matrix(rows, cols);
  for (double& v : p.fc.data()) v = r.f64();
  if (r.bytes(4) != "END!" || r.remaining() != 0)
    fail(ErrorCode::kCorruptRecord, path.string() + ": missing end marker");
  try {
    p.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptRecord, path.string() + ": " + e.what());
  }
  return p;
}

}  // namespace ftl
