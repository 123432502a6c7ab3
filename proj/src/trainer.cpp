#include "ftl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ftl/error.hpp"

namespace ftl {

namespace {

// RNG streams forked from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kPretrainStream = 2;
constexpr std::uint64_t kAlternateStream = 3;
constexpr std::uint64_t kPlainStream = 4;

void emit(const EventSink& sink, TrainEvent event) {
  if (sink) sink(event);
}

void check_finite(const LossBreakdown& loss, const std::string& where) {
  if (!std::isfinite(loss.total))
    fail(ErrorCode::kDiverged, where + ": loss became non-finite");
}

Batch gather(const ImbalancedDataset& ds, std::span<const std::size_t> idx) {
  Batch b;
  b.x = Matrix(idx.size(), ds.input_dim);
  b.labels.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Sample& s = ds.samples[idx[k]];
    std::copy(s.x.begin(), s.x.end(), b.x.row(k).begin());
    b.labels[k] = s.label;
  }
  return b;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(m.row(idx[k]).begin(), m.row(idx[k]).end(), out.row(k).begin());
  return out;
}

std::vector<ClassId> labels_of(const ImbalancedDataset& ds, std::span<const std::size_t> idx) {
  std::vector<ClassId> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = ds.samples[idx[k]].label;
  return out;
}

std::vector<std::size_t> sample_uniform(SeededRng& rng, std::span<const std::size_t> pool,
                                        std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t& v : out) v = pool[rng.index(pool.size())];
  return out;
}

std::vector<std::size_t> all_indices(const ImbalancedDataset& ds) {
  std::vector<std::size_t> out(ds.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

void record(TrainReport* report, std::string stage, std::size_t alternation,
            std::size_t iteration, std::string batch, const LossBreakdown& loss) {
  if (report == nullptr) return;
  report->trace.push_back({std::move(stage), alternation, iteration, std::move(batch), loss});
  ++report->gradient_steps;
}

double max_abs(const NetworkParams& grad, Module m) {
  double out = 0.0;
  for (auto t : grad.tensors(m))
    for (double v : t) out = std::max(out, std::abs(v));
  return out;
}

LossWeights without_recon(const LossWeights& w) { return {w.sfmx, 0.0, w.reg}; }

}  // namespace

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kConfigInvalid, "train config: " + what);
  };
  check(pretrain_iters >= 1, "pretrain_iters must be at least 1");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(std::isfinite(lr_pretrain) && lr_pretrain >= 0.0, "lr_pretrain must be nonnegative");
  check(std::isfinite(lr_alternate) && lr_alternate >= 0.0, "lr_alternate must be nonnegative");
  check(min_pretrain_drop >= 0.0 && min_pretrain_drop < 1.0,
        "min_pretrain_drop must lie in [0, 1)");
  check(hidden_dim >= 1 && rich_dim >= 1 && feature_dim >= 1, "network sizes must be positive");
  loss_weights.validate();
  transfer.validate();
}

NetworkConfig TrainConfig::network_config(const ImbalancedDataset& ds) const {
  NetworkConfig n;
  n.input_dim = ds.input_dim;
  n.hidden_dim = hidden_dim;
  n.rich_dim = rich_dim;
  n.feature_dim = feature_dim;
  n.n_classes = ds.n_classes;
  return n;
}

Snapshot take_snapshot(const NetworkParams& params, const ImbalancedDataset& ds,
                       const std::string& phase, std::size_t alternation) {
  Snapshot s;
  s.phase = phase;
  s.alternation = alternation;
  const WeightNormStats norms = weight_norm_stats(params.fc);
  s.weight_norm_cv = norms.cv;
  s.mean_norm_regular = mean_weight_norm(norms, ds.regular_ids);
  s.mean_norm_ur = mean_weight_norm(norms, ds.ur_ids);

  const Matrix z = logits_batch(params, filter_batch(params, encode_batch(params, inputs_matrix(ds))));
  std::size_t hit_reg = 0, n_reg = 0, hit_ur = 0, n_ur = 0;
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    auto row = z.row(k);
    const auto pred = static_cast<ClassId>(std::max_element(row.begin(), row.end()) - row.begin());
    const bool hit = pred == ds.samples[k].label;
    if (ds.is_ur(ds.samples[k].label)) {
      ++n_ur;
      hit_ur += hit ? 1 : 0;
    } else {
      ++n_reg;
      hit_reg += hit ? 1 : 0;
    }
  }
  if (n_reg > 0) s.train_acc_regular = static_cast<double>(hit_reg) / static_cast<double>(n_reg);
  if (n_ur > 0) s.train_acc_ur = static_cast<double>(hit_ur) / static_cast<double>(n_ur);
  return s;
}

NetworkParams pretrain(const ImbalancedDataset& ds, const TrainConfig& cfg, TrainReport* report,
                       const EventSink& sink) {
  cfg.validate();
  ds.validate();
  const SeededRng root(cfg.seed);
  SeededRng init_rng = root.fork(kInitStream);
  SeededRng rng = root.fork(kPretrainStream);
  NetworkParams params = NetworkParams::init(cfg.network_config(ds), init_rng);
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr_pretrain);

  const std::vector<std::size_t> pool = all_indices(ds);
  double initial = 0.0;
  double tail_sum = 0.0;
  const std::size_t tail = std::min<std::size_t>(50, cfg.pretrain_iters);
  for (std::size_t it = 0; it < cfg.pretrain_iters; ++it) {
    const Batch batch = gather(ds, sample_uniform(rng, pool, cfg.batch_size));
    const LossBreakdown loss = train_step(params, batch, cfg.loss_weights, opt, Trainable::all());
    check_finite(loss, "pretrain");
    record(report, "pretrain", 0, it, "mixed", loss);
    if (it == 0) initial = loss.total;
    if (it + tail >= cfg.pretrain_iters) tail_sum += loss.total;
    if ((it + 1) % 500 == 0 || it + 1 == cfg.pretrain_iters)
      emit(sink, {"pretrain_progress",
                  {{"iteration", static_cast<double>(it + 1)}, {"loss", loss.total}}, ""});
  }
  const double final_loss = tail_sum / static_cast<double>(tail);
  if (report != nullptr) {
    report->pretrain_initial_loss = initial;
    report->pretrain_final_loss = final_loss;
  }
  if (final_loss > (1.0 - cfg.min_pretrain_drop) * initial)
    emit(sink, {"warning",
                {{"initial_loss", initial}, {"final_loss", final_loss}},
                "pretraining did not reach the expected loss reduction"});
  return params;
}

TransferredBatch transferred_batch(const ImbalancedDataset& ds, const TransferStats& stats,
                                   std::span<const std::size_t> regular_idx,
                                   std::span<const std::size_t> ur_idx) {
  require(regular_idx.size() == ur_idx.size(), ErrorCode::kDimensionMismatch,
          "transferred_batch: regular and UR batches differ in size");
  TransferredBatch out;
  out.rich = Matrix(regular_idx.size(), stats.features.cols());
  out.labels.resize(regular_idx.size());
  for (std::size_t k = 0; k < regular_idx.size(); ++k) {
    const ClassId src = ds.samples[regular_idx[k]].label;
    const ClassId tgt = ds.samples[ur_idx[k]].label;
    const Vector g = transfer_feature(stats.features.row(regular_idx[k]), stats.classes[src].center,
                                      stats.classes[tgt].center, stats.basis);
    std::copy(g.begin(), g.end(), out.rich.row(k).begin());
    out.labels[k] = tgt;
  }
  return out;
}

void stage1(NetworkParams& params, const ImbalancedDataset& ds, const TransferStats& stats,
            const TrainConfig& cfg, OptimizerState& opt, SeededRng& rng, TrainReport* report,
            std::size_t alternation, const EventSink& sink) {
  const LossWeights weights = without_recon(cfg.loss_weights);
  const std::vector<std::size_t> regular_pool = ds.indices_of(ds.regular_ids);
  const std::vector<std::size_t> ur_pool = ds.indices_of(ds.ur_ids);
  require(!regular_pool.empty(), ErrorCode::kInsufficientData, "stage1: no regular samples");
  if (stats.hard_list.empty())
    emit(sink, {"warning", {{"alternation", static_cast<double>(alternation)}},
                "hard list is empty; sampling regular batches uniformly"});
  if (ur_pool.empty())
    emit(sink, {"warning", {{"alternation", static_cast<double>(alternation)}},
                "no UR samples; UR and transferred batches are skipped"});

  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    // Regular batch from the hard list, topped up from all regular samples.
    std::vector<std::size_t> reg_idx;
    if (stats.hard_list.size() >= cfg.batch_size) {
      reg_idx = sample_uniform(rng, stats.hard_list, cfg.batch_size);
    } else {
      reg_idx = stats.hard_list;
      const auto extra = sample_uniform(rng, regular_pool, cfg.batch_size - reg_idx.size());
      reg_idx.insert(reg_idx.end(), extra.begin(), extra.end());
    }
    const Matrix reg_g = gather_rows(stats.features, reg_idx);
    const std::vector<ClassId> reg_y = labels_of(ds, reg_idx);
    LossBreakdown loss = train_step_features(params, reg_g, reg_y, weights, opt);
    check_finite(loss, "stage1");
    record(report, "stage1", alternation, it, "regular", loss);

    if (ur_pool.empty()) continue;
    const std::vector<std::size_t> ur_idx = sample_uniform(rng, ur_pool, cfg.batch_size);
    const std::vector<ClassId> ur_y = labels_of(ds, ur_idx);
    loss = train_step_features(params, gather_rows(stats.features, ur_idx), ur_y, weights, opt);
    check_finite(loss, "stage1");
    record(report, "stage1", alternation, it, "ur", loss);

    const TransferredBatch transferred = transferred_batch(ds, stats, reg_idx, ur_idx);
    LossResult r = loss_features(params, transferred.rich, transferred.labels, weights);
    check_finite(r.loss, "stage1");
    if (report != nullptr)
      report->max_transfer_enc_grad = std::max(report->max_transfer_enc_grad, max_abs(r.grad, Module::kEnc));
    adam_step(params, r.grad, opt, Trainable::filter_and_fc());
    record(report, "stage1", alternation, it, "transfer", r.loss);
  }
}

void stage2(NetworkParams& params, const ImbalancedDataset& ds, const TrainConfig& cfg,
            OptimizerState& opt, SeededRng& rng, TrainReport* report, std::size_t alternation) {
  const std::vector<std::size_t> pool = all_indices(ds);
  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    const Batch batch = gather(ds, sample_uniform(rng, pool, cfg.batch_size));
    const LossBreakdown loss =
        train_step(params, batch, cfg.loss_weights, opt, Trainable::all_but_fc());
    check_finite(loss, "stage2");
    record(report, "stage2", alternation, it, "mixed", loss);
  }
}

std::size_t alternation_step_budget(const ImbalancedDataset& ds, const TrainConfig& cfg) {
  const std::size_t stage1_steps = ds.ur_ids.empty() ? 1 : 3;
  return cfg.total_alternations * cfg.n_iter * (stage1_steps + 1);
}

TrainReport alternate(NetworkParams params, const ImbalancedDataset& ds, const TrainConfig& cfg,
                      const EventSink& sink) {
  cfg.validate();
  TrainReport report;
  report.mode = "ftl";
  SeededRng rng = SeededRng(cfg.seed).fork(kAlternateStream);
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr_alternate);

  for (std::size_t a = 0; a < cfg.total_alternations; ++a) {
    const TransferStats stats = update_stats(ds, rich_features(params), cfg.transfer);
    stage1(params, ds, stats, cfg, opt, rng, &report, a, sink);
    Snapshot s1 = take_snapshot(params, ds, "stage1", a);
    s1.gradient_steps = report.gradient_steps;
    s1.hard_list_size = stats.hard_list.size();
    s1.basis_rank = stats.basis.q.cols();
    s1.basis_energy = stats.basis.energy;
    report.snapshots.push_back(s1);
    emit(sink, {"snapshot",
                {{"alternation", static_cast<double>(a)},
                 {"weight_norm_cv", s1.weight_norm_cv},
                 {"basis_rank", static_cast<double>(s1.basis_rank)},
                 {"hard_list_size", static_cast<double>(s1.hard_list_size)}},
                "stage1"});

    stage2(params, ds, cfg, opt, rng, &report, a);
    Snapshot s2 = take_snapshot(params, ds, "stage2", a);
    s2.gradient_steps = report.gradient_steps;
    report.snapshots.push_back(s2);
    emit(sink, {"snapshot",
                {{"alternation", static_cast<double>(a)}, {"weight_norm_cv", s2.weight_norm_cv}},
                "stage2"});
  }
  report.params = std::move(params);
  return report;
}

TrainReport continue_plain(NetworkParams params, const ImbalancedDataset& ds,
                           const TrainConfig& cfg, const EventSink& sink) {
  cfg.validate();
  TrainReport report;
  report.mode = "baseline";
  SeededRng rng = SeededRng(cfg.seed).fork(kPlainStream);
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr_alternate);
  const std::vector<std::size_t> pool = all_indices(ds);
  const std::size_t per_alternation =
      cfg.total_alternations == 0 ? 0 : alternation_step_budget(ds, cfg) / cfg.total_alternations;

  for (std::size_t a = 0; a < cfg.total_alternations; ++a) {
    for (std::size_t it = 0; it < per_alternation; ++it) {
      const Batch batch = gather(ds, sample_uniform(rng, pool, cfg.batch_size));
      const LossBreakdown loss = train_step(params, batch, cfg.loss_weights, opt, Trainable::all());
      check_finite(loss, "baseline");
      record(&report, "plain", a, it, "mixed", loss);
    }
    Snapshot s = take_snapshot(params, ds, "plain", a);
    s.gradient_steps = report.gradient_steps;
    report.snapshots.push_back(s);
    emit(sink, {"snapshot",
                {{"alternation", static_cast<double>(a)}, {"weight_norm_cv", s.weight_norm_cv}},
                "plain"});
  }
  report.params = std::move(params);
  return report;
}

TrainReport append_to_pretrain(TrainReport tail, TrainReport head) {
  head.mode = tail.mode;
  for (TraceEntry& e : tail.trace) head.trace.push_back(std::move(e));
  for (Snapshot& s : tail.snapshots) {
    s.gradient_steps += head.gradient_steps;
    head.snapshots.push_back(std::move(s));
  }
  head.gradient_steps += tail.gradient_steps;
  head.max_transfer_enc_grad = tail.max_transfer_enc_grad;
  head.params = std::move(tail.params);
  return head;
}

TrainReport pretrain_report(const ImbalancedDataset& ds, const TrainConfig& cfg,
                            const EventSink& sink) {
  TrainReport head;
  head.params = pretrain(ds, cfg, &head, sink);
  Snapshot s = take_snapshot(head.params, ds, "pretrain", 0);
  s.gradient_steps = head.gradient_steps;
  head.snapshots.push_back(s);
  emit(sink, {"snapshot", {{"weight_norm_cv", s.weight_norm_cv}}, "pretrain"});
  return head;
}

TrainReport run_ftl(const ImbalancedDataset& ds, const TrainConfig& cfg, const EventSink& sink) {
  TrainReport head = pretrain_report(ds, cfg, sink);
  NetworkParams params = head.params;
  return append_to_pretrain(alternate(std::move(params), ds, cfg, sink), std::move(head));
}

TrainReport run_baseline(const ImbalancedDataset& ds, const TrainConfig& cfg,
                         const EventSink& sink) {
  TrainReport head = pretrain_report(ds, cfg, sink);
  NetworkParams params = head.params;
  return append_to_pretrain(continue_plain(std::move(params), ds, cfg, sink), std::move(head));
}

}  // namespace ftl
