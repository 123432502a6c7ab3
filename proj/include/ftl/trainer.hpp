#ifndef FTL_TRAINER_HPP_
#define FTL_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/evaluation.hpp"
#include "ftl/network.hpp"
#include "ftl/transfer.hpp"

namespace ftl {

struct TrainConfig {
  std::size_t pretrain_iters = 10000;
  std::size_t n_iter = 200;  // iterations per stage between alternations
  std::size_t total_alternations = 4;
  std::size_t batch_size = 64;
  double lr_pretrain = 2e-4;
  double lr_alternate = 1e-5;
  // Pretraining is expected to cut the loss by at least this fraction; a
  // shortfall is reported as a warning event.
  double min_pretrain_drop = 0.5;
  std::uint32_t hidden_dim = 64;
  std::uint32_t rich_dim = 32;
  std::uint32_t feature_dim = 32;
  LossWeights loss_weights;
  TransferConfig transfer;
  std::uint64_t seed = 0;

  void validate() const;
  NetworkConfig network_config(const ImbalancedDataset& ds) const;
};

// One structured progress record. `fields` holds numeric payload.
struct TrainEvent {
  std::string type;
  std::map<std::string, double> fields;
  std::string message;
};

using EventSink = std::function<void(const TrainEvent&)>;

struct TraceEntry {
  std::string stage;  // pretrain | stage1 | stage2 | plain
  std::size_t alternation = 0;
  std::size_t iteration = 0;
  std::string batch;  // mixed | regular | ur | transfer
  LossBreakdown loss;
};

struct Snapshot {
  std::string phase;  // pretrain | stage1 | stage2 | plain
  std::size_t alternation = 0;
  std::size_t gradient_steps = 0;
  double weight_norm_cv = 0.0;
  double mean_norm_regular = 0.0;
  double mean_norm_ur = 0.0;
  double train_acc_regular = 0.0;  // classifier argmax accuracy on the training set
  double train_acc_ur = 0.0;
  std::size_t hard_list_size = 0;
  std::size_t basis_rank = 0;
  double basis_energy = 0.0;
};

struct TrainReport {
  std::string mode;  // ftl | baseline
  std::vector<TraceEntry> trace;
  std::vector<Snapshot> snapshots;
  std::size_t gradient_steps = 0;
  double pretrain_initial_loss = 0.0;
  double pretrain_final_loss = 0.0;
  // Largest |dL/dEnc| seen on stage-1 transferred batches; zero by construction.
  double max_transfer_enc_grad = 0.0;
  NetworkParams params;
};

// Joint training of every module on the composite loss, no transfer.
NetworkParams pretrain(const ImbalancedDataset& ds, const TrainConfig& cfg,
                       TrainReport* report = nullptr, const EventSink& sink = {});

struct TransferredBatch {
  Matrix rich;  // one transferred feature per row
  std::vector<ClassId> labels;
};

// Row k carries regular sample regular_idx[k]'s deviation onto the class of
// UR sample ur_idx[k]. Both batches are uniform draws, so the pairing is a
// uniformly random one.
TransferredBatch transferred_batch(const ImbalancedDataset& ds, const TransferStats& stats,
                                   std::span<const std::size_t> regular_idx,
                                   std::span<const std::size_t> ur_idx);

// Filter and classifier only: hard regular batch, UR batch, then a batch of
// regular deviations transferred onto the UR batch's labels.
void stage1(NetworkParams& params, const ImbalancedDataset& ds, const TransferStats& stats,
            const TrainConfig& cfg, OptimizerState& opt, SeededRng& rng,
            TrainReport* report = nullptr, std::size_t alternation = 0, const EventSink& sink = {});

// Encoder, decoder and filter on the composite loss with the classifier frozen.
void stage2(NetworkParams& params, const ImbalancedDataset& ds, const TrainConfig& cfg,
            OptimizerState& opt, SeededRng& rng, TrainReport* report = nullptr,
            std::size_t alternation = 0);

// Alternation phase starting from pretrained params.
TrainReport alternate(NetworkParams params, const ImbalancedDataset& ds, const TrainConfig& cfg,
                      const EventSink& sink = {});

// Plain joint training with the same gradient-step budget as `alternate`.
TrainReport continue_plain(NetworkParams params, const ImbalancedDataset& ds,
                           const TrainConfig& cfg, const EventSink& sink = {});

// Pretraining with its trace and a "pretrain" snapshot.
TrainReport pretrain_report(const ImbalancedDataset& ds, const TrainConfig& cfg,
                            const EventSink& sink = {});
// Splices a continuation (`alternate` or `continue_plain`) onto a pretrain
// report; step counts in the continuation's snapshots become cumulative.
TrainReport append_to_pretrain(TrainReport continuation, TrainReport head);

TrainReport run_ftl(const ImbalancedDataset& ds, const TrainConfig& cfg, const EventSink& sink = {});
TrainReport run_baseline(const ImbalancedDataset& ds, const TrainConfig& cfg,
                         const EventSink& sink = {});

// Gradient steps spent by `alternate` on this dataset.
std::size_t alternation_step_budget(const ImbalancedDataset& ds, const TrainConfig& cfg);

Snapshot take_snapshot(const NetworkParams& params, const ImbalancedDataset& ds,
                       const std::string& phase, std::size_t alternation);

}  // namespace ftl

#endif  // FTL_TRAINER_HPP_
