// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

// The shared test helpers pull in doctest; this binary registers no cases.
#define DOCTEST_CONFIG_DISABLE

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "ftl/evaluation.hpp"
#include "ftl/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ftl;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

bool report(int id, const std::string& name, const Verdict& v, double seconds, double budget) {
  const bool in_budget = seconds <= budget;
  const bool ok = v.pass && in_budget;
  std::printf("criterion %d %s  %s: %s [%.1f s of %.0f s%s]\n", id, ok ? "PASS" : "FAIL",
              name.c_str(), v.detail.c_str(), seconds, budget, in_budget ? "" : ", over budget");
  std::fflush(stdout);
  return ok;
}

// ------------------------------------------------------------------ 1

Verdict gradient_correctness() {
  const std::array<LossWeights, 4> weight_sets{LossWeights{1.0, 0.0, 0.0}, LossWeights{0.0, 1.0, 0.0},
                                               LossWeights{0.0, 0.0, 1.0}, LossWeights{}};
  double worst = 0.0;
  std::size_t nets = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    SeededRng rng(5000 + seed);
    NetworkConfig cfg;
    cfg.input_dim = 3 + seed % 2;
    cfg.hidden_dim = 4;
    cfg.rich_dim = 3;
    cfg.feature_dim = 2 + seed % 2;
    cfg.n_classes = 2 + seed % 3;
    const NetworkParams p = gradcheck::random_params(cfg, rng);
    const Batch b = gradcheck::random_batch(rng, 5, cfg.input_dim, cfg.n_classes);
    for (const LossWeights& w : weight_sets) {
      const LossResult r = loss_total(p, b, w);
      worst = std::max(worst, gradcheck::max_gradient_error(p, r.grad, [&](const NetworkParams& q) {
                         return loss_total(q, b, w).loss.total;
                       }));
    }
    // Transferred-feature path used by stage 1.
    Matrix rich(4, cfg.rich_dim);
    for (double& v : rich.data()) v = rng.normal();
    std::vector<ClassId> labels(4);
    for (ClassId& l : labels) l = static_cast<ClassId>(rng.index(cfg.n_classes));
    const LossResult r = loss_features(p, rich, labels, LossWeights{});
    worst = std::max(worst, gradcheck::max_gradient_error(p, r.grad, [&](const NetworkParams& q) {
                       return loss_features(q, rich, labels, LossWeights{}).loss.total;
                     }));
    ++nets;
  }
  return {worst <= 1e-4 && nets >= 20,
          fmt("worst relative error %.2e over %zu networks (limit 1e-4)", worst, nets)};
}

// ------------------------------------------------------------------ 2

Verdict eigen_oracle() {
  double worst_value = 0.0, worst_angle = 0.0;
  std::size_t matrices = 0, vectors = 0;
  SeededRng rng(77);
  for (std::size_t rep = 0; rep < 25; ++rep) {
    for (std::size_t d = 1; d <= 8; ++d) {
      const Matrix a = oracle::random_symmetric(rng, d);
      const EigenResult eig = sym_eigen(a);
      const std::vector<double> ref = oracle::eigenvalues(a);
      for (std::size_t i = 0; i < d; ++i) {
        worst_value = std::max(worst_value, std::fabs(eig.eigenvalues[i] - ref[i]));
        double gap = INFINITY;
        if (i > 0) gap = std::min(gap, ref[i - 1] - ref[i]);
        if (i + 1 < d) gap = std::min(gap, ref[i] - ref[i + 1]);
        if (gap < 1e-4) continue;  // inverse iteration is ill-posed on clusters
        const Vector u = oracle::eigenvector(a, ref[i]);
        std::vector<double> col(d);
        for (std::size_t r = 0; r < d; ++r) col[r] = eig.eigenvectors(r, i);
        worst_angle = std::max(worst_angle, oracle::line_angle(col, u));
        ++vectors;
      }
      ++matrices;
    }
  }
  return {worst_value <= 1e-8 && worst_angle <= 1e-6,
          fmt("%zu matrices d<=8: eigenvalue error %.2e (limit 1e-8), angle %.2e rad over %zu vectors "
              "(limit 1e-6)",
              matrices, worst_value, worst_angle, vectors)};
}

// ------------------------------------------------------------------ 3

std::size_t nearest(const std::vector<Vector>& centers, std::span<const double> g) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < centers.size(); ++c)
    if (squared_distance(g, centers[c]) < squared_distance(g, centers[best])) best = c;
  return best;
}

Verdict transfer_identity() {
  const ImbalancedDataset ds = generate(GeneratorConfig{});
  const TransferStats stats = update_stats(ds, identity_features(), TransferConfig{});
  const std::vector<Vector> centers = stats.centers();
  const std::vector<std::size_t> regular = ds.indices_of(ds.regular_ids);
  SeededRng rng(2024);
  std::size_t hits = 0;
  double worst = 0.0;
  constexpr std::size_t kTransfers = 1000;
  for (std::size_t t = 0; t < kTransfers; ++t) {
    const std::size_t src = regular[rng.index(regular.size())];
    const ClassId tgt = ds.ur_ids[rng.index(ds.ur_ids.size())];
    const Vector g = transfer_feature(stats.features.row(src), centers[ds.samples[src].label],
                                      centers[tgt], stats.basis);
    hits += nearest(centers, g) == tgt ? 1 : 0;
    const Vector dev = subtract(g, centers[tgt]);
    worst = std::max(worst, distance(dev, project(stats.basis.q, dev)));
  }
  return {hits >= 950 && worst <= 1e-10,
          fmt("%zu/%zu nearest to target (need 950), residual outside span(Q) %.2e (limit 1e-10), "
              "basis rank %zu",
              hits, kTransfers, worst, stats.basis.q.cols())};
}

// ------------------------------------------------------------------ 4

Verdict center_ordering() {
  const ImbalancedDataset ds = generate(GeneratorConfig{});
  CenterStudyConfig cfg;
  cfg.repetitions = 100;
  cfg.seed = 0;
  const CenterErrorTable t = center_error_study(ds, identity_features(), cfg);
  bool ok = true;
  std::string cells;
  for (std::size_t s : cfg.subset_sizes) {
    const double flip = t.error(s, CenterMethod::kAvgFlip);
    const double all = t.error(s, CenterMethod::kAvgAll);
    const double one = t.error(s, CenterMethod::kPickOne);
    ok = ok && flip <= all && all <= one;
    cells += fmt("%s n=%zu %.4f<=%.4f<=%.4f", cells.empty() ? "" : ";", s, flip, all, one);
  }
  return {ok, "AvgFlip<=AvgAll<=PickOne " + cells};
}

// ------------------------------------------------------------------ 5, 6, 9 share these runs

struct SeedRun {
  GeneratedSplit data;
  NetworkParams pretrained;
  TrainReport ftl;
  TrainReport baseline;
  EvalReport ftl_eval;
  EvalReport baseline_eval;
};

SeedRun train_seed(std::uint64_t seed) {
  SeedRun run;
  GeneratorConfig g;
  g.seed = seed;
  run.data = generate_split(g);
  TrainConfig cfg;
  cfg.seed = seed;
  const TrainReport head = pretrain_report(run.data.train, cfg);
  run.pretrained = head.params;
  run.ftl = append_to_pretrain(alternate(head.params, run.data.train, cfg), head);
  run.baseline = append_to_pretrain(continue_plain(head.params, run.data.train, cfg), head);
  run.ftl_eval = evaluate(run.ftl.params, run.data.train, run.data.test,
                          FeatureSpace::kDiscriminative, cfg.transfer);
  run.baseline_eval = evaluate(run.baseline.params, run.data.train, run.data.test,
                               FeatureSpace::kDiscriminative, cfg.transfer);
  return run;
}

const Snapshot& last_phase(const TrainReport& r, const std::string& phase) {
  const Snapshot* out = nullptr;
  for (const Snapshot& s : r.snapshots)
    if (s.phase == phase) out = &s;
  if (out == nullptr) throw std::runtime_error("no " + phase + " snapshot");
  return *out;
}

Verdict weight_norm_imbalance(const std::vector<SeedRun>& runs) {
  bool imbalance = true;
  std::size_t cv_wins = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const Snapshot& base = runs[s].baseline.snapshots.back();
    const Snapshot& stage1 = last_phase(runs[s].ftl, "stage1");
    imbalance = imbalance && base.mean_norm_regular >= 1.10 * base.mean_norm_ur;
    cv_wins += stage1.weight_norm_cv < base.weight_norm_cv ? 1 : 0;
    per_seed += fmt("%s seed %zu norms %.3f/%.3f cv %.4f->%.4f", per_seed.empty() ? "" : ";", s,
                    base.mean_norm_regular, base.mean_norm_ur, base.weight_norm_cv,
                    stage1.weight_norm_cv);
  }
  return {imbalance && cv_wins >= 4,
          fmt("regular/UR norm ratio >= 1.10 on every seed: %s, stage-1 CV below baseline on %zu/5; ",
              imbalance ? "yes" : "no", cv_wins) +
              per_seed};
}

Verdict ftl_benefit(const std::vector<SeedRun>& runs) {
  std::size_t ur_wins = 0;
  double worst_drop = -INFINITY;
  bool budgets_equal = true;
  std::string per_seed;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const EvalReport& f = runs[s].ftl_eval;
    const EvalReport& b = runs[s].baseline_eval;
    ur_wins += f.rank1_ur >= b.rank1_ur ? 1 : 0;
    worst_drop = std::max(worst_drop, b.rank1_regular - f.rank1_regular);
    budgets_equal = budgets_equal && runs[s].ftl.gradient_steps == runs[s].baseline.gradient_steps;
    per_seed += fmt("%s seed %zu UR %.3f vs %.3f reg %.3f vs %.3f", per_seed.empty() ? "" : ";", s,
                    f.rank1_ur, b.rank1_ur, f.rank1_regular, b.rank1_regular);
  }
  return {ur_wins >= 4 && worst_drop <= 0.01 && budgets_equal,
          fmt("UR rank-1 FTL>=baseline on %zu/5, worst regular drop %.4f (limit 0.01), equal budgets %s; ",
              ur_wins, worst_drop, budgets_equal ? "yes" : "no") +
              per_seed};
}

// ------------------------------------------------------------------ 7

Verdict ml2_direction() {
  double norm_plain_sum = 0.0, norm_reg_sum = 0.0, acc_plain_sum = 0.0, acc_reg_sum = 0.0;
  bool every_seed_lower = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GeneratorConfig g;
    g.n_regular = 10;
    g.n_ur = 0;
    g.samples_per_regular = 100;
    g.test_per_class = 50;
    g.input_dim = 8;
    g.shared_cov_rank = 3;
    g.class_sep = 1.5;
    g.nuisance_strength = 0.0;
    g.seed = seed;
    const GeneratedSplit split = generate_split(g);
    double norms[2], accs[2];
    for (int arm = 0; arm < 2; ++arm) {
      TrainConfig c;
      c.pretrain_iters = 4000;
      c.lr_pretrain = 1e-3;
      c.hidden_dim = 16;
      c.rich_dim = 8;
      c.feature_dim = 2;
      c.loss_weights = {1.0, 0.0, arm == 1 ? 0.001 : 0.0};
      c.seed = seed;
      const NetworkParams p = pretrain(split.train, c);
      const Matrix f = filter_batch(p, encode_batch(p, inputs_matrix(split.test)));
      const Matrix z = logits_batch(p, f);
      double norm_sum = 0.0;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < f.rows(); ++i) {
        norm_sum += norm(f.row(i));
        std::size_t best = 0;
        for (std::size_t j = 1; j < z.cols(); ++j)
          if (z(i, j) > z(i, best)) best = j;
        hits += best == split.test.samples[i].label ? 1 : 0;
      }
      norms[arm] = norm_sum / static_cast<double>(f.rows());
      accs[arm] = static_cast<double>(hits) / static_cast<double>(f.rows());
    }
    every_seed_lower = every_seed_lower && norms[1] < norms[0];
    norm_plain_sum += norms[0];
    norm_reg_sum += norms[1];
    acc_plain_sum += accs[0];
    acc_reg_sum += accs[1];
  }
  const double acc_drop_points = 100.0 * (acc_plain_sum - acc_reg_sum) / 5.0;
  return {every_seed_lower && acc_drop_points <= 0.2,
          fmt("mean feature norm %.3f with m-L2 vs %.3f without (lower on every seed: %s), "
              "test accuracy %.2f%% vs %.2f%% (drop %.2f points, limit 0.2)",
              norm_reg_sum / 5.0, norm_plain_sum / 5.0, every_seed_lower ? "yes" : "no",
              20.0 * acc_reg_sum, 20.0 * acc_plain_sum, acc_drop_points)};
}

// ------------------------------------------------------------------ 8

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Verdict determinism() {
  support::TempDir dir("acceptance-determinism");
  for (const char* run : {"a", "b"}) {
    const std::string root = (dir / run).string();
    if (cli({"generate", "--seed", "11", "--out", root + "/data"}) != 0 ||
        cli({"train", "--mode", "both", "--seed", "11", "--data", root + "/data", "--out",
             root + "/train"}) != 0 ||
        cli({"eval", "--data", root + "/data", "--checkpoint", root + "/train/ftl.ftlc", "--compare",
             root + "/train/baseline.ftlc", "--out", root + "/eval"}) != 0)
      return {false, "pipeline run failed"};
  }
  std::size_t compared = 0, identical = 0;
  for (const char* file : {"data/train.ftld", "data/test.ftld", "train/ftl.ftlc", "train/baseline.ftlc",
                           "train/summary.json", "eval/eval_report.json", "eval/eval_report_compare.json",
                           "eval/comparison.json", "eval/per_class.csv"}) {
    ++compared;
    identical += support::read_bytes(dir / "a" / file) == support::read_bytes(dir / "b" / file);
  }
  // Manifests agree on everything except timings and input locations.
  bool manifests = true;
  for (const char* step : {"data", "train", "eval"}) {
    auto strip = [&](const char* run) {
      nlohmann::json m = nlohmann::json::parse(support::read_bytes(dir / run / step / "manifest.json"));
      m.erase("timings");
      m.erase("inputs");
      return m;
    };
    manifests = manifests && strip("a") == strip("b");
  }
  return {identical == compared && manifests,
          fmt("%zu/%zu artifacts bit-identical across two runs (checkpoints, EvalReports), "
              "manifests equal: %s",
              identical, compared, manifests ? "yes" : "no")};
}

// ------------------------------------------------------------------ 9

Verdict freeze_contracts(const std::vector<SeedRun>& runs) {
  const SeedRun& run = runs.front();
  const ImbalancedDataset& ds = run.data.train;
  TrainConfig cfg;
  NetworkParams p = run.pretrained;
  OptimizerState opt = OptimizerState::for_params(p, cfg.lr_alternate);
  SeededRng rng(99);
  std::size_t checks = 0, violations = 0;
  for (std::size_t a = 0; a < cfg.total_alternations; ++a) {
    const TransferStats stats = update_stats(ds, rich_features(p), cfg.transfer);
    const NetworkParams before1 = p;
    stage1(p, ds, stats, cfg, opt, rng);
    violations += !(p.enc == before1.enc) + !(p.dec == before1.dec);
    violations += p.fc == before1.fc;  // stage 1 must actually move the classifier
    const NetworkParams before2 = p;
    stage2(p, ds, cfg, opt, rng);
    violations += !(p.fc == before2.fc);
    violations += p.enc == before2.enc;
    checks += 5;
  }
  double enc_grad = 0.0;
  for (const SeedRun& r : runs) enc_grad = std::max(enc_grad, r.ftl.max_transfer_enc_grad);
  return {violations == 0 && enc_grad == 0.0,
          fmt("%zu/%zu freeze checks over %zu alternations, max |dL/dEnc| on transferred batches %.1g",
              checks - violations, checks, cfg.total_alternations, enc_grad)};
}

}  // namespace

int main() {
  bool all = true;
  auto timed = [&](int id, const std::string& name, double budget, const std::function<Verdict()>& f) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    all = report(id, name, v, seconds_since(t0), budget) && all;
  };

  timed(1, "gradient correctness", 30, gradient_correctness);
  timed(2, "eigensolver oracle equivalence", 10, eigen_oracle);
  timed(3, "transfer identity preservation", 20, transfer_identity);
  timed(4, "center-estimation ordering", 60, center_ordering);

  // Criteria 5 and 6 read the same five training runs; each is charged the
  // full shared training time.
  const auto t0 = Clock::now();
  std::vector<SeedRun> runs;
  std::string train_error;
  try {
    for (std::uint64_t seed = 0; seed < 5; ++seed) runs.push_back(train_seed(seed));
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  const double shared = seconds_since(t0);
  auto shared_verdict = [&](const std::function<Verdict()>& f) {
    if (!train_error.empty()) return Verdict{false, "training threw: " + train_error};
    return f();
  };
  auto charged = [&](int id, const std::string& name, double budget,
                     const std::function<Verdict()>& f) {
    const auto t1 = Clock::now();
    const Verdict v = shared_verdict(f);
    all = report(id, name, v, shared + seconds_since(t1), budget) && all;
  };
  charged(5, "weight-norm imbalance", 180, [&] { return weight_norm_imbalance(runs); });
  charged(6, "FTL benefit direction", 300, [&] { return ftl_benefit(runs); });

  timed(7, "m-L2 effect direction", 60, ml2_direction);
  timed(8, "determinism", 600, determinism);
  timed(9, "freeze contracts", 600, [&] { return shared_verdict([&] { return freeze_contracts(runs); }); });

  std::printf("acceptance: %s\n", all ? "all criteria pass" : "FAILURES");
  return all ? 0 : 1;
}
