#include "ftl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <thread>

#include "ftl/error.hpp"

namespace ftl {

std::string_view to_string(FeatureSpace space) {
  return space == FeatureSpace::kRich ? "g" : "f";
}

FeatureSpace parse_feature_space(std::string_view name) {
  if (name == "g" || name == "rich") return FeatureSpace::kRich;
  if (name == "f" || name == "discriminative") return FeatureSpace::kDiscriminative;
  fail(ErrorCode::kConfigInvalid, "unknown feature space '" + std::string(name) + "'");
}

std::string_view to_string(CenterMethod method) {
  switch (method) {
    case CenterMethod::kPickOne: return "PickOne";
    case CenterMethod::kAvgAll: return "AvgAll";
    case CenterMethod::kAvgFlip: return "AvgFlip";
  }
  return "Unknown";
}

IdentificationResult nn_identify(const std::vector<Vector>& gallery_centers, const Matrix& probes,
                                 std::span<const ClassId> probe_labels,
                                 std::span<const ClassId> ur_ids) {
  require(gallery_centers.size() >= 2, ErrorCode::kEmptyGallery,
          "nn_identify: need at least two gallery classes");
  require(probe_labels.size() == probes.rows(), ErrorCode::kDimensionMismatch,
          "nn_identify: label count does not match probes");
  const std::set<ClassId> ur(ur_ids.begin(), ur_ids.end());

  IdentificationResult out;
  out.predictions.resize(probes.rows());
  std::size_t correct_regular = 0;
  std::size_t correct_ur = 0;
  for (std::size_t k = 0; k < probes.rows(); ++k) {
    ClassId best = 0;
    double best_d = squared_distance(probes.row(k), gallery_centers[0]);
    for (ClassId c = 1; c < gallery_centers.size(); ++c) {
      const double d = squared_distance(probes.row(k), gallery_centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.predictions[k] = best;
    const bool hit = best == probe_labels[k];
    if (ur.count(probe_labels[k]) != 0) {
      ++out.n_ur;
      correct_ur += hit ? 1 : 0;
    } else {
      ++out.n_regular;
      correct_regular += hit ? 1 : 0;
    }
  }
  if (out.n_regular > 0)
    out.rank1_regular = static_cast<double>(correct_regular) / static_cast<double>(out.n_regular);
  if (out.n_ur > 0) out.rank1_ur = static_cast<double>(correct_ur) / static_cast<double>(out.n_ur);
  return out;
}

WeightNormStats weight_norm_stats(const Matrix& w) {
  require(w.rows() >= 1 && w.cols() >= 1, ErrorCode::kDimensionMismatch,
          "weight_norm_stats: empty weight matrix");
  WeightNormStats s;
  s.norms.resize(w.rows());
  for (std::size_t j = 0; j < w.rows(); ++j) s.norms[j] = norm(w.row(j));
  const double n = static_cast<double>(w.rows());
  for (double v : s.norms) s.mean += v;
  s.mean /= n;
  double var = 0.0;
  for (double v : s.norms) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / n);
  s.cv = s.mean > 0.0 ? s.std / s.mean : 0.0;
  return s;
}

double mean_weight_norm(const WeightNormStats& stats, std::span<const ClassId> ids) {
  if (ids.empty()) return 0.0;
  double total = 0.0;
  for (ClassId id : ids) total += stats.norms.at(id);
  return total / static_cast<double>(ids.size());
}

std::vector<RadiusProfile> variance_profile(const Matrix& features,
                                            std::span<const ClassId> labels,
                                            std::size_t n_classes) {
  require(labels.size() == features.rows(), ErrorCode::kDimensionMismatch,
          "variance_profile: label count does not match features");
  std::vector<Vector> centers(n_classes, Vector(features.cols(), 0.0));
  std::vector<RadiusProfile> out(n_classes);
  for (std::size_t k = 0; k < features.rows(); ++k) {
    require(labels[k] < n_classes, ErrorCode::kLabelOutOfRange, "variance_profile: bad label");
    auto g = features.row(k);
    for (std::size_t i = 0; i < g.size(); ++i) centers[labels[k]][i] += g[i];
    ++out[labels[k]].count;
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    require(out[c].count > 0, ErrorCode::kEmptyClass,
            "variance_profile: class " + std::to_string(c) + " has no samples");
    for (double& v : centers[c]) v /= static_cast<double>(out[c].count);
    out[c].min = std::numeric_limits<double>::infinity();
  }
  for (std::size_t k = 0; k < features.rows(); ++k) {
    RadiusProfile& p = out[labels[k]];
    const double d = distance(features.row(k), centers[labels[k]]);
    p.min = std::min(p.min, d);
    p.max = std::max(p.max, d);
    p.mean += d;
  }
  for (RadiusProfile& p : out) p.mean /= static_cast<double>(p.count);
  return out;
}

double CenterErrorTable::error(std::size_t subset_size, CenterMethod method) const {
  for (const CenterErrorCell& c : cells)
    if (c.subset_size == subset_size && c.method == method) return c.mean_error;
  fail(ErrorCode::kConfigInvalid, "center error table has no cell for subset size " +
                                      std::to_string(subset_size) + " / " +
                                      std::string(to_string(method)));
}

namespace {

Vector mean_of_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Vector c(m.cols(), 0.0);
  for (std::size_t r : rows) {
    auto g = m.row(r);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += g[i];
  }
  for (double& v : c) v /= static_cast<double>(rows.size());
  return c;
}

}  // namespace

CenterErrorTable center_error_study(const ImbalancedDataset& ds, const FeatureExtractor& extract,
                                    const CenterStudyConfig& cfg) {
  require(!cfg.subset_sizes.empty() && !cfg.methods.empty() && cfg.repetitions >= 1,
          ErrorCode::kConfigInvalid, "center study: empty subset sizes, methods or repetitions");
  const std::size_t max_subset = *std::max_element(cfg.subset_sizes.begin(), cfg.subset_sizes.end());
  require(*std::min_element(cfg.subset_sizes.begin(), cfg.subset_sizes.end()) >= 1,
          ErrorCode::kConfigInvalid, "center study: subset sizes must be positive");

  const auto by_class = ds.indices_by_class();
  std::vector<ClassId> classes;
  for (ClassId id : ds.regular_ids)
    if (by_class[id].size() >= max_subset) classes.push_back(id);
  require(classes.size() >= 2, ErrorCode::kInsufficientData,
          "center study: need at least two regular classes with " + std::to_string(max_subset) +
              " samples");

  const Matrix g = extract(inputs_matrix(ds));
  const Matrix gf = extract(flipped_inputs_matrix(ds));

  std::vector<Vector> truth(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) truth[c] = mean_of_rows(g, by_class[classes[c]]);
  double pair_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < truth.size(); ++a)
    for (std::size_t b = a + 1; b < truth.size(); ++b, ++pairs) pair_sum += distance(truth[a], truth[b]);
  const double normalizer = pair_sum / static_cast<double>(pairs);
  require(normalizer > 0.0, ErrorCode::kInsufficientData,
          "center study: all class centers coincide");

  TransferConfig flip_cfg = cfg.transfer;
  flip_cfg.use_flip = true;
  const std::size_t n_cells = cfg.subset_sizes.size() * cfg.methods.size();

  // Per-repetition error sums, reduced in repetition order afterwards.
  std::vector<Vector> per_rep(cfg.repetitions, Vector(n_cells, 0.0));
  auto run_rep = [&](std::size_t rep) {
    SeededRng rng(mix_seed(cfg.seed, rep));
    Vector& sums = per_rep[rep];
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<std::size_t> pool = by_class[classes[c]];
      for (std::size_t si = 0; si < cfg.subset_sizes.size(); ++si) {
        const std::size_t s = cfg.subset_sizes[si];
        // Partial Fisher-Yates: the first s entries become the subset.
        for (std::size_t i = 0; i < s; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
        const std::span<const std::size_t> subset(pool.data(), s);
        const std::size_t pick = subset[rng.index(s)];
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
          Vector estimate;
          switch (cfg.methods[mi]) {
            case CenterMethod::kPickOne:
              estimate.assign(g.row(pick).begin(), g.row(pick).end());
              break;
            case CenterMethod::kAvgAll:
              estimate = mean_of_rows(g, subset);
              break;
            case CenterMethod::kAvgFlip: {
              Matrix sg(s, g.cols());
              Matrix sf(s, g.cols());
              Vector poses(s);
              Vector flipped_poses(s);
              for (std::size_t k = 0; k < s; ++k) {
                std::copy(g.row(subset[k]).begin(), g.row(subset[k]).end(), sg.row(k).begin());
                std::copy(gf.row(subset[k]).begin(), gf.row(subset[k]).end(), sf.row(k).begin());
                poses[k] = ds.samples[subset[k]].pose;
                flipped_poses[k] = -poses[k];
              }
              estimate = estimate_center(sg, sf, poses, flipped_poses, flip_cfg);
              break;
            }
          }
          sums[si * cfg.methods.size() + mi] += distance(estimate, truth[c]) / normalizer;
        }
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.repetitions));
  if (jobs == 1) {
    for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) run_rep(rep);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t rep = w; rep < cfg.repetitions; rep += jobs) run_rep(rep);
      });
    }
    for (std::thread& t : workers) t.join();
  }

  CenterErrorTable table;
  table.normalizer = normalizer;
  table.n_classes = classes.size();
  table.repetitions = cfg.repetitions;
  const double denom = static_cast<double>(cfg.repetitions * classes.size());
  for (std::size_t si = 0; si < cfg.subset_sizes.size(); ++si) {
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      double total = 0.0;
      for (const Vector& sums : per_rep) total += sums[si * cfg.methods.size() + mi];
      table.cells.push_back({cfg.subset_sizes[si], cfg.methods[mi], total / denom});
    }
  }
  return table;
}

EvalReport evaluate(const NetworkParams& p, const ImbalancedDataset& train,
                    const ImbalancedDataset& test, FeatureSpace space,
                    const TransferConfig& gallery_cfg) {
  require(train.n_classes == test.n_classes && train.input_dim == test.input_dim &&
              train.input_dim == p.input_dim() && train.n_classes == p.n_classes(),
          ErrorCode::kDimensionMismatch, "evaluate: datasets and network disagree on shape");
  const FeatureExtractor extract =
      space == FeatureSpace::kRich ? rich_features(p) : discriminative_features(p);
  const TransferStats stats = update_stats(train, extract, gallery_cfg);

  std::vector<ClassId> train_labels(train.samples.size());
  for (std::size_t k = 0; k < train.samples.size(); ++k) train_labels[k] = train.samples[k].label;
  std::vector<ClassId> test_labels(test.samples.size());
  for (std::size_t k = 0; k < test.samples.size(); ++k) test_labels[k] = test.samples[k].label;

  const Matrix probes = extract(inputs_matrix(test));
  const IdentificationResult id = nn_identify(stats.centers(), probes, test_labels, train.ur_ids);

  EvalReport report;
  report.space = space;
  report.rank1_regular = id.rank1_regular;
  report.rank1_ur = id.rank1_ur;
  report.n_probe_regular = id.n_regular;
  report.n_probe_ur = id.n_ur;
  report.weight_norms = weight_norm_stats(p.fc);
  report.mean_norm_regular = mean_weight_norm(report.weight_norms, train.regular_ids);
  report.mean_norm_ur = mean_weight_norm(report.weight_norms, train.ur_ids);
  for (const ClassStats& cs : stats.classes) report.train_counts.push_back(cs.count);
  report.variance_profile = variance_profile(stats.features, train_labels, train.n_classes);
  report.gallery_cfg = gallery_cfg;
  return report;
}

}  // namespace ftl
