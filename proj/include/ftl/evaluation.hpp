#ifndef FTL_EVALUATION_HPP_
#define FTL_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/network.hpp"
#include "ftl/transfer.hpp"

namespace ftl {

enum class FeatureSpace { kRich, kDiscriminative };

std::string_view to_string(FeatureSpace space);
FeatureSpace parse_feature_space(std::string_view name);

struct IdentificationResult {
  double rank1_regular = 0.0;  // 0 when there are no regular probes
  double rank1_ur = 0.0;       // 0 when there are no UR probes
  std::size_t n_regular = 0;
  std::size_t n_ur = 0;
  std::vector<ClassId> predictions;
};

// Rank-1 nearest-center identification. Ties go to the lowest class id.
IdentificationResult nn_identify(const std::vector<Vector>& gallery_centers, const Matrix& probes,
                                 std::span<const ClassId> probe_labels,
                                 std::span<const ClassId> ur_ids);

struct WeightNormStats {
  Vector norms;  // ||w_j|| per class
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double cv = 0.0;   // std / mean
};

WeightNormStats weight_norm_stats(const Matrix& w);

struct RadiusProfile {
  std::size_t count = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

// Per-class distances from samples to the arithmetic-mean center.
std::vector<RadiusProfile> variance_profile(const Matrix& features,
                                            std::span<const ClassId> labels,
                                            std::size_t n_classes);

enum class CenterMethod { kPickOne, kAvgAll, kAvgFlip };

std::string_view to_string(CenterMethod method);

struct CenterStudyConfig {
  std::vector<std::size_t> subset_sizes{1, 5, 10, 20};
  std::vector<CenterMethod> methods{CenterMethod::kPickOne, CenterMethod::kAvgAll,
                                    CenterMethod::kAvgFlip};
  std::size_t repetitions = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  TransferConfig transfer;  // tau for the AvgFlip inlier rule
};

struct CenterErrorCell {
  std::size_t subset_size = 0;
  CenterMethod method = CenterMethod::kAvgAll;
  double mean_error = 0.0;
};

struct CenterErrorTable {
  std::vector<CenterErrorCell> cells;
  // Errors are divided by the mean pairwise distance between full-set centers.
  double normalizer = 0.0;
  std::size_t n_classes = 0;
  std::size_t repetitions = 0;

  double error(std::size_t subset_size, CenterMethod method) const;
};

// Estimates each regular class's center from random subsets and reports
// the normalized distance to its full-set arithmetic mean. Repetition r uses
// a stream derived from (seed, r), so results do not depend on `jobs`.
CenterErrorTable center_error_study(const ImbalancedDataset& ds, const FeatureExtractor& extract,
                                    const CenterStudyConfig& cfg);

struct EvalReport {
  FeatureSpace space = FeatureSpace::kDiscriminative;
  double rank1_regular = 0.0;
  double rank1_ur = 0.0;
  std::size_t n_probe_regular = 0;
  std::size_t n_probe_ur = 0;
  WeightNormStats weight_norms;
  double mean_norm_regular = 0.0;
  double mean_norm_ur = 0.0;
  std::vector<std::size_t> train_counts;
  std::vector<RadiusProfile> variance_profile;  // training features, chosen space
  TransferConfig gallery_cfg;
};

// Center-gallery evaluation: gallery centers come from the training split
// (estimated with `gallery_cfg`), probes from the held-out split.
EvalReport evaluate(const NetworkParams& p, const ImbalancedDataset& train,
                    const ImbalancedDataset& test, FeatureSpace space,
                    const TransferConfig& gallery_cfg);

// Mean row norm of W over the given classes.
double mean_weight_norm(const WeightNormStats& stats, std::span<const ClassId> ids);

}  // namespace ftl

#endif  // FTL_EVALUATION_HPP_
