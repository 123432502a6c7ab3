#ifndef FTL_TRANSFER_HPP_
#define FTL_TRANSFER_HPP_

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/network.hpp"
#include "ftl/numerics.hpp"

namespace ftl {

struct TransferConfig {
  // Pose bound for the center-estimation inlier set: |p| + |p_flipped| <= tau.
  double tau = 30.0;
  double energy = 0.95;
  std::optional<std::size_t> k_override;
  bool use_flip = true;

  void validate() const;
};

struct ClassStats {
  Vector center;
  std::size_t count = 0;
  // Regular classes only; zero and empty for UR classes.
  double mean_radius = 0.0;
  std::vector<std::size_t> hard_indices;  // dataset sample indices
};

struct TransferBasis {
  Matrix q;                  // d_g x k, orthonormal columns
  double energy = 0.0;       // fraction of spectral mass captured
  std::size_t source_count = 0;
};

// Maps a batch of inputs (one per row) to feature vectors (one per row).
using FeatureExtractor = std::function<Matrix(const Matrix&)>;

FeatureExtractor identity_features();
FeatureExtractor rich_features(const NetworkParams& p);
FeatureExtractor discriminative_features(const NetworkParams& p);

// Pose-filtered, flip-averaged class center. Rows of `features` and
// `flipped` are paired samples; when no sample passes the pose bound, all
// samples are used.
Vector estimate_center(const Matrix& features, const Matrix& flipped,
                       std::span<const double> poses, std::span<const double> flipped_poses,
                       const TransferConfig& cfg);

// Unnormalized scatter sum over the given regular classes:
//   V = sum_i sum_k (g_ik - c_i)(g_ik - c_i)^T
Matrix accumulate_covariance(const Matrix& features, std::span<const ClassId> labels,
                             const std::vector<Vector>& centers,
                             std::span<const ClassId> regular_ids);

TransferBasis build_basis(const Matrix& v, const TransferConfig& cfg);

// c_tgt + Q Q^T (g_src - c_src).
Vector transfer_feature(std::span<const double> g_src, std::span<const double> c_src,
                        std::span<const double> c_tgt, const TransferBasis& basis);

struct TransferStats {
  std::vector<ClassStats> classes;  // indexed by class id
  TransferBasis basis;
  Matrix features;        // one row per dataset sample
  Matrix flipped_features;
  // Sample indices of all regular samples farther than their class's mean radius.
  std::vector<std::size_t> hard_list;

  std::vector<Vector> centers() const;
};

TransferStats update_stats(const ImbalancedDataset& ds, const FeatureExtractor& extract,
                           const TransferConfig& cfg);

}  // namespace ftl

#endif  // FTL_TRANSFER_HPP_
