#include "ftl/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "ftl/error.hpp"

namespace ftl {

void TransferConfig::validate() const {
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::kConfigInvalid,
          "transfer config: tau must be positive");
  require(energy > 0.0 && energy <= 1.0, ErrorCode::kConfigInvalid,
          "transfer config: energy must lie in (0, 1]");
  require(!k_override || *k_override >= 1, ErrorCode::kConfigInvalid,
          "transfer config: k_override must be positive");
}

FeatureExtractor identity_features() {
  return [](const Matrix& x) { return x; };
}

FeatureExtractor rich_features(const NetworkParams& p) {
  return [&p](const Matrix& x) { return encode_batch(p, x); };
}

FeatureExtractor discriminative_features(const NetworkParams& p) {
  return [&p](const Matrix& x) { return filter_batch(p, encode_batch(p, x)); };
}

Vector estimate_center(const Matrix& features, const Matrix& flipped,
                       std::span<const double> poses, std::span<const double> flipped_poses,
                       const TransferConfig& cfg) {
  const std::size_t n = features.rows();
  require(n >= 1, ErrorCode::kEmptyClass, "estimate_center: class has no samples");
  require(poses.size() == n, ErrorCode::kDimensionMismatch,
          "estimate_center: pose count does not match features");
  if (cfg.use_flip) {
    require(flipped.rows() == n && flipped.cols() == features.cols() &&
                flipped_poses.size() == n,
            ErrorCode::kDimensionMismatch, "estimate_center: flipped samples do not pair up");
  }

  std::vector<std::size_t> inliers;
  for (std::size_t k = 0; k < n; ++k) {
    const double flipped_pose = cfg.use_flip ? flipped_poses[k] : -poses[k];
    if (std::abs(poses[k]) + std::abs(flipped_pose) <= cfg.tau) inliers.push_back(k);
  }
  if (inliers.empty()) {
    for (std::size_t k = 0; k < n; ++k) inliers.push_back(k);
  }

  Vector center(features.cols(), 0.0);
  for (std::size_t k : inliers) {
    auto g = features.row(k);
    for (std::size_t i = 0; i < center.size(); ++i) center[i] += g[i];
    if (cfg.use_flip) {
      auto gf = flipped.row(k);
      for (std::size_t i = 0; i < center.size(); ++i) center[i] += gf[i];
    }
  }
  const double denom = static_cast<double>(inliers.size()) * (cfg.use_flip ? 2.0 : 1.0);
  for (double& c : center) c /= denom;
  return center;
}

Matrix accumulate_covariance(const Matrix& features, std::span<const ClassId> labels,
                             const std::vector<Vector>& centers,
                             std::span<const ClassId> regular_ids) {
  require(labels.size() == features.rows(), ErrorCode::kDimensionMismatch,
          "accumulate_covariance: label count does not match features");
  const std::size_t dim = features.cols();
  const std::set<ClassId> regular(regular_ids.begin(), regular_ids.end());

  std::vector<std::size_t> counts(centers.size(), 0);
  for (ClassId y : labels)
    if (regular.count(y) != 0) ++counts.at(y);
  bool enough = false;
  for (ClassId id : regular) enough = enough || (id < counts.size() && counts[id] >= 2);
  require(enough, ErrorCode::kInsufficientData,
          "accumulate_covariance: need a regular class with at least two samples");

  Matrix v(dim, dim);
  Vector dev(dim);
  for (std::size_t k = 0; k < features.rows(); ++k) {
    if (regular.count(labels[k]) == 0) continue;
    const Vector& c = centers.at(labels[k]);
    require(c.size() == dim, ErrorCode::kDimensionMismatch,
            "accumulate_covariance: center dimension mismatch");
    auto g = features.row(k);
    for (std::size_t i = 0; i < dim; ++i) dev[i] = g[i] - c[i];
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i; j < dim; ++j) v(i, j) += dev[i] * dev[j];
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < i; ++j) v(i, j) = v(j, i);
  return v;
}

TransferBasis build_basis(const Matrix& v, const TransferConfig& cfg) {
  cfg.validate();
  const EigenResult eig = sym_eigen(v);
  TransferBasis basis;
  if (cfg.k_override) {
    const std::size_t k = *cfg.k_override;
    require(k <= v.rows(), ErrorCode::kConfigInvalid,
            "build_basis: k_override " + std::to_string(k) + " exceeds dimension " +
                std::to_string(v.rows()));
    double total = 0.0;
    double captured = 0.0;
    for (std::size_t j = 0; j < eig.eigenvalues.size(); ++j) {
      const double lambda = std::max(eig.eigenvalues[j], 0.0);
      total += lambda;
      if (j < k) captured += lambda;
    }
    require(total > 0.0, ErrorCode::kDegenerateSpectrum, "build_basis: zero spectral mass");
    basis.q = Matrix(v.rows(), k);
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < k; ++c) basis.q(r, c) = eig.eigenvectors(r, c);
    basis.energy = captured / total;
  } else {
    basis.q = pca_truncate(eig, cfg.energy, &basis.energy);
  }
  return basis;
}

Vector transfer_feature(std::span<const double> g_src, std::span<const double> c_src,
                        std::span<const double> c_tgt, const TransferBasis& basis) {
  require(g_src.size() == c_src.size() && c_src.size() == c_tgt.size(),
          ErrorCode::kDimensionMismatch, "transfer_feature: feature and center sizes differ");
  Vector out = project(basis.q, subtract(g_src, c_src));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c_tgt[i];
  return out;
}

std::vector<Vector> TransferStats::centers() const {
  std::vector<Vector> out;
  out.reserve(classes.size());
  for (const ClassStats& c : classes) out.push_back(c.center);
  return out;
}

TransferStats update_stats(const ImbalancedDataset& ds, const FeatureExtractor& extract,
                           const TransferConfig& cfg) {
  cfg.validate();
  TransferStats stats;
  stats.features = extract(inputs_matrix(ds));
  if (cfg.use_flip) stats.flipped_features = extract(flipped_inputs_matrix(ds));
  const std::size_t dim = stats.features.cols();

  const auto by_class = ds.indices_by_class();
  stats.classes.resize(ds.n_classes);
  std::vector<ClassId> labels(ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) labels[k] = ds.samples[k].label;

  for (ClassId id = 0; id < ds.n_classes; ++id) {
    const auto& idx = by_class[id];
    require(!idx.empty(), ErrorCode::kEmptyClass,
            "update_stats: class " + std::to_string(id) + " has no samples");
    Matrix g(idx.size(), dim);
    Matrix gf(cfg.use_flip ? idx.size() : 0, dim);
    Vector poses(idx.size());
    Vector flipped_poses(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy(stats.features.row(idx[k]).begin(), stats.features.row(idx[k]).end(),
                g.row(k).begin());
      if (cfg.use_flip)
        std::copy(stats.flipped_features.row(idx[k]).begin(),
                  stats.flipped_features.row(idx[k]).end(), gf.row(k).begin());
      poses[k] = ds.samples[idx[k]].pose;
      flipped_poses[k] = -poses[k];
    }
    ClassStats& cs = stats.classes[id];
    cs.center = estimate_center(g, gf, poses, flipped_poses, cfg);
    cs.count = idx.size();
    if (ds.is_ur(id)) continue;

    Vector dist(idx.size());
    double total = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      dist[k] = distance(g.row(k), cs.center);
      total += dist[k];
    }
    cs.mean_radius = total / static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (dist[k] > cs.mean_radius) cs.hard_indices.push_back(idx[k]);
  }
  for (const ClassStats& cs : stats.classes)
    stats.hard_list.insert(stats.hard_list.end(), cs.hard_indices.begin(), cs.hard_indices.end());

  const Matrix v = accumulate_covariance(stats.features, labels, stats.centers(), ds.regular_ids);
  stats.basis = build_basis(v, cfg);
  for (ClassId id : ds.regular_ids) stats.basis.source_count += stats.classes[id].count;
  return stats;
}

}  // namespace ftl
