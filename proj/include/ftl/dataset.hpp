#ifndef FTL_DATASET_HPP_
#define FTL_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ftl/numerics.hpp"

namespace ftl {

using ClassId = std::uint32_t;

struct Sample {
  Vector x;
  ClassId label = 0;
  double pose = 0.0;  // synthetic yaw analogue, degrees in [-90, 90]

  friend bool operator==(const Sample&, const Sample&) = default;
};

// Linear involution on input space (M * M = I) paired with pose negation.
// The desk-scale stand-in for a horizontal image flip.
class Augmentation {
 public:
  Augmentation() = default;
  explicit Augmentation(Matrix m);

  static Augmentation identity(std::size_t dim) { return Augmentation(Matrix::identity(dim)); }
  // Negates one coordinate. Exact in floating point, so flip(flip(s)) == s.
  static Augmentation negate_axis(std::size_t dim, std::size_t axis);

  const Matrix& matrix() const noexcept { return m_; }
  Sample apply(const Sample& s) const;
  Vector apply(std::span<const double> x) const;

  friend bool operator==(const Augmentation&, const Augmentation&) = default;

 private:
  Matrix m_;
};

enum class Split : std::uint16_t { kTrain = 0, kTest = 1 };

struct ImbalancedDataset {
  std::vector<Sample> samples;
  // Held-out splits reuse the training partition but are exempt from the
  // per-class count rule.
  Split split = Split::kTrain;
  std::uint32_t n_classes = 0;
  std::vector<ClassId> regular_ids;
  std::vector<ClassId> ur_ids;
  std::uint32_t input_dim = 0;
  std::uint32_t ur_threshold = 20;
  Augmentation augmentation;

  bool is_ur(ClassId id) const;
  // Sample indices grouped by class id.
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  std::vector<std::size_t> indices_of(const std::vector<ClassId>& ids) const;
  // Throws ConfigInvalid/CorruptRecord if the partition or samples are inconsistent.
  void validate() const;

  friend bool operator==(const ImbalancedDataset&, const ImbalancedDataset&) = default;
};

struct GeneratorConfig {
  std::uint32_t n_regular = 50;
  std::uint32_t n_ur = 50;
  std::uint32_t samples_per_regular = 200;
  std::uint32_t samples_per_ur = 5;
  // Held-out probes per class, drawn from the same class distributions.
  std::uint32_t test_per_class = 5;
  std::uint32_t input_dim = 32;
  double class_sep = 0.5;
  std::uint32_t shared_cov_rank = 8;
  // Input-space displacement along the nuisance direction at |pose| = 90.
  double nuisance_strength = 20.0;
  std::uint32_t ur_threshold = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

// Parameters of the class-conditional model x = mu_i + B z + pose * u.
struct GroundTruth {
  Matrix class_means;      // n_classes x D
  Matrix shared_factor;    // D x shared_cov_rank, orthonormal columns
  Vector nuisance_dir;     // D, along the last axis, norm = nuisance_strength / 90
};

struct GeneratedSplit {
  ImbalancedDataset train;
  ImbalancedDataset test;
  GroundTruth truth;
};

GeneratedSplit generate_split(const GeneratorConfig& cfg);
ImbalancedDataset generate(const GeneratorConfig& cfg);

Sample flip(const ImbalancedDataset& ds, const Sample& s);

// Binary format: "FTLD", u16 version, little-endian u32/u64 counts and f64 values.
void save(const ImbalancedDataset& ds, const std::filesystem::path& path);
ImbalancedDataset load(const std::filesystem::path& path);

Matrix inputs_matrix(const ImbalancedDataset& ds);
Matrix flipped_inputs_matrix(const ImbalancedDataset& ds);

}  // namespace ftl

#endif  // FTL_DATASET_HPP_
