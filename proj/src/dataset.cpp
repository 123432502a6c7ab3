#include "ftl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "binary_io.hpp"
#include "ftl/error.hpp"

namespace ftl {

namespace {

constexpr std::string_view kDatasetMagic = "FTLD";
constexpr std::uint16_t kDatasetVersion = 1;

// Random unit vector orthogonal to every vector in `against` (each assumed
// unit-norm and mutually orthogonal), via Gram-Schmidt on a normal draw.
Vector random_orthogonal_unit(SeededRng& rng, std::size_t dim, const std::vector<Vector>& against) {
  for (;;) {
    Vector v(dim);
    for (double& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vector& a : against) {
        const double proj = dot(v, a);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * a[i];
      }
    }
    const double n = norm(v);
    if (n > 1e-8) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

Sample draw_sample(SeededRng& rng, const GroundTruth& truth, ClassId label) {
  const std::size_t dim = truth.class_means.cols();
  const std::size_t rank = truth.shared_factor.cols();
  Sample s;
  s.label = label;
  s.x.assign(truth.class_means.row(label).begin(), truth.class_means.row(label).end());
  for (std::size_t r = 0; r < rank; ++r) {
    const double z = rng.normal();
    for (std::size_t i = 0; i < dim; ++i) s.x[i] += truth.shared_factor(i, r) * z;
  }
  s.pose = rng.uniform(-90.0, 90.0);
  for (std::size_t i = 0; i < dim; ++i) s.x[i] += s.pose * truth.nuisance_dir[i];
  return s;
}

}  // namespace

Augmentation::Augmentation(Matrix m) : m_(std::move(m)) {
  require(m_.rows() == m_.cols(), ErrorCode::kDimensionMismatch,
          "Augmentation: matrix must be square");
}

Augmentation Augmentation::negate_axis(std::size_t dim, std::size_t axis) {
  require(axis < dim, ErrorCode::kConfigInvalid, "Augmentation::negate_axis: axis out of range");
  Matrix m = Matrix::identity(dim);
  m(axis, axis) = -1.0;
  return Augmentation(std::move(m));
}

Vector Augmentation::apply(std::span<const double> x) const { return matvec(m_, x); }

Sample Augmentation::apply(const Sample& s) const {
  return Sample{apply(std::span<const double>(s.x)), s.label, -s.pose};
}

bool ImbalancedDataset::is_ur(ClassId id) const {
  return std::find(ur_ids.begin(), ur_ids.end(), id) != ur_ids.end();
}

std::vector<std::vector<std::size_t>> ImbalancedDataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(n_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) out[samples[i].label].push_back(i);
  return out;
}

std::vector<std::size_t> ImbalancedDataset::indices_of(const std::vector<ClassId>& ids) const {
  const std::set<ClassId> wanted(ids.begin(), ids.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (wanted.count(samples[i].label) != 0) out.push_back(i);
  return out;
}

void ImbalancedDataset::validate() const {
  require(n_classes >= 1 && input_dim >= 1, ErrorCode::kConfigInvalid,
          "dataset: empty class set or input dimension");
  require(augmentation.matrix().rows() == input_dim, ErrorCode::kDimensionMismatch,
          "dataset: augmentation dimension does not match inputs");
  std::set<ClassId> regular(regular_ids.begin(), regular_ids.end());
  std::set<ClassId> ur(ur_ids.begin(), ur_ids.end());
  for (ClassId id : ur)
    require(regular.count(id) == 0, ErrorCode::kConfigInvalid,
            "dataset: class " + std::to_string(id) + " is both regular and UR");
  for (ClassId id : regular) require(id < n_classes, ErrorCode::kLabelOutOfRange, "dataset: bad id");
  for (ClassId id : ur) require(id < n_classes, ErrorCode::kLabelOutOfRange, "dataset: bad id");

  std::vector<std::size_t> counts(n_classes, 0);
  for (const Sample& s : samples) {
    require(s.label < n_classes, ErrorCode::kLabelOutOfRange,
            "dataset: label " + std::to_string(s.label) + " out of range");
    require(s.x.size() == input_dim, ErrorCode::kDimensionMismatch,
            "dataset: sample dimension mismatch");
    require(std::isfinite(s.pose) && std::all_of(s.x.begin(), s.x.end(),
                                                 [](double v) { return std::isfinite(v); }),
            ErrorCode::kNonFinite, "dataset: non-finite sample");
    ++counts[s.label];
  }
  for (ClassId id = 0; id < n_classes; ++id) {
    if (counts[id] == 0) continue;
    require(regular.count(id) + ur.count(id) == 1, ErrorCode::kConfigInvalid,
            "dataset: class " + std::to_string(id) + " is in neither partition");
    if (split != Split::kTrain) continue;
    if (ur.count(id) != 0)
      require(counts[id] <= ur_threshold, ErrorCode::kConfigInvalid,
              "dataset: UR class " + std::to_string(id) + " exceeds the UR threshold");
    else
      require(counts[id] > ur_threshold, ErrorCode::kConfigInvalid,
              "dataset: regular class " + std::to_string(id) + " is at or below the UR threshold");
  }
}

void GeneratorConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kConfigInvalid, "generator config: " + what);
  };
  check(n_regular + n_ur >= 1, "need at least one class");
  check(n_regular == 0 || samples_per_regular > ur_threshold,
        "samples_per_regular must exceed ur_threshold");
  check(n_ur == 0 || (samples_per_ur >= 1 && samples_per_ur <= ur_threshold),
        "samples_per_ur must lie in [1, ur_threshold]");
  check(input_dim >= 1, "input_dim must be positive");
  check(shared_cov_rank <= input_dim, "shared_cov_rank must not exceed input_dim");
  check(nuisance_strength == 0.0 || (input_dim >= 2 && shared_cov_rank < input_dim),
        "nuisance axis needs a dimension outside the shared factor and class means");
  check(std::isfinite(class_sep) && class_sep >= 0.0, "class_sep must be finite and nonnegative");
  check(std::isfinite(nuisance_strength) && nuisance_strength >= 0.0,
        "nuisance_strength must be finite and nonnegative");
}

GeneratedSplit generate_split(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t dim = cfg.input_dim;
  const std::uint32_t n_classes = cfg.n_regular + cfg.n_ur;
  SeededRng root(cfg.seed);
  SeededRng structure_rng = root.fork(1);
  SeededRng train_rng = root.fork(2);
  SeededRng test_rng = root.fork(3);

  GeneratedSplit out;
  GroundTruth& truth = out.truth;

  // Pose lives on the last axis; the shared factor and class means are kept
  // orthogonal to it, so negating that axis leaves every class distribution
  // invariant while negating pose.
  Vector nuisance_unit(dim, 0.0);
  nuisance_unit[dim - 1] = 1.0;
  std::vector<Vector> basis;
  if (cfg.nuisance_strength > 0.0) basis.push_back(nuisance_unit);
  truth.shared_factor = Matrix(dim, cfg.shared_cov_rank);
  for (std::uint32_t r = 0; r < cfg.shared_cov_rank; ++r) {
    Vector col = random_orthogonal_unit(structure_rng, dim, basis);
    for (std::size_t i = 0; i < dim; ++i) truth.shared_factor(i, r) = col[i];
    basis.push_back(std::move(col));
  }
  truth.nuisance_dir.assign(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i)
    truth.nuisance_dir[i] = nuisance_unit[i] * cfg.nuisance_strength / 90.0;

  const double radius = cfg.class_sep * std::sqrt(static_cast<double>(dim));
  truth.class_means = Matrix(n_classes, dim);
  const std::vector<Vector> mean_constraint =
      cfg.nuisance_strength > 0.0 ? std::vector<Vector>{nuisance_unit} : std::vector<Vector>{};
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    Vector mu = random_orthogonal_unit(structure_rng, dim, mean_constraint);
    for (std::size_t i = 0; i < dim; ++i) truth.class_means(c, i) = radius * mu[i];
  }

  ImbalancedDataset base;
  base.n_classes = n_classes;
  base.input_dim = cfg.input_dim;
  base.ur_threshold = cfg.ur_threshold;
  for (ClassId c = 0; c < cfg.n_regular; ++c) base.regular_ids.push_back(c);
  for (ClassId c = cfg.n_regular; c < n_classes; ++c) base.ur_ids.push_back(c);
  base.augmentation = cfg.nuisance_strength > 0.0 ? Augmentation::negate_axis(dim, dim - 1)
                                                  : Augmentation::identity(dim);

  out.train = base;
  out.test = base;
  out.test.split = Split::kTest;
  for (ClassId c = 0; c < n_classes; ++c) {
    const std::uint32_t count = c < cfg.n_regular ? cfg.samples_per_regular : cfg.samples_per_ur;
    for (std::uint32_t k = 0; k < count; ++k)
      out.train.samples.push_back(draw_sample(train_rng, truth, c));
    for (std::uint32_t k = 0; k < cfg.test_per_class; ++k)
      out.test.samples.push_back(draw_sample(test_rng, truth, c));
  }
  out.train.validate();
  return out;
}

ImbalancedDataset generate(const GeneratorConfig& cfg) { return generate_split(cfg).train; }

Sample flip(const ImbalancedDataset& ds, const Sample& s) { return ds.augmentation.apply(s); }

void save(const ImbalancedDataset& ds, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(ds.split));
  w.u32(ds.n_classes);
  w.u32(ds.input_dim);
  w.u32(ds.ur_threshold);
  w.u32(static_cast<std::uint32_t>(ds.regular_ids.size()));
  for (ClassId id : ds.regular_ids) w.u32(id);
  w.u32(static_cast<std::uint32_t>(ds.ur_ids.size()));
  for (ClassId id : ds.ur_ids) w.u32(id);
  const Matrix& m = ds.augmentation.matrix();
  w.u32(static_cast<std::uint32_t>(m.rows()));
  for (double v : m.data()) w.f64(v);
  w.u64(ds.samples.size());
  for (const Sample& s : ds.samples) {
    w.u32(s.label);
    w.f64(s.pose);
    for (double v : s.x) w.f64(v);
  }
  w.bytes("END!");
  w.write_file(path);
}

ImbalancedDataset load(const std::filesystem::path& path) {
  detail::ByteReader r = detail::ByteReader::from_file(path);
  if (r.remaining() < kDatasetMagic.size() || r.bytes(kDatasetMagic.size()) != kDatasetMagic)
    fail(ErrorCode::kCorruptRecord, path.string() + ": not a dataset file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion)
    fail(ErrorCode::kFormatVersionMismatch,
         path.string() + ": unsupported dataset version " + std::to_string(version));

  ImbalancedDataset ds;
  const std::uint16_t split = r.u16();
  if (split > 1) fail(ErrorCode::kCorruptRecord, path.string() + ": bad split tag");
  ds.split = static_cast<Split>(split);
  ds.n_classes = r.u32();
  ds.input_dim = r.u32();
  ds.ur_threshold = r.u32();
  const std::uint32_t n_regular = r.u32();
  r.expect_at_least(n_regular, 4);
  for (std::uint32_t i = 0; i < n_regular; ++i) ds.regular_ids.push_back(r.u32());
  const std::uint32_t n_ur = r.u32();
  r.expect_at_least(n_ur, 4);
  for (std::uint32_t i = 0; i < n_ur; ++i) ds.ur_ids.push_back(r.u32());
  const std::uint32_t aug_dim = r.u32();
  if (aug_dim != ds.input_dim)
    fail(ErrorCode::kCorruptRecord, path.string() + ": augmentation dimension mismatch");
  r.expect_at_least(static_cast<std::uint64_t>(aug_dim) * aug_dim, 8);
  Matrix m(aug_dim, aug_dim);
  for (double& v : m.data()) v = r.f64();
  ds.augmentation = Augmentation(std::move(m));

  const std::uint64_t n_samples = r.u64();
  r.expect_at_least(n_samples, 12 + 8 * static_cast<std::uint64_t>(ds.input_dim));
  ds.samples.resize(n_samples);
  for (Sample& s : ds.samples) {
    s.label = r.u32();
    s.pose = r.f64();
    s.x.resize(ds.input_dim);
    for (double& v : s.x) v = r.f64();
  }
  if (r.bytes(4) != "END!" || r.remaining() != 0)
    fail(ErrorCode::kCorruptRecord, path.string() + ": missing end marker");
  try {
    ds.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptRecord, path.string() + ": " + e.what());
  }
  return ds;
}

Matrix inputs_matrix(const ImbalancedDataset& ds) {
  Matrix x(ds.samples.size(), ds.input_dim);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    std::copy(ds.samples[i].x.begin(), ds.samples[i].x.end(), x.row(i).begin());
  return x;
}

Matrix flipped_inputs_matrix(const ImbalancedDataset& ds) {
  return matmul_bt(inputs_matrix(ds), ds.augmentation.matrix());
}

}  // namespace ftl
