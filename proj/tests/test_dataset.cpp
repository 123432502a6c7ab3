#include <doctest.h>

#include <cmath>
#include <map>

#include "ftl/dataset.hpp"
#include "ftl/numerics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ftl;
using support::code_of;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 0) {
  GeneratorConfig cfg;
  cfg.n_regular = 4;
  cfg.n_ur = 3;
  cfg.samples_per_regular = 30;
  cfg.samples_per_ur = 5;
  cfg.input_dim = 6;
  cfg.shared_cov_rank = 2;
  cfg.seed = seed;
  return cfg;
}

std::map<ClassId, std::size_t> class_counts(const ImbalancedDataset& ds) {
  std::map<ClassId, std::size_t> out;
  for (const Sample& s : ds.samples) ++out[s.label];
  return out;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("two regular classes of ten samples and no UR classes") {
  GeneratorConfig cfg;
  cfg.n_regular = 2;
  cfg.n_ur = 0;
  cfg.samples_per_regular = 10;
  cfg.input_dim = 4;
  // Ten samples per class only counts as regular below a threshold of ten,
  // and the shared factor must fit in four dimensions.
  cfg.ur_threshold = 9;
  cfg.shared_cov_rank = 2;
  const ImbalancedDataset ds = generate(cfg);
  CHECK(ds.samples.size() == 20);
  CHECK(ds.n_classes == 2);
  CHECK(ds.ur_ids.empty());
  CHECK(ds.regular_ids == std::vector<ClassId>{0, 1});
}

TEST_CASE("every UR class gets exactly samples_per_ur samples") {
  const GeneratorConfig cfg = [] {
    GeneratorConfig c;
    c.n_regular = 5;
    c.n_ur = 7;
    c.samples_per_regular = 40;
    c.samples_per_ur = 5;
    return c;
  }();
  const ImbalancedDataset ds = generate(cfg);
  const auto counts = class_counts(ds);
  for (ClassId id : ds.ur_ids) CHECK(counts.at(id) == 5);
  for (ClassId id : ds.regular_ids) CHECK(counts.at(id) == 40);
}

TEST_CASE("generation is seed-deterministic and seed-sensitive") {
  CHECK(generate(small_config(7)) == generate(small_config(7)));
  CHECK(generate_split(small_config(7)).test == generate_split(small_config(7)).test);
  CHECK_FALSE(generate(small_config(7)) == generate(small_config(8)));
}

TEST_CASE("partition follows the count rule across seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GeneratorConfig cfg = small_config(seed);
    cfg.n_regular = 1 + seed % 4;
    cfg.n_ur = seed % 3;
    cfg.samples_per_ur = 1 + seed % 20;
    cfg.samples_per_regular = 21 + seed;
    const ImbalancedDataset ds = generate(cfg);
    const auto counts = class_counts(ds);
    for (const auto& [id, n] : counts) CHECK(ds.is_ur(id) == (n <= ds.ur_threshold));
    CHECK(ds.regular_ids.size() + ds.ur_ids.size() == ds.n_classes);
    for (const Sample& s : ds.samples) {
      CHECK(s.pose >= -90.0);
      CHECK(s.pose <= 90.0);
    }
  }
}

TEST_CASE("samples follow mean plus shared factor plus pose") {
  const GeneratedSplit split = generate_split(small_config(3));
  const GroundTruth& t = split.truth;
  CHECK(t.shared_factor.rows() == 6);
  CHECK(t.shared_factor.cols() == 2);
  for (const Sample& s : split.train.samples) {
    // Residual after removing mean and pose must lie in span(B).
    Vector r = subtract(s.x, t.class_means.row(s.label));
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= s.pose * t.nuisance_dir[i];
    const Vector in_span = project(t.shared_factor, r);
    CHECK(distance(in_span, r) <= 1e-10 * std::max(1.0, norm(r)));
  }
  const double radius = 0.5 * std::sqrt(6.0);
  for (std::size_t c = 0; c < t.class_means.rows(); ++c)
    CHECK(norm(t.class_means.row(c)) == doctest::Approx(radius).epsilon(1e-12));
  CHECK(norm(t.nuisance_dir) == doctest::Approx(20.0 / 90.0).epsilon(1e-12));
}

TEST_CASE("within-class covariance of a large regular class spans B and the nuisance axis") {
  GeneratorConfig cfg;
  cfg.n_regular = 1;
  cfg.n_ur = 0;
  cfg.samples_per_regular = 1000;
  cfg.seed = 21;
  const GeneratedSplit split = generate_split(cfg);
  const ImbalancedDataset& ds = split.train;
  const std::size_t d = ds.input_dim;
  Vector mean(d, 0.0);
  for (const Sample& s : ds.samples)
    for (std::size_t i = 0; i < d; ++i) mean[i] += s.x[i] / static_cast<double>(ds.samples.size());
  Matrix cov(d, d);
  for (const Sample& s : ds.samples)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += (s.x[i] - mean[i]) * (s.x[j] - mean[j]);

  const std::size_t k = cfg.shared_cov_rank + 1;
  Matrix truth(d, k);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j + 1 < k; ++j) truth(i, j) = split.truth.shared_factor(i, j);
    truth(i, k - 1) = split.truth.nuisance_dir[i] / norm(split.truth.nuisance_dir);
  }
  const EigenResult eig = sym_eigen(cov);
  Matrix top(d, k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) top(i, j) = eig.eigenvectors(i, j);
  CHECK(oracle::subspace_residual(truth, top) <= std::sin(5.0 * M_PI / 180.0));
}

TEST_CASE("flip is an exact involution that negates pose") {
  const ImbalancedDataset ds = generate(small_config(1));
  for (const Sample& s : ds.samples) {
    const Sample f = flip(ds, s);
    CHECK(f.pose == -s.pose);
    CHECK(f.label == s.label);
    CHECK(flip(ds, f) == s);
  }
  Sample s{{1.0, 2.0, 3.0}, 0, 30.0};
  const Sample f = Augmentation::identity(3).apply(s);
  CHECK(f.x == s.x);
  CHECK(f.pose == -30.0);
  CHECK(code_of([] { Augmentation(Matrix(2, 3)); }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([] { Augmentation::negate_axis(3, 3); }) == ErrorCode::kConfigInvalid);
}

TEST_CASE("flip leaves class distributions invariant") {
  // Negating the nuisance axis maps mu + Bz + pose u to mu + Bz - pose u.
  const GeneratedSplit split = generate_split(small_config(2));
  for (std::size_t c = 0; c < split.truth.class_means.rows(); ++c)
    CHECK(split.train.augmentation.apply(split.truth.class_means.row(c)) ==
          Vector(split.truth.class_means.row(c).begin(), split.truth.class_means.row(c).end()));
}

TEST_CASE("save then load round-trips bit-exactly") {
  support::TempDir dir("dataset");
  const GeneratedSplit split = generate_split(small_config(4));
  save(split.train, dir / "train.ftld");
  save(split.test, dir / "test.ftld");
  CHECK(load(dir / "train.ftld") == split.train);
  const ImbalancedDataset test = load(dir / "test.ftld");
  CHECK(test == split.test);
  CHECK(test.split == Split::kTest);
}

TEST_CASE("load reports corrupt, truncated, versioned and missing files") {
  support::TempDir dir("dataset-err");
  save(generate(small_config(5)), dir / "ok.ftld");
  const std::string bytes = support::read_bytes(dir / "ok.ftld");

  support::write_bytes(dir / "trunc.ftld", bytes.substr(0, bytes.size() / 2));
  CHECK(code_of([&] { load(dir / "trunc.ftld"); }) == ErrorCode::kCorruptRecord);

  support::write_bytes(dir / "tiny.ftld", bytes.substr(0, 5));
  CHECK(code_of([&] { load(dir / "tiny.ftld"); }) == ErrorCode::kCorruptRecord);

  std::string versioned = bytes;
  versioned[4] = 9;
  support::write_bytes(dir / "v9.ftld", versioned);
  CHECK(code_of([&] { load(dir / "v9.ftld"); }) == ErrorCode::kFormatVersionMismatch);

  std::string magic = bytes;
  magic[0] = 'X';
  support::write_bytes(dir / "magic.ftld", magic);
  CHECK(code_of([&] { load(dir / "magic.ftld"); }) == ErrorCode::kCorruptRecord);

  support::write_bytes(dir / "tail.ftld", bytes + "junk");
  CHECK(code_of([&] { load(dir / "tail.ftld"); }) == ErrorCode::kCorruptRecord);

  CHECK(code_of([&] { load(dir / "absent.ftld"); }) == ErrorCode::kIo);
}

TEST_CASE("validate rejects inconsistent datasets") {
  const ImbalancedDataset good = generate(small_config(6));
  CHECK_NOTHROW(good.validate());

  ImbalancedDataset bad = good;
  bad.samples[0].label = 99;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kLabelOutOfRange);

  bad = good;
  bad.samples[0].x.pop_back();
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kDimensionMismatch);

  bad = good;
  bad.samples[0].x[0] = std::nan("");
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kNonFinite);

  bad = good;
  bad.ur_ids.push_back(bad.regular_ids[0]);
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kConfigInvalid);

  bad = good;  // a UR class with too many samples
  for (int k = 0; k < 30; ++k) bad.samples.push_back({bad.samples[0].x, bad.ur_ids[0], 0.0});
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kConfigInvalid);
  bad.split = Split::kTest;  // held-out splits are exempt from the count rule
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("generator config invariants") {
  GeneratorConfig cfg = small_config();
  cfg.samples_per_ur = 21;
  CHECK(code_of([&] { generate(cfg); }) == ErrorCode::kConfigInvalid);
  cfg = small_config();
  cfg.samples_per_regular = 20;
  CHECK(code_of([&] { generate(cfg); }) == ErrorCode::kConfigInvalid);
  cfg = small_config();
  cfg.shared_cov_rank = 7;
  CHECK(code_of([&] { generate(cfg); }) == ErrorCode::kConfigInvalid);
  cfg = small_config();
  cfg.class_sep = -1.0;
  CHECK(code_of([&] { generate(cfg); }) == ErrorCode::kConfigInvalid);
}

TEST_CASE("inputs and flipped inputs line up with samples") {
  const ImbalancedDataset ds = generate(small_config(9));
  const Matrix x = inputs_matrix(ds);
  const Matrix xf = flipped_inputs_matrix(ds);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(Vector(x.row(i).begin(), x.row(i).end()) == ds.samples[i].x);
    CHECK(Vector(xf.row(i).begin(), xf.row(i).end()) == flip(ds, ds.samples[i]).x);
  }
}

}  // TEST_SUITE
