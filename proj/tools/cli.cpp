#include "cli.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "config.hpp"
#include "ftl/error.hpp"

namespace ftl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Failure to read a user-supplied input; carries the offending path.
class DataError : public std::runtime_error {
 public:
  DataError(const fs::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Failure to write into the output directory.
class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A parsed command: what to run, on which inputs, with which config.
struct Invocation {
  std::string command;
  std::map<std::string, std::string> inputs;   // role -> absolute path
  std::map<std::string, std::string> options;  // command-specific flags
  ExperimentConfig config;
};

std::string num(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("ftl", sink);
  logger->set_pattern("[%l] %v");
  const char* env = std::getenv("FTL_LOG");
  logger->set_level(env != nullptr ? spdlog::level::from_str(env) : spdlog::level::info);
  return logger;
}

// Writes the JSON-lines event stream to stdout and, once the output
// directory is known, to events.jsonl inside it.
class Reporter {
 public:
  Reporter(std::ostream& out, std::shared_ptr<spdlog::logger> log) : out_(out), log_(std::move(log)) {}

  void open_file(const fs::path& path) {
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw OutputError("cannot open " + path.string());
  }

  void event(json e) {
    const std::string line = e.dump();
    out_ << line << '\n';
    out_.flush();
    if (file_.is_open()) file_ << line << '\n';
  }

  spdlog::logger& log() { return *log_; }

 private:
  std::ostream& out_;
  std::shared_ptr<spdlog::logger> log_;
  std::ofstream file_;
};

class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw OutputError("cannot create " + root_.string() + ": " + ec.message());
  }

  fs::path operator/(const std::string& name) { return root_ / name; }
  const fs::path& root() const { return root_; }

  void write_text(const std::string& name, const std::string& content) {
    std::ofstream f(root_ / name, std::ios::binary | std::ios::trunc);
    f << content;
    f.close();
    if (!f) throw OutputError("cannot write " + (root_ / name).string());
    produced(name);
  }

  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

  void produced(const std::string& name) { artifacts_.push_back(name); }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

  // Temporary file plus rename, so a manifest never appears half-written.
  void write_manifest(const json& j) {
    const fs::path tmp = root_ / "manifest.json.tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      f << j.dump(2) << "\n";
      f.close();
      if (!f) throw OutputError("cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, root_ / "manifest.json", ec);
    if (ec) throw OutputError("cannot publish manifest: " + ec.message());
  }

 private:
  fs::path root_;
  std::vector<std::string> artifacts_;
};

// Any library failure while reading an input becomes a DataError naming it.
template <typename F>
auto read_input(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw DataError(path, std::string(to_string(e.code())) + ": " + e.what());
  }
}

ImbalancedDataset load_dataset(const fs::path& dir, const std::string& name) {
  const fs::path file = fs::is_directory(dir) ? dir / name : dir;
  if (!fs::exists(file)) throw DataError(file, "dataset not found");
  return read_input(file, [&] { return load(file); });
}

NetworkParams load_params(const fs::path& file) {
  if (!fs::exists(file)) throw DataError(file, "checkpoint not found");
  return read_input(file, [&] { return load_checkpoint(file); });
}

json event_json(const TrainEvent& e, const std::string& mode) {
  json j = {{"type", e.type}, {"mode", mode}};
  for (const auto& [k, v] : e.fields) j[k] = v;
  if (!e.message.empty()) j["message"] = e.message;
  return j;
}

json snapshot_json(const Snapshot& s) {
  return {{"phase", s.phase},
          {"alternation", s.alternation},
          {"gradient_steps", s.gradient_steps},
          {"weight_norm_cv", s.weight_norm_cv},
          {"mean_norm_regular", s.mean_norm_regular},
          {"mean_norm_ur", s.mean_norm_ur},
          {"train_acc_regular", s.train_acc_regular},
          {"train_acc_ur", s.train_acc_ur},
          {"hard_list_size", s.hard_list_size},
          {"basis_rank", s.basis_rank},
          {"basis_energy", s.basis_energy}};
}

const char* kind_of(const ImbalancedDataset& ds, ClassId id) { return ds.is_ur(id) ? "ur" : "regular"; }

std::vector<std::size_t> class_counts(const ImbalancedDataset& ds) {
  std::vector<std::size_t> counts(ds.n_classes, 0);
  for (const Sample& s : ds.samples) ++counts[s.label];
  return counts;
}

// ---------------------------------------------------------------- generate

json cmd_generate(const Invocation& inv, OutputDir& out, Reporter& rep) {
  const GeneratedSplit split = generate_split(inv.config.dataset);
  save(split.train, out / "train.ftld");
  out.produced("train.ftld");
  save(split.test, out / "test.ftld");
  out.produced("test.ftld");

  std::ostringstream csv;
  csv << "class_id,kind,train_count\n";
  const auto counts = class_counts(split.train);
  for (ClassId c = 0; c < split.train.n_classes; ++c)
    csv << c << ',' << kind_of(split.train, c) << ',' << counts[c] << '\n';
  out.write_text("class_counts.csv", csv.str());

  rep.log().info("generated {} training and {} test samples over {} classes ({} UR)",
                 split.train.samples.size(), split.test.samples.size(), split.train.n_classes,
                 split.train.ur_ids.size());
  return {{"n_train", split.train.samples.size()},
          {"n_test", split.test.samples.size()},
          {"n_classes", split.train.n_classes},
          {"n_regular", split.train.regular_ids.size()},
          {"n_ur", split.train.ur_ids.size()}};
}

// ---------------------------------------------------------------- train

void write_run_outputs(const std::string& mode, const TrainReport& report,
                       const ImbalancedDataset& ds, OutputDir& out) {
  save_checkpoint(report.params, out / (mode + ".ftlc"));
  out.produced(mode + ".ftlc");

  std::ostringstream trace;
  trace << "stage,alternation,iteration,batch,total,sfmx,recon,reg\n";
  for (const TraceEntry& e : report.trace)
    trace << e.stage << ',' << e.alternation << ',' << e.iteration << ',' << e.batch << ','
          << num(e.loss.total) << ',' << num(e.loss.sfmx) << ',' << num(e.loss.recon) << ','
          << num(e.loss.reg) << '\n';
  out.write_text("trace_" + mode + ".csv", trace.str());

  // Per-class classifier row norms against training counts.
  const WeightNormStats norms = weight_norm_stats(report.params.fc);
  const auto counts = class_counts(ds);
  std::ostringstream wn;
  wn << "class_id,kind,train_count,weight_norm\n";
  for (ClassId c = 0; c < ds.n_classes; ++c)
    wn << c << ',' << kind_of(ds, c) << ',' << counts[c] << ',' << num(norms.norms[c]) << '\n';
  out.write_text("weight_norms_" + mode + ".csv", wn.str());
}

json run_summary(const std::string& mode, const TrainReport& r) {
  json snaps = json::array();
  for (const Snapshot& s : r.snapshots) snaps.push_back(snapshot_json(s));
  return {{"checkpoint", mode + ".ftlc"},
          {"gradient_steps", r.gradient_steps},
          {"pretrain_initial_loss", r.pretrain_initial_loss},
          {"pretrain_final_loss", r.pretrain_final_loss},
          {"max_transfer_enc_grad", r.max_transfer_enc_grad},
          {"final", snapshot_json(r.snapshots.back())},
          {"snapshots", snaps}};
}

json cmd_train(const Invocation& inv, OutputDir& out, Reporter& rep) {
  const ImbalancedDataset ds = load_dataset(inv.inputs.at("data"), "train.ftld");
  const TrainConfig& cfg = inv.config.trainer;
  const std::string mode = inv.options.at("mode");
  const auto sink_for = [&rep](const std::string& m) {
    return [&rep, m](const TrainEvent& e) {
      if (e.type == "warning") rep.log().warn("{}: {}", m, e.message);
      rep.event(event_json(e, m));
    };
  };

  rep.log().info("pretraining for {} iterations on {} samples", cfg.pretrain_iters, ds.samples.size());
  const TrainReport head = pretrain_report(ds, cfg, sink_for("pretrain"));
  rep.log().info("pretrain loss {} -> {}", head.pretrain_initial_loss, head.pretrain_final_loss);

  json runs = json::object();
  std::map<std::string, TrainReport> reports;
  if (mode == "ftl" || mode == "both") {
    rep.log().info("alternating stages: {} x {} iterations", cfg.total_alternations, cfg.n_iter);
    reports["ftl"] = append_to_pretrain(alternate(head.params, ds, cfg, sink_for("ftl")), head);
  }
  if (mode == "baseline" || mode == "both") {
    rep.log().info("plain continuation with {} steps", alternation_step_budget(ds, cfg));
    reports["baseline"] =
        append_to_pretrain(continue_plain(head.params, ds, cfg, sink_for("baseline")), head);
  }
  for (auto& [m, r] : reports) {
    r.mode = m;
    write_run_outputs(m, r, ds, out);
    runs[m] = run_summary(m, r);
    rep.log().info("{}: final weight-norm CV {}", m, r.snapshots.back().weight_norm_cv);
  }
  const json summary = {{"mode", mode}, {"n_train", ds.samples.size()}, {"runs", runs}};
  out.write_json("summary.json", summary);
  return {{"mode", mode}};
}

// ---------------------------------------------------------------- eval

json eval_json(const EvalReport& r) {
  return {{"space", std::string(to_string(r.space))},
          {"rank1_regular", r.rank1_regular},
          {"rank1_ur", r.rank1_ur},
          {"n_probe_regular", r.n_probe_regular},
          {"n_probe_ur", r.n_probe_ur},
          {"weight_norm_mean", r.weight_norms.mean},
          {"weight_norm_std", r.weight_norms.std},
          {"weight_norm_cv", r.weight_norms.cv},
          {"mean_norm_regular", r.mean_norm_regular},
          {"mean_norm_ur", r.mean_norm_ur},
          {"gallery", {{"tau", r.gallery_cfg.tau}, {"use_flip", r.gallery_cfg.use_flip}}}};
}

std::string per_class_csv(const EvalReport& r, const ImbalancedDataset& ds) {
  std::ostringstream csv;
  csv << "class_id,kind,count,weight_norm,radius_min,radius_mean,radius_max\n";
  for (ClassId c = 0; c < ds.n_classes; ++c) {
    const RadiusProfile& p = r.variance_profile[c];
    csv << c << ',' << kind_of(ds, c) << ',' << r.train_counts[c] << ','
        << num(r.weight_norms.norms[c]) << ',' << num(p.min) << ',' << num(p.mean) << ','
        << num(p.max) << '\n';
  }
  return csv.str();
}

json cmd_eval(const Invocation& inv, OutputDir& out, Reporter& rep) {
  const fs::path data = inv.inputs.at("data");
  const ImbalancedDataset train = load_dataset(data, "train.ftld");
  const ImbalancedDataset test = load_dataset(data, "test.ftld");
  const FeatureSpace space = inv.config.evaluation.space;
  const TransferConfig& gallery = inv.config.trainer.transfer;

  const fs::path ckpt = inv.inputs.at("checkpoint");
  const NetworkParams p = load_params(ckpt);
  const EvalReport report = read_input(ckpt, [&] { return evaluate(p, train, test, space, gallery); });
  out.write_json("eval_report.json", eval_json(report));
  out.write_text("per_class.csv", per_class_csv(report, train));
  rep.log().info("rank-1 regular {:.4f}, UR {:.4f} ({}-space)", report.rank1_regular,
                 report.rank1_ur, to_string(space));
  json result = {{"rank1_regular", report.rank1_regular}, {"rank1_ur", report.rank1_ur}};

  if (inv.inputs.count("compare") != 0) {
    const fs::path other_path = inv.inputs.at("compare");
    const NetworkParams q = load_params(other_path);
    const EvalReport other =
        read_input(other_path, [&] { return evaluate(q, train, test, space, gallery); });
    out.write_json("eval_report_compare.json", eval_json(other));
    out.write_text("per_class_compare.csv", per_class_csv(other, train));
    const json cmp = {{"space", std::string(to_string(space))},
                      {"rank1_ur_delta", report.rank1_ur - other.rank1_ur},
                      {"rank1_regular_delta", report.rank1_regular - other.rank1_regular},
                      {"weight_norm_cv_delta", report.weight_norms.cv - other.weight_norms.cv}};
    out.write_json("comparison.json", cmp);
    rep.log().info("UR rank-1 delta {:+.4f}, regular delta {:+.4f}", cmp["rank1_ur_delta"].get<double>(),
                   cmp["rank1_regular_delta"].get<double>());
    result["rank1_ur_delta"] = cmp["rank1_ur_delta"];
  }
  return result;
}

// ---------------------------------------------------------------- transfer-demo

struct FeatureSource {
  std::optional<NetworkParams> params;
  std::string name = "input";
};

FeatureSource feature_source(const Invocation& inv) {
  FeatureSource src;
  if (inv.inputs.count("checkpoint") != 0) {
    src.params = load_params(inv.inputs.at("checkpoint"));
    src.name = "g";
  }
  return src;
}

std::size_t nearest_center(const std::vector<Vector>& centers, std::span<const double> g) {
  std::size_t best = 0;
  double best_d = squared_distance(g, centers[0]);
  for (std::size_t c = 1; c < centers.size(); ++c) {
    const double d = squared_distance(g, centers[c]);
    if (d < best_d) {
      best = c;
      best_d = d;
    }
  }
  return best;
}

json cmd_transfer_demo(const Invocation& inv, OutputDir& out, Reporter& rep) {
  const fs::path data = inv.inputs.at("data");
  const ImbalancedDataset ds = load_dataset(data, "train.ftld");
  const FeatureSource src = feature_source(inv);
  const FeatureExtractor extract = src.params ? rich_features(*src.params) : identity_features();
  const TransferStats stats =
      read_input(data, [&] { return update_stats(ds, extract, inv.config.trainer.transfer); });
  const std::vector<Vector> centers = stats.centers();
  const std::vector<std::size_t> regular = ds.indices_of(ds.regular_ids);
  const std::vector<ClassId>& targets = ds.ur_ids.empty() ? ds.regular_ids : ds.ur_ids;
  if (regular.empty()) throw DataError(data, "no regular samples to transfer from");

  const std::size_t count = std::stoul(inv.options.at("count"));
  SeededRng rng = SeededRng(inv.config.evaluation.seed).fork(7);
  std::ostringstream csv;
  csv << "source_sample,source_class,target_class,nearest_class,residual\n";
  std::size_t hits = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t s = regular[rng.index(regular.size())];
    const ClassId src_class = ds.samples[s].label;
    const ClassId tgt = targets[rng.index(targets.size())];
    const Vector g = transfer_feature(stats.features.row(s), centers[src_class], centers[tgt], stats.basis);
    const std::size_t hit = nearest_center(centers, g);
    const Vector dev = subtract(g, centers[tgt]);
    const double residual = distance(dev, project(stats.basis.q, dev));
    hits += hit == tgt ? 1 : 0;
    worst = std::max(worst, residual);
    csv << s << ',' << src_class << ',' << tgt << ',' << hit << ',' << num(residual) << '\n';
  }
  out.write_text("transfers.csv", csv.str());

  // Spectrum of the pooled regular-class scatter, for the energy curve.
  std::vector<ClassId> labels(ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) labels[k] = ds.samples[k].label;
  const Matrix v = accumulate_covariance(stats.features, labels, centers, ds.regular_ids);
  const EigenResult eig = read_input(data, [&] { return sym_eigen(v); });
  double total = 0.0;
  for (double l : eig.eigenvalues) total += std::max(0.0, l);
  std::ostringstream curve;
  curve << "component,eigenvalue,cumulative_energy\n";
  double acc = 0.0;
  for (std::size_t i = 0; i < eig.eigenvalues.size(); ++i) {
    acc += std::max(0.0, eig.eigenvalues[i]);
    curve << i + 1 << ',' << num(eig.eigenvalues[i]) << ',' << num(total > 0 ? acc / total : 0.0) << '\n';
  }
  out.write_text("spectrum.csv", curve.str());

  const double fraction = count == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(count);
  const json summary = {{"features", src.name},
                        {"count", count},
                        {"preserved_fraction", fraction},
                        {"max_residual", worst},
                        {"basis_rank", stats.basis.q.cols()},
                        {"basis_energy", stats.basis.energy},
                        {"hard_list_size", stats.hard_list.size()}};
  out.write_json("transfer_summary.json", summary);
  rep.log().info("{} of {} transfers nearest to their target; basis rank {}", hits, count,
                 stats.basis.q.cols());
  return {{"preserved_fraction", fraction}, {"basis_rank", stats.basis.q.cols()}};
}

// ---------------------------------------------------------------- center-study

json cmd_center_study(const Invocation& inv, OutputDir& out, Reporter& rep) {
  const fs::path data = inv.inputs.at("data");
  const ImbalancedDataset ds = load_dataset(data, "train.ftld");
  const FeatureSource src = feature_source(inv);
  const EvaluationOptions& e = inv.config.evaluation;
  FeatureExtractor extract = identity_features();
  std::string features = "input";
  if (src.params) {
    features = std::string(to_string(e.space));
    extract = e.space == FeatureSpace::kRich ? rich_features(*src.params)
                                             : discriminative_features(*src.params);
  }
  CenterStudyConfig cfg;
  cfg.subset_sizes = e.subset_sizes;
  cfg.repetitions = e.repetitions;
  cfg.seed = e.seed;
  cfg.jobs = e.jobs;
  cfg.transfer = inv.config.trainer.transfer;
  const CenterErrorTable table = read_input(data, [&] { return center_error_study(ds, extract, cfg); });

  std::ostringstream csv;
  csv << "subset_size,method,mean_error\n";
  json cells = json::array();
  for (const CenterErrorCell& c : table.cells) {
    csv << c.subset_size << ',' << to_string(c.method) << ',' << num(c.mean_error) << '\n';
    cells.push_back({{"subset_size", c.subset_size},
                     {"method", std::string(to_string(c.method))},
                     {"mean_error", c.mean_error}});
  }
  out.write_text("center_study.csv", csv.str());
  out.write_json("center_study.json",
                 {{"features", features},
                  {"normalizer", table.normalizer},
                  {"normalizer_definition", "mean pairwise distance between full-set class centers"},
                  {"n_classes", table.n_classes},
                  {"repetitions", table.repetitions},
                  {"seed", e.seed},
                  {"cells", cells}});
  rep.log().info("center study over {} classes, {} repetitions", table.n_classes, table.repetitions);
  return {{"n_classes", table.n_classes}};
}

// ---------------------------------------------------------------- dispatch

std::uint64_t seed_of(const Invocation& inv) {
  if (inv.command == "generate") return inv.config.dataset.seed;
  if (inv.command == "train") return inv.config.trainer.seed;
  return inv.config.evaluation.seed;
}

int execute(const Invocation& inv, const fs::path& out_root, Reporter& rep) {
  const auto start = std::chrono::steady_clock::now();
  OutputDir out(out_root);
  rep.open_file(out / "events.jsonl");
  out.produced("events.jsonl");
  rep.event({{"type", "start"}, {"command", inv.command}});

  json result;
  if (inv.command == "generate") result = cmd_generate(inv, out, rep);
  else if (inv.command == "train") result = cmd_train(inv, out, rep);
  else if (inv.command == "eval") result = cmd_eval(inv, out, rep);
  else if (inv.command == "transfer-demo") result = cmd_transfer_demo(inv, out, rep);
  else if (inv.command == "center-study") result = cmd_center_study(inv, out, rep);
  else throw UsageError("unknown command " + inv.command);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json done = {{"type", "done"}, {"command", inv.command}};
  done.update(result);
  rep.event(done);

  json manifest = {{"tool", {{"name", "ftl"}, {"version", kToolVersion}}},
                   {"command", inv.command},
                   {"seed", seed_of(inv)},
                   {"inputs", inv.inputs},
                   {"options", inv.options},
                   {"config", to_json(inv.config)},
                   {"artifacts", out.artifacts()},
                   {"timings", {{"wall_seconds", seconds}}}};
  out.write_manifest(manifest);
  rep.log().info("wrote {} artifacts to {}", out.artifacts().size(), out.root().string());
  return kOk;
}

Invocation from_manifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(path, "manifest not found");
  json j;
  try {
    j = json::parse(f);
    Invocation inv;
    inv.command = j.at("command").get<std::string>();
    inv.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    inv.options = j.at("options").get<std::map<std::string, std::string>>();
    inv.config = from_json(j.at("config"));
    return inv;
  } catch (const json::exception& e) {
    throw DataError(path, std::string("malformed manifest: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(path, std::string("malformed manifest: ") + e.what());
  }
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

int error_line(Reporter& rep, int code, const std::string& kind, const std::string& message,
               const std::optional<std::string>& path = std::nullopt) {
  json e = {{"type", "error"}, {"error", kind}, {"exit_code", code}, {"message", message}};
  if (path) e["path"] = *path;
  rep.event(e);
  rep.log().error("{}", message);
  return code;
}

int dispatch(const std::vector<std::string>& args, Reporter& rep) {
  CLI::App app{"Feature transfer learning for under-represented classes"};
  app.require_subcommand(1);

  ExperimentConfig base;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir, data, checkpoint, compare, manifest, mode = "ftl", space;
  std::size_t count = 1000;
  std::optional<std::size_t> jobs, reps;

  const auto common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config key: section.key=value");
    if (with_seed) sub->add_option("--seed", seed, "Seed for this step");
    sub->add_option("--out", out_dir, "Output directory")->required();
  };
  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic imbalanced dataset");
  common(gen, true);
  CLI::App* train = app.add_subcommand("train", "Pretrain, then FTL alternation or plain training");
  common(train, true);
  train->add_option("--data", data, "Dataset directory or file")->required();
  train->add_option("--mode", mode, "ftl, baseline or both")
      ->check(CLI::IsMember({"ftl", "baseline", "both"}));
  CLI::App* ev = app.add_subcommand("eval", "Center-gallery identification and weight-norm report");
  common(ev, false);
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--compare", compare, "Second checkpoint to compare against");
  ev->add_option("--space", space, "Feature space: f or g")->check(CLI::IsMember({"f", "g"}));
  CLI::App* demo = app.add_subcommand("transfer-demo", "Transfer regular deviations onto UR centers");
  common(demo, true);
  demo->add_option("--data", data, "Dataset directory")->required();
  demo->add_option("--checkpoint", checkpoint, "Use the checkpoint's rich features");
  demo->add_option("--count", count, "Number of transfers");
  CLI::App* study = app.add_subcommand("center-study", "Center-estimation error by subset size");
  common(study, true);
  study->add_option("--data", data, "Dataset directory")->required();
  study->add_option("--checkpoint", checkpoint, "Use the checkpoint's features");
  study->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  study->add_option("--reps", reps, "Repetitions per cell")->check(CLI::PositiveNumber);
  study->add_option("--space", space, "Feature space: f or g")->check(CLI::IsMember({"f", "g"}));
  CLI::App* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
  replay->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    rep.log().info("{}", app.help());
    return kOk;
  } catch (const CLI::ParseError& e) {
    return error_line(rep, kUsage, "usage", e.what());
  }

  Invocation inv;
  if (replay->parsed()) {
    inv = from_manifest(manifest);
    rep.log().info("replaying {} from {}", inv.command, manifest);
    return execute(inv, out_dir, rep);
  }

  inv.command = app.get_subcommands().front()->get_name();
  inv.config = base;
  if (!config_path.empty()) apply_file(inv.config, config_path);
  for (const std::string& o : overrides) apply_override(inv.config, o);
  if (seed) {
    if (inv.command == "generate") inv.config.dataset.seed = *seed;
    else if (inv.command == "train") inv.config.trainer.seed = *seed;
    else inv.config.evaluation.seed = *seed;
  }
  if (!space.empty()) apply_value(inv.config, "evaluation", "space", space);
  if (jobs) inv.config.evaluation.jobs = *jobs;
  if (reps) inv.config.evaluation.repetitions = *reps;
  if (!data.empty()) inv.inputs["data"] = absolute(data);
  if (!checkpoint.empty()) inv.inputs["checkpoint"] = absolute(checkpoint);
  if (!compare.empty()) inv.inputs["compare"] = absolute(compare);
  if (inv.command == "train") inv.options["mode"] = mode;
  if (inv.command == "transfer-demo") inv.options["count"] = std::to_string(count);
  return execute(inv, out_dir, rep);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Reporter rep(out, make_logger(err));
  try {
    return dispatch(args, rep);
  } catch (const UsageError& e) {
    return error_line(rep, kUsage, "usage", e.what());
  } catch (const DataError& e) {
    return error_line(rep, kData, "data", e.what(), e.path().string());
  } catch (const OutputError& e) {
    return error_line(rep, kIo, "io", e.what());
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kConfigInvalid:
        return error_line(rep, kUsage, "usage", e.what());
      case ErrorCode::kDiverged:
        return error_line(rep, kDiverged, "diverged", e.what());
      case ErrorCode::kIo:
        return error_line(rep, kIo, "io", e.what());
      default:
        return error_line(rep, kData, "data", std::string(to_string(e.code())) + ": " + e.what());
    }
  } catch (const std::exception& e) {
    return error_line(rep, kIo, "io", e.what());
  }
}

}  // namespace ftl::cli
