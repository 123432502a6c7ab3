#include "config.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace ftl::cli {

namespace {

using nlohmann::json;

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty())
    throw UsageError(where + ": cannot parse '" + text + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw UsageError(where + ": value must be finite");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw UsageError(where + ": expected true or false, got '" + text + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&, const std::string&)> set;
  std::function<json()> get;
};

template <typename T>
Field number(std::string section, std::string key, T& ref) {
  return {std::move(section), std::move(key),
          [&ref](const std::string& v, const std::string& where) { ref = parse_number<T>(v, where); },
          [&ref] { return json(ref); }};
}

Field boolean(std::string section, std::string key, bool& ref) {
  return {std::move(section), std::move(key),
          [&ref](const std::string& v, const std::string& where) { ref = parse_bool(v, where); },
          [&ref] { return json(ref); }};
}

// Registry over one config instance; the references stay valid while `cfg` does.
std::vector<Field> fields(ExperimentConfig& cfg) {
  GeneratorConfig& d = cfg.dataset;
  TrainConfig& t = cfg.trainer;
  TransferConfig& x = cfg.trainer.transfer;
  EvaluationOptions& e = cfg.evaluation;
  std::vector<Field> out = {
      number("dataset", "n_regular", d.n_regular),
      number("dataset", "n_ur", d.n_ur),
      number("dataset", "samples_per_regular", d.samples_per_regular),
      number("dataset", "samples_per_ur", d.samples_per_ur),
      number("dataset", "test_per_class", d.test_per_class),
      number("dataset", "input_dim", d.input_dim),
      number("dataset", "class_sep", d.class_sep),
      number("dataset", "shared_cov_rank", d.shared_cov_rank),
      number("dataset", "nuisance_strength", d.nuisance_strength),
      number("dataset", "ur_threshold", d.ur_threshold),
      number("dataset", "seed", d.seed),

      number("network", "hidden_dim", t.hidden_dim),
      number("network", "rich_dim", t.rich_dim),
      number("network", "feature_dim", t.feature_dim),

      number("transfer", "tau", x.tau),
      number("transfer", "energy", x.energy),
      boolean("transfer", "use_flip", x.use_flip),

      number("trainer", "pretrain_iters", t.pretrain_iters),
      number("trainer", "n_iter", t.n_iter),
      number("trainer", "total_alternations", t.total_alternations),
      number("trainer", "batch_size", t.batch_size),
      number("trainer", "lr_pretrain", t.lr_pretrain),
      number("trainer", "lr_alternate", t.lr_alternate),
      number("trainer", "min_pretrain_drop", t.min_pretrain_drop),
      number("trainer", "alpha_sfmx", t.loss_weights.sfmx),
      number("trainer", "alpha_recon", t.loss_weights.recon),
      number("trainer", "alpha_reg", t.loss_weights.reg),
      number("trainer", "seed", t.seed),

      number("evaluation", "repetitions", e.repetitions),
      number("evaluation", "jobs", e.jobs),
      number("evaluation", "seed", e.seed),
  };
  // k_override: "none" or a positive count.
  out.push_back({"transfer", "k_override",
                 [&x](const std::string& v, const std::string& where) {
                   if (v == "none")
                     x.k_override.reset();
                   else
                     x.k_override = parse_number<std::size_t>(v, where);
                 },
                 [&x] { return x.k_override ? json(*x.k_override) : json("none"); }});
  out.push_back({"evaluation", "space",
                 [&e](const std::string& v, const std::string& where) {
                   try {
                     e.space = parse_feature_space(v);
                   } catch (const std::exception&) {
                     throw UsageError(where + ": expected f or g, got '" + v + "'");
                   }
                 },
                 [&e] { return json(std::string(to_string(e.space))); }});
  // Comma-separated list.
  out.push_back({"evaluation", "subset_sizes",
                 [&e](const std::string& v, const std::string& where) {
                   std::vector<std::size_t> sizes;
                   std::stringstream in(v);
                   std::string item;
                   while (std::getline(in, item, ','))
                     sizes.push_back(parse_number<std::size_t>(item, where));
                   if (sizes.empty()) throw UsageError(where + ": empty list");
                   e.subset_sizes = std::move(sizes);
                 },
                 [&e] { return json(e.subset_sizes); }});
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string json_to_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const json& item : v) out += (out.empty() ? "" : ",") + json_to_text(item);
    return out;
  }
  return v.dump();
}

}  // namespace

void apply_value(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                 const std::string& value) {
  for (Field& f : fields(cfg)) {
    if (f.section == section && f.key == key) {
      f.set(trim(value), "config [" + section + "] " + key);
      return;
    }
  }
  throw UsageError("config: unknown key [" + section + "] " + key);
}

void apply_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("config " + path.string() + ": " + e.message() + " (line " +
                     std::to_string(e.line()) + ")");
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty())
      throw UsageError("config " + path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : entries) apply_value(cfg, section, key, value.data());
  }
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto dot = assignment.find('.');
  const auto eq = assignment.find('=');
  if (dot == std::string::npos || eq == std::string::npos || dot > eq)
    throw UsageError("--set expects section.key=value, got '" + assignment + "'");
  apply_value(cfg, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1),
              assignment.substr(eq + 1));
}

json to_json(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  json out = json::object();
  for (const Field& f : fields(copy)) out[f.section][f.key] = f.get();
  return out;
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig cfg;
  if (!j.is_object()) throw UsageError("config snapshot must be an object");
  for (const auto& [section, entries] : j.items()) {
    if (!entries.is_object()) throw UsageError("config snapshot: section " + section);
    for (const auto& [key, value] : entries.items())
      apply_value(cfg, section, key, json_to_text(value));
  }
  return cfg;
}

}  // namespace ftl::cli
