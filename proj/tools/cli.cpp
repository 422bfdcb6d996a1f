#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "bignet/bim_model.hpp"
#include "bignet/features.hpp"
#include "bignet/graph.hpp"
#include "bignet/pretrain.hpp"
#include "bignet/synth.hpp"
#include "bignet/transfer.hpp"
#include "json.hpp"

#ifndef BIGNET_VERSION
#define BIGNET_VERSION "0.0.0"
#endif

namespace bignet::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const GraphIoError*>(&e)) return "io_error";
  if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation_error";
  if (dynamic_cast<const EncodingError*>(&e)) return "encoding_error";
  if (dynamic_cast<const nn::CheckpointError*>(&e)) return "checkpoint_error";
  if (dynamic_cast<const PretrainError*>(&e)) return "pretrain_error";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const std::logic_error*>(&e)) return "logic_error";
  return "runtime_error";
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    parts.push_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (const auto& p : parts)
    if (p.empty()) throw ConfigError("empty element in list '" + std::string(s) + "'");
  return parts;
}

template <class T>
T parse_number(std::string_view key, const std::string& raw) {
  T v{};
  const auto* end = raw.data() + raw.size();
  const auto [ptr, ec] = std::from_chars(raw.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + raw + "'");
  return v;
}

/// Converts `raw` to the JSON type of `current`.
json typed_value(std::string_view key, const std::string& raw, const json& current) {
  if (current.is_array()) {
    const json proto = current.empty() ? json(0.0) : current.front();
    json arr = json::array();
    for (const auto& item : split_list(raw)) arr.push_back(typed_value(key, item, proto));
    return arr;
  }
  if (current.is_boolean()) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + raw + "'");
  }
  if (current.is_number_unsigned()) return parse_number<std::uint64_t>(key, raw);
  if (current.is_number_integer()) return parse_number<std::int64_t>(key, raw);
  if (current.is_number_float()) return parse_number<double>(key, raw);
  return raw;
}

/// Applies key/value overrides onto a JSON object; every key must exist.
void apply_overrides(json& base, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, raw] : kv) {
    if (!base.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    base[key] = typed_value(key, raw, base[key]);
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BIGNET_SEED");
  if (!s || !*s) return std::nullopt;
  return parse_number<std::uint64_t>("BIGNET_SEED", s);
}

/// flag > BIGNET_SEED > config file > default.
void resolve_seed(json& cfg, const std::optional<std::uint64_t>& flag) {
  if (auto e = env_seed()) cfg["seed"] = *e;
  if (flag) cfg["seed"] = *flag;
}

std::uint64_t resolved_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return fallback;
}

std::map<std::string, std::string> load_config_file(const std::optional<std::string>& path) {
  if (!path) return {};
  try {
    return parse_key_values(read_text(*path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(*path + ": " + e.what());
  }
}

/// Splits "prefix.key" entries off a config map.
std::map<std::string, std::string> take_prefixed(std::map<std::string, std::string>& kv, const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (auto it = kv.begin(); it != kv.end();) {
    if (it->first.rfind(prefix, 0) == 0) {
      out[it->first.substr(prefix.size())] = it->second;
      it = kv.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

std::unique_ptr<TextEmbedder> make_embedder(const std::optional<std::string>& table) {
  if (table) return std::make_unique<TableEmbedder>(TableEmbedder::from_file(*table));
  return std::make_unique<HashingEmbedder>();
}

GraphMode dataset_mode(const GraphDataset& d) {
  if (d.graphs.empty()) throw std::invalid_argument("dataset has no graphs");
  const GraphMode m = d.graphs.front().mode;
  for (const auto& g : d.graphs)
    if (g.mode != m) throw std::invalid_argument("dataset mixes homogeneous and heterogeneous graphs");
  return m;
}

struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
};

/// Writes `<primary>.run.json` next to the primary artifact.
void write_run_manifest(const fs::path& primary, const RunRecord& r) {
  json j;
  j["command"] = r.command;
  j["argv"] = r.argv;
  j["version"] = BIGNET_VERSION;
  j["formats"] = {{"bgraph", kGraphFormatVersion}};
  j["seed"] = r.seed;
  j["config"] = r.config;
  j["outputs"] = r.outputs;
  write_text(fs::path(primary.string() + ".run.json"), j.dump(2) + "\n");
}

json parse_json(const std::string& s) { return json::parse(s); }

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

std::string summary_line(const EvalReport& r) {
  std::ostringstream ss;
  ss << "average_f1=" << fmt(r.average_f1) << " weighted_f1=" << fmt(r.weighted_f1) << " accuracy=" << fmt(r.accuracy)
     << " evaluated=" << r.evaluated;
  return ss.str();
}

// ------------------------------------------------------------- commands

struct SynthArgs {
  std::optional<std::string> spec;
  int count = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> name;
  std::optional<int> storeys;
  std::string out;
};

void run_synth(const SynthArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  BuildingSpec spec = a.spec ? spec_from_json(read_text(*a.spec)) : BuildingSpec{};
  spec.seed = resolved_seed(a.seed, spec.seed);
  if (a.name) spec.name = *a.name;
  if (a.storeys) spec.storeys = *a.storeys;
  validate_spec(spec);
  if (a.count < 1) throw std::invalid_argument("--count must be >= 1");
  const auto specs = a.count == 1 ? std::vector<BuildingSpec>{spec} : corpus_specs(spec, a.count);
  std::vector<FloorModel> floors;
  for (const auto& s : specs) {
    auto f = generate_building(s);
    floors.insert(floors.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
  }
  write_text(a.out, serialize_model(floors));
  std::size_t components = 0;
  for (const auto& f : floors) components += f.components.size();
  out << "synth: " << specs.size() << " buildings, " << floors.size() << " floors, " << components
      << " components -> " << a.out << "\n";
  RunRecord r{"synth", argv, parse_json(spec_to_json(spec)), spec.seed, {a.out}};
  r.config["count"] = a.count;
  write_run_manifest(a.out, r);
}

struct InjectArgs {
  std::string input;
  double rate = 0.0;
  std::optional<std::uint64_t> seed;
  double radius = 0.3;
  std::string out, labels_out;
  std::optional<std::string> report_out;
};

void run_inject(const InjectArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const std::uint64_t seed = resolved_seed(a.seed, 1);
  auto floors = parse_model(read_text(a.input));
  auto res = inject_errors(std::move(floors), a.rate, a.radius, seed);
  write_text(a.out, serialize_model(res.models));
  write_text(a.labels_out, labels_to_json(res.labels));
  std::vector<std::string> outputs{a.out, a.labels_out};
  if (a.report_out) {
    write_text(*a.report_out, res.report.to_json());
    outputs.push_back(*a.report_out);
  }
  out << "inject: " << res.report.semantic_conflict.size() << " semantic_conflict, "
      << res.report.data_range_error.size() << " data_range_error, " << res.report.topological_error.size()
      << " topological_error -> " << a.out << "\n";
  for (const auto& w : res.report.warnings) out << "warning: " << w << "\n";
  json cfg{{"input", a.input}, {"rate", a.rate}, {"radius", a.radius}};
  write_run_manifest(a.out, RunRecord{"inject", argv, cfg, seed, outputs});
}

struct ConvertArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> labels;
  double radius = 0.3;
  std::string mode = "heterogeneous";
  std::size_t max_nodes = 0;
  std::optional<std::string> embeddings;
  std::string out_dir;
  std::optional<double> split_fraction;
  std::optional<std::uint64_t> split_seed;
  std::size_t transfer_regions = 0;
};

void run_convert(const ConvertArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const GraphMode mode = graph_mode_from_string(a.mode);
  if (!(a.radius >= 0.0)) throw std::invalid_argument("--radius must be >= 0");
  const auto embedder = make_embedder(a.embeddings);
  LabelMap labels;
  for (const auto& p : a.labels) {
    for (auto& [k, v] : labels_from_json(read_text(p))) {
      if (!labels.emplace(k, v).second) throw std::invalid_argument("label '" + k + "' appears in two label files");
    }
  }
  std::vector<FloorModel> floors;
  std::vector<std::string> warnings;
  for (const auto& p : a.inputs) {
    auto f = parse_model(read_text(p), &warnings);
    floors.insert(floors.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
  }
  if (a.max_nodes > 0) floors = partition_regions(floors, a.max_nodes, a.radius, &warnings);

  GraphDataset dataset;
  for (const auto& f : floors) {
    dataset.graphs.push_back(build_graph(f, a.radius, mode, *embedder, a.labels.empty() ? nullptr : &labels));
    dataset.splits.push_back(Split::pretrain);
  }
  const std::uint64_t split_seed = resolved_seed(a.split_seed, 1);
  if (a.split_fraction) dataset = make_splits(std::move(dataset), *a.split_fraction, split_seed, a.transfer_regions);

  fs::create_directories(a.out_dir);
  std::vector<fs::path> paths;
  std::vector<std::string> outputs;
  for (std::size_t i = 0; i < dataset.graphs.size(); ++i) {
    std::ostringstream name;
    name << "graph_" << std::setw(4) << std::setfill('0') << i << ".bgraph";
    const fs::path p = fs::path(a.out_dir) / name.str();
    save_graph(dataset.graphs[i], p);
    paths.push_back(p);
    outputs.push_back(p.string());
  }
  const fs::path manifest = fs::path(a.out_dir) / "manifest.json";
  write_manifest(manifest, paths, dataset);
  outputs.push_back(manifest.string());

  const auto st = dataset_stats(dataset);
  out << "convert: " << st.graphs << " graphs, " << st.nodes << " nodes (" << st.nodes_by_type[0] << " semantic, "
      << st.nodes_by_type[1] << " topological, " << st.nodes_by_type[2] << " spatial), " << st.edges << " edges -> "
      << manifest.string() << "\n";
  for (const auto& w : warnings) out << "warning: " << w << "\n";

  json cfg{{"inputs", a.inputs},       {"labels", a.labels},       {"radius", a.radius},
           {"mode", a.mode},           {"max_nodes", a.max_nodes}, {"embeddings", a.embeddings.value_or("hashing")},
           {"transfer_regions", a.transfer_regions}};
  cfg["split_fraction"] = a.split_fraction ? json(*a.split_fraction) : json(nullptr);
  write_run_manifest(manifest, RunRecord{"convert", argv, cfg, split_seed, outputs});
}

struct PretrainArgs {
  std::string data;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  std::string out;
  std::optional<std::string> history;
  int log_every = 10;
};

PretrainConfig resolve_pretrain_config(GraphMode mode, const std::map<std::string, std::string>& kv,
                                       const std::optional<std::uint64_t>& seed, const std::optional<int>& max_epochs) {
  json base = parse_json(pretrain_config_to_json(PretrainConfig::defaults(mode)));
  auto rest = kv;
  if (auto it = rest.find("mode"); it != rest.end()) {
    if (graph_mode_from_string(it->second) != mode)
      throw ConfigError("config mode '" + it->second + "' does not match the dataset mode '" +
                        std::string(to_string(mode)) + "'");
    rest.erase(it);
  }
  apply_overrides(base, rest);
  resolve_seed(base, seed);
  if (max_epochs) base["max_epochs"] = *max_epochs;
  PretrainConfig c;
  try {
    c = pretrain_config_from_json(base.dump());
    validate_pretrain_config(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void run_pretrain(const PretrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto kv = load_config_file(a.config);
  const GraphDataset data = load_dataset(a.data);
  const GraphMode mode = dataset_mode(data);
  const PretrainConfig cfg = resolve_pretrain_config(mode, kv, a.seed, a.max_epochs);

  auto result = pretrain(data, cfg, [&](const EpochRecord& e) {
    if (a.log_every > 0 && (e.epoch == 1 || e.epoch % a.log_every == 0))
      out << "run " << e.run << " lr " << e.lr0 << " batch " << e.batch << " epoch " << e.epoch
          << " train " << fmt(e.train_loss) << " val " << fmt(e.val_loss) << "\n";
    return true;
  });
  nn::save_archive(a.out, result.checkpoint);
  std::vector<std::string> outputs{a.out};
  if (a.history) {
    write_history_csv(*a.history, result.history);
    outputs.push_back(*a.history);
  }
  out << "pretrain: best val " << fmt(result.best_val_loss) << " at lr " << result.best_lr << " batch "
      << result.best_batch << " epoch " << result.best_epoch << " -> " << a.out << "\n";
  json c = parse_json(pretrain_config_to_json(cfg));
  c["data"] = a.data;
  write_run_manifest(a.out, RunRecord{"pretrain", argv, c, cfg.seed, outputs});
}

TransferConfig resolve_transfer_config(const std::map<std::string, std::string>& kv, const std::string& strategy,
                                       const std::optional<std::uint64_t>& seed, const std::optional<int>& max_epochs) {
  json base = parse_json(transfer_config_to_json(TransferConfig{}));
  apply_overrides(base, kv);
  if (!strategy.empty()) base["strategy"] = strategy;
  resolve_seed(base, seed);
  if (max_epochs) base["max_epochs"] = *max_epochs;
  TransferConfig c;
  try {
    c = transfer_config_from_json(base.dump());
    validate_transfer_config(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

struct TransferArgs {
  std::string data;
  std::string strategy;
  std::optional<std::string> checkpoint;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  std::string out;
  std::optional<std::string> report_out;
  int log_every = 10;
};

void run_transfer(const TransferArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto kv = load_config_file(a.config);
  const TransferConfig cfg = resolve_transfer_config(kv, a.strategy, a.seed, a.max_epochs);
  const GraphDataset data = load_dataset(a.data);
  const GraphMode mode = dataset_mode(data);
  std::optional<BigNetModel> encoder;
  if (uses_encoder(cfg.strategy)) {
    if (!a.checkpoint)
      throw std::invalid_argument("strategy " + std::string(to_string(cfg.strategy)) + " needs --checkpoint");
    encoder.emplace(model_from_checkpoint(nn::load_archive(*a.checkpoint)));
  }
  Classifier clf(mode, cfg, std::move(encoder));
  const auto res = train_transfer(clf, data, [&](const TransferEpoch& e) {
    if (a.log_every > 0 && (e.epoch == 1 || e.epoch % a.log_every == 0))
      out << "epoch " << e.epoch << " loss " << fmt(e.loss) << " train_avg_f1 " << fmt(e.train_average_f1)
          << " val_avg_f1 " << fmt(e.val_average_f1) << "\n";
    return true;
  });
  nn::save_archive(a.out, classifier_snapshot(clf));
  std::vector<std::string> outputs{a.out};
  out << "transfer: " << to_string(cfg.strategy) << " best val average_f1 " << fmt(res.best_val_average_f1)
      << " at epoch " << res.best_epoch << " -> " << a.out << "\n";
  if (a.report_out) {
    const auto rep = evaluate(clf, data, Split::transfer_test);
    write_text(*a.report_out, rep.to_json() + "\n");
    outputs.push_back(*a.report_out);
    out << "test: " << summary_line(rep) << "\n";
  }
  json c = parse_json(transfer_config_to_json(cfg));
  c["data"] = a.data;
  c["checkpoint"] = a.checkpoint ? json(*a.checkpoint) : json(nullptr);
  write_run_manifest(a.out, RunRecord{"transfer", argv, c, cfg.seed, outputs});
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::string split = "transfer_test";
  std::string report_out;
};

void run_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const Split split = split_from_string(a.split);
  const GraphDataset data = load_dataset(a.data);
  const Classifier clf = classifier_from_archive(nn::load_archive(a.model));
  if (dataset_mode(data) != clf.mode()) throw std::invalid_argument("classifier and dataset modes differ");
  const auto rep = evaluate(clf, data, split);
  write_text(a.report_out, rep.to_json() + "\n");
  out << "eval " << a.split << ": " << summary_line(rep) << "\n";
  json c{{"data", a.data}, {"model", a.model}, {"split", a.split}};
  write_run_manifest(a.report_out, RunRecord{"eval", argv, c, clf.config().seed, {a.report_out}});
}

// ---------------------------------------------------------------- sweep

struct SweepSettings {
  std::string axis;
  std::vector<std::string> modes{"homogeneous", "heterogeneous"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int buildings = 8;
  int pretrain_buildings = 12;
  int storeys = 2;
  double error_rate = 0.3;
  double radius = 0.3;
  double fraction = 0.3;
  std::string strategy = "feat_extract_gat";
  std::size_t max_nodes = 0;
  std::uint64_t data_seed = 5;
};

json sweep_settings_json(const SweepSettings& s) {
  return json{{"axis", s.axis},
              {"modes", s.modes},
              {"seeds", s.seeds},
              {"buildings", s.buildings},
              {"pretrain_buildings", s.pretrain_buildings},
              {"storeys", s.storeys},
              {"error_rate", s.error_rate},
              {"radius", s.radius},
              {"fraction", s.fraction},
              {"strategy", s.strategy},
              {"max_nodes", s.max_nodes},
              {"data_seed", s.data_seed}};
}

SweepSettings sweep_settings_from_json(const json& j) {
  SweepSettings s;
  s.axis = j.at("axis").get<std::string>();
  s.modes = j.at("modes").get<std::vector<std::string>>();
  s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  s.buildings = j.at("buildings").get<int>();
  s.pretrain_buildings = j.at("pretrain_buildings").get<int>();
  s.storeys = j.at("storeys").get<int>();
  s.error_rate = j.at("error_rate").get<double>();
  s.radius = j.at("radius").get<double>();
  s.fraction = j.at("fraction").get<double>();
  s.strategy = j.at("strategy").get<std::string>();
  s.max_nodes = j.at("max_nodes").get<std::size_t>();
  s.data_seed = j.at("data_seed").get<std::uint64_t>();
  return s;
}

struct SweepPoint {
  GraphMode mode;
  double radius;
  double fraction;
  Strategy strategy;
  std::uint64_t seed;
};

std::vector<Strategy> all_strategies() {
  return {Strategy::feat_extract_mlp, Strategy::feat_extract_gat, Strategy::fine_tune_mlp, Strategy::none_mlp,
          Strategy::none_gat};
}

std::vector<SweepPoint> sweep_points(const SweepSettings& s) {
  std::vector<double> radii{s.radius}, fractions{s.fraction};
  std::vector<Strategy> strategies{strategy_from_string(s.strategy)};
  if (s.axis == "radius")
    radii = radius_grid();
  else if (s.axis == "fraction")
    fractions = fraction_grid();
  else if (s.axis == "strategy")
    strategies = all_strategies();
  else
    throw ConfigError("unknown sweep axis '" + s.axis + "'");
  std::vector<SweepPoint> pts;
  for (const auto& m : s.modes)
    for (double r : radii)
      for (auto seed : s.seeds)
        for (double f : fractions)
          for (auto st : strategies) pts.push_back({graph_mode_from_string(m), r, f, st, seed});
  return pts;
}

struct SweepArgs {
  std::string axis;
  std::optional<std::string> config;
  std::optional<std::string> modes;
  std::optional<std::string> seeds;
  std::optional<int> pretrain_epochs;
  std::optional<int> transfer_epochs;
  bool dry_run = false;
  std::string out;
};

void run_sweep(const SweepArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  auto kv = load_config_file(a.config);
  auto pkv = take_prefixed(kv, "pretrain.");
  auto tkv = take_prefixed(kv, "transfer.");
  SweepSettings defaults;
  defaults.axis = a.axis;
  json sj = sweep_settings_json(defaults);
  if (kv.count("axis")) throw ConfigError("the sweep axis is set by --axis");
  apply_overrides(sj, kv);
  if (a.modes) sj["modes"] = split_list(*a.modes);
  if (a.seeds) sj["seeds"] = typed_value("seeds", *a.seeds, sj["seeds"]);
  else if (auto e = env_seed()) sj["seeds"] = json::array({*e});
  SweepSettings s;
  try {
    s = sweep_settings_from_json(sj);
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  if (s.seeds.empty() || s.modes.empty()) throw ConfigError("sweep needs at least one mode and one seed");
  if (s.buildings < 1 || s.pretrain_buildings < 1) throw ConfigError("building counts must be >= 1");
  const auto points = sweep_points(s);

  // Validate the per-mode training configs before any work starts.
  const std::optional<std::uint64_t> no_seed;
  for (const auto& m : s.modes) (void)resolve_pretrain_config(graph_mode_from_string(m), pkv, no_seed, a.pretrain_epochs);
  (void)resolve_transfer_config(tkv, "", no_seed, a.transfer_epochs);

  json resolved = sj;
  resolved["pretrain"] = pkv;
  resolved["transfer"] = tkv;
  if (a.pretrain_epochs) resolved["pretrain_epochs"] = *a.pretrain_epochs;
  if (a.transfer_epochs) resolved["transfer_epochs"] = *a.transfer_epochs;

  if (a.dry_run) {
    for (const auto& p : points)
      out << "mode=" << to_string(p.mode) << " radius=" << p.radius << " fraction=" << p.fraction
          << " strategy=" << to_string(p.strategy) << " seed=" << p.seed << "\n";
    out << points.size() << " grid points\n";
    return;
  }

  std::ostringstream csv;
  csv << "axis,mode,radius,fraction,strategy,seed,average_f1,weighted_f1,accuracy,f1_semantic_conflict,"
         "f1_data_range_error,f1_topological_error,best_epoch,pretrain_val_loss\n";
  csv << std::setprecision(10);
  const HashingEmbedder embedder;
  BuildingSpec pre_spec;
  pre_spec.storeys = 1;
  pre_spec.seed = s.data_seed + 6;
  pre_spec.name = "P";
  BuildingSpec bench_spec;
  bench_spec.storeys = s.storeys;
  bench_spec.seed = s.data_seed;
  bench_spec.name = "T";

  // Points are grouped by (mode, radius, seed) so datasets and encoders are
  // built once per group.
  std::size_t i = 0;
  while (i < points.size()) {
    const auto& head = points[i];
    std::size_t j = i;
    while (j < points.size() && points[j].mode == head.mode && points[j].radius == head.radius &&
           points[j].seed == head.seed)
      ++j;
    const GraphDataset bench = error_benchmark(bench_spec, s.buildings, s.error_rate, head.radius, head.mode,
                                               s.data_seed, embedder, s.max_nodes);
    std::optional<PretrainResult> pre;
    const bool need_encoder = std::any_of(points.begin() + static_cast<std::ptrdiff_t>(i),
                                          points.begin() + static_cast<std::ptrdiff_t>(j),
                                          [](const SweepPoint& p) { return uses_encoder(p.strategy); });
    if (need_encoder) {
      const GraphDataset corpus = error_benchmark(pre_spec, s.pretrain_buildings, s.error_rate, head.radius, head.mode,
                                                  pre_spec.seed, embedder, s.max_nodes);
      pre = pretrain(corpus, resolve_pretrain_config(head.mode, pkv, head.seed, a.pretrain_epochs));
    }
    for (; i < j; ++i) {
      const auto& p = points[i];
      const GraphDataset split = make_splits(bench, p.fraction, p.seed);
      const TransferConfig tc = resolve_transfer_config(tkv, std::string(to_string(p.strategy)), p.seed, a.transfer_epochs);
      std::optional<BigNetModel> enc;
      if (uses_encoder(p.strategy)) enc.emplace(model_from_checkpoint(pre->checkpoint));
      Classifier clf(p.mode, tc, std::move(enc));
      const auto res = train_transfer(clf, split);
      const auto rep = evaluate(clf, split, Split::transfer_test);
      csv << s.axis << "," << to_string(p.mode) << "," << p.radius << "," << p.fraction << "," << to_string(p.strategy)
          << "," << p.seed << "," << rep.average_f1 << "," << rep.weighted_f1 << "," << rep.accuracy << ","
          << rep.per_class[1].f1 << "," << rep.per_class[2].f1 << "," << rep.per_class[3].f1 << "," << res.best_epoch
          << "," << (pre ? pre->best_val_loss : 0.0) << "\n";
      out << "mode=" << to_string(p.mode) << " radius=" << p.radius << " fraction=" << p.fraction
          << " strategy=" << to_string(p.strategy) << " seed=" << p.seed << " " << summary_line(rep) << "\n";
    }
  }
  write_text(a.out, csv.str());
  write_run_manifest(a.out, RunRecord{"sweep", argv, resolved, s.seeds.front(), {a.out}});
}

}  // namespace

std::vector<double> radius_grid() { return {0.2, 0.3, 0.4, 0.5, 0.6}; }
std::vector<double> fraction_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5}; }

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    if (!kv.emplace(key, value).second) throw ConfigError("line " + std::to_string(line_no) + ": repeated key '" + key + "'");
  }
  return kv;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"BIM graph encoding, masked autoencoder pretraining and error classification", "bignet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", BIGNET_VERSION);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate BIM-lite buildings from a parametric spec");
  synth->add_option("--spec", sy.spec, "BuildingSpec JSON file")->check(CLI::ExistingFile);
  synth->add_option("--count", sy.count, "Number of buildings (varied around the spec)");
  synth->add_option("--seed", sy.seed, "Spec seed");
  synth->add_option("--name", sy.name, "Building name prefix");
  synth->add_option("--storeys", sy.storeys, "Storeys per building");
  synth->add_option("--out", sy.out, "Output BIM-lite JSON")->required();

  InjectArgs in;
  auto* inject = app.add_subcommand("inject", "Inject labelled modelling errors");
  inject->add_option("--input", in.input, "BIM-lite JSON")->required()->check(CLI::ExistingFile);
  inject->add_option("--rate", in.rate, "Fraction of eligible items altered per error class")->required();
  inject->add_option("--seed", in.seed, "Sampling seed");
  inject->add_option("--radius", in.radius, "Spatial radius in metres");
  inject->add_option("--out", in.out, "Altered BIM-lite JSON")->required();
  inject->add_option("--labels-out", in.labels_out, "Label JSON")->required();
  inject->add_option("--report-out", in.report_out, "Injection report JSON");

  ConvertArgs cv;
  auto* convert = app.add_subcommand("convert", "Convert BIM-lite models to graphs");
  convert->add_option("--input", cv.inputs, "BIM-lite JSON (repeatable)")->required()->check(CLI::ExistingFile);
  convert->add_option("--labels", cv.labels, "Label JSON (repeatable)")->check(CLI::ExistingFile);
  convert->add_option("--radius", cv.radius, "Spatial radius in metres");
  convert->add_option("--mode", cv.mode, "homogeneous or heterogeneous")
      ->check(CLI::IsMember({"homogeneous", "heterogeneous"}));
  convert->add_option("--max-nodes", cv.max_nodes, "Partition floors above this projected node count (0: off)");
  convert->add_option("--embeddings", cv.embeddings, "Text embedding table JSON (default: hashing)")
      ->check(CLI::ExistingFile);
  convert->add_option("--out-dir", cv.out_dir, "Output directory")->required();
  convert->add_option("--split-fraction", cv.split_fraction, "Transfer training fraction");
  convert->add_option("--split-seed", cv.split_seed, "Split seed");
  convert->add_option("--transfer-regions", cv.transfer_regions, "Cap on transfer pool size (0: all)");

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "Masked graph autoencoder pretraining");
  pre->add_option("--data", pa.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--config", pa.config, "key = value config file")->check(CLI::ExistingFile);
  pre->add_option("--seed", pa.seed, "Seed");
  pre->add_option("--max-epochs", pa.max_epochs, "Epoch cap per grid point");
  pre->add_option("--out", pa.out, "Checkpoint path")->required();
  pre->add_option("--history", pa.history, "Per-epoch CSV");
  pre->add_option("--log-every", pa.log_every, "Progress line period in epochs (0: quiet)");

  TransferArgs ta;
  auto* tr = app.add_subcommand("transfer", "Train an error classifier on the transfer splits");
  tr->add_option("--data", ta.data, "Dataset manifest with transfer splits")->required()->check(CLI::ExistingFile);
  tr->add_option("--strategy", ta.strategy, "feat_extract_mlp|feat_extract_gat|fine_tune_mlp|none_mlp|none_gat")
      ->check(CLI::IsMember({"feat_extract_mlp", "feat_extract_gat", "fine_tune_mlp", "none_mlp", "none_gat"}));
  tr->add_option("--checkpoint", ta.checkpoint, "Pretrained checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--seed", ta.seed, "Seed");
  tr->add_option("--max-epochs", ta.max_epochs, "Epoch cap");
  tr->add_option("--out", ta.out, "Classifier checkpoint")->required();
  tr->add_option("--report-out", ta.report_out, "Test-split report JSON");
  tr->add_option("--log-every", ta.log_every, "Progress line period in epochs (0: quiet)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a classifier on a split");
  ev->add_option("--data", ea.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", ea.model, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ea.split, "Split to evaluate")
      ->check(CLI::IsMember({"pretrain", "transfer_train", "transfer_val", "transfer_test"}));
  ev->add_option("--report-out", ea.report_out, "Report JSON")->required();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Grid sweeps over radius, transfer fraction or strategy");
  sweep->add_option("--axis", sw.axis, "radius|fraction|strategy")
      ->required()
      ->check(CLI::IsMember({"radius", "fraction", "strategy"}));
  sweep->add_option("--config", sw.config, "key = value config file")->check(CLI::ExistingFile);
  sweep->add_option("--modes", sw.modes, "Comma list of graph modes");
  sweep->add_option("--seeds", sw.seeds, "Comma list of seeds");
  sweep->add_option("--pretrain-epochs", sw.pretrain_epochs, "Pretraining epoch cap");
  sweep->add_option("--transfer-epochs", sw.transfer_epochs, "Transfer epoch cap");
  sweep->add_flag("--dry-run", sw.dry_run, "List grid points without training");
  sweep->add_option("--out", sw.out, "Result CSV");

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
    if (sweep->parsed() && !sw.dry_run && sw.out.empty()) throw CLI::RequiredError("--out");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const std::vector<std::string> argv(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    if (synth->parsed()) run_synth(sy, argv, out);
    else if (inject->parsed()) run_inject(in, argv, out);
    else if (convert->parsed()) run_convert(cv, argv, out);
    else if (pre->parsed()) run_pretrain(pa, argv, out);
    else if (tr->parsed()) run_transfer(ta, argv, out);
    else if (ev->parsed()) run_eval(ea, argv, out);
    else if (sweep->parsed()) run_sweep(sw, argv, out);
    return 0;
  } catch (const std::exception& e) {
    json j;
    j["error"] = {{"type", error_type(e)}, {"message", e.what()}};
    err << j.dump() << "\n";
    return 1;
  }
}

}  // namespace bignet::cli
