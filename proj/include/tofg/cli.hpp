#pragma once

// Pipeline commands behind tools/tofg: run configuration, artifact manifests
// and the command implementations. Argument parsing lives in the tool.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <unistd.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tofg/error.hpp"
#include "tofg/graph.hpp"
#include "tofg/log.hpp"
#include "tofg/metrics.hpp"
#include "tofg/model.hpp"
#include "tofg/nn.hpp"
#include "tofg/scene.hpp"
#include "tofg/simulator.hpp"

namespace tofg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kValidation = 3, kIo = 4, kNumeric = 5 };

/// Maps library exceptions onto process exit codes.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const StateError*>(&e)) return kNumeric;
  if (dynamic_cast<const Error*>(&e)) return kValidation;
  return kFailure;
}

/// Keeps the large per-step tape buffers on the heap instead of a fresh
/// mmap for each one. Call once at process start.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

// ---------------------------------------------------------------------------
// Run configuration

struct TrainSection {
  int epochs = 60;
  int batch = 3;
  double lr = 1e-5;
  int sample_stride = 4;  // frames between training samples within a scenario
  std::string lr_schedule = "constant";  // or "cosine"
  friend bool operator==(const TrainSection&, const TrainSection&) = default;
};

struct RunConfig {
  graph::GraphConfig graph{.roi_radius = 40.0};
  model::ModelConfig model;
  TrainSection train;
  simulator::SimConfig sim;
  double w_theta = metrics::kDefaultHeadingWeight;

  void validate() const {
    model.validate();
    if (!(graph.target_len > 0.0)) throw ConfigError("config: graph.target_len must be > 0");
    if (graph.n_scale < 1) throw ConfigError("config: graph.n_scale must be >= 1");
    if (!(graph.interaction_threshold >= 0.0)) throw ConfigError("config: graph.interaction_threshold must be >= 0");
    if (!(graph.roi_radius >= 0.0)) throw ConfigError("config: graph.roi_radius must be >= 0");
    if (train.epochs < 0 || train.batch < 1 || !(train.lr > 0.0) || train.sample_stride < 1) {
      throw ConfigError("config: train needs epochs >= 0, batch >= 1, lr > 0, sample_stride >= 1");
    }
    if (train.lr_schedule != "constant" && train.lr_schedule != "cosine") {
      throw ConfigError("config: train.lr_schedule must be 'constant' or 'cosine'");
    }
    if (!(sim.duration > 0.0) || !(sim.replan_interval > 0.0)) {
      throw ConfigError("config: sim.duration and sim.replan_interval must be > 0");
    }
    if (!(w_theta >= 0.0)) throw ConfigError("config: metrics.w_theta must be >= 0");
  }

  /// Simulator settings with the history length shared with the model.
  simulator::SimConfig sim_config() const {
    auto s = sim;
    s.history = model.history;
    return s;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline json to_json(const RunConfig& c) {
  return {{"graph",
           {{"target_len", c.graph.target_len},
            {"n_scale", c.graph.n_scale},
            {"interaction_threshold", c.graph.interaction_threshold},
            {"roi_radius", c.graph.roi_radius}}},
          {"model",
           {{"embed_dim", c.model.embed_dim},
            {"n_gat_layers", c.model.n_gat_layers},
            {"n_head", c.model.n_head},
            {"horizon", c.model.horizon},
            {"history", c.model.history},
            {"mlp_hidden", c.model.mlp_hidden},
            {"coord_scale", c.model.coord_scale},
            {"speed_scale", c.model.speed_scale}}},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch", c.train.batch},
            {"lr", c.train.lr},
            {"sample_stride", c.train.sample_stride},
            {"lr_schedule", c.train.lr_schedule}}},
          {"sim",
           {{"duration", c.sim.duration},
            {"replan_interval", c.sim.replan_interval},
            {"collision_check", c.sim.collision_check},
            {"correction_decel", c.sim.correction_decel}}},
          {"metrics", {{"w_theta", c.w_theta}}}};
}

namespace detail {

template <typename T>
void read_field(const json& section, const std::string& path, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + path + "." + key + " has the wrong type");
  }
}

inline const json* section(const json& doc, const char* name, std::initializer_list<const char*> keys) {
  if (!doc.contains(name)) return nullptr;
  const json& s = doc.at(name);
  if (!s.is_object()) throw ConfigError(std::string("config: '") + name + "' must be an object");
  for (const auto& [k, v] : s.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* key) { return k == key; }) == keys.end()) {
      throw ConfigError(std::string("config: unknown key '") + name + "." + k + "'");
    }
  }
  return &s;
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [k, v] : doc.items()) {
    if (k != "graph" && k != "model" && k != "train" && k != "sim" && k != "metrics") {
      throw ConfigError("config: unknown section '" + k + "'");
    }
  }
  RunConfig c;
  using detail::read_field;
  if (const json* s = detail::section(doc, "graph", {"target_len", "n_scale", "interaction_threshold", "roi_radius"})) {
    read_field(*s, "graph", "target_len", c.graph.target_len);
    read_field(*s, "graph", "n_scale", c.graph.n_scale);
    read_field(*s, "graph", "interaction_threshold", c.graph.interaction_threshold);
    read_field(*s, "graph", "roi_radius", c.graph.roi_radius);
  }
  if (const json* s = detail::section(doc, "model", {"embed_dim", "n_gat_layers", "n_head", "horizon", "history",
                                                     "mlp_hidden", "coord_scale", "speed_scale"})) {
    read_field(*s, "model", "embed_dim", c.model.embed_dim);
    read_field(*s, "model", "n_gat_layers", c.model.n_gat_layers);
    read_field(*s, "model", "n_head", c.model.n_head);
    read_field(*s, "model", "horizon", c.model.horizon);
    read_field(*s, "model", "history", c.model.history);
    read_field(*s, "model", "mlp_hidden", c.model.mlp_hidden);
    read_field(*s, "model", "coord_scale", c.model.coord_scale);
    read_field(*s, "model", "speed_scale", c.model.speed_scale);
  }
  if (const json* s = detail::section(doc, "train", {"epochs", "batch", "lr", "sample_stride", "lr_schedule"})) {
    read_field(*s, "train", "epochs", c.train.epochs);
    read_field(*s, "train", "batch", c.train.batch);
    read_field(*s, "train", "lr", c.train.lr);
    read_field(*s, "train", "sample_stride", c.train.sample_stride);
    read_field(*s, "train", "lr_schedule", c.train.lr_schedule);
  }
  if (const json* s = detail::section(doc, "sim", {"duration", "replan_interval", "collision_check", "correction_decel"})) {
    read_field(*s, "sim", "duration", c.sim.duration);
    read_field(*s, "sim", "replan_interval", c.sim.replan_interval);
    read_field(*s, "sim", "collision_check", c.sim.collision_check);
    read_field(*s, "sim", "correction_decel", c.sim.correction_decel);
  }
  if (const json* s = detail::section(doc, "metrics", {"w_theta"})) read_field(*s, "metrics", "w_theta", c.w_theta);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes to a sibling temp file, then renames over the target.
inline void write_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

inline RunConfig load_config(const std::optional<std::string>& path) {
  if (!path) return {};
  json doc;
  try {
    doc = json::parse(read_file(*path));
  } catch (const json::parse_error& e) {
    throw ConfigError(*path + ": malformed config: " + e.what());
  }
  try {
    return config_from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(*path + ": " + e.what());
  }
}

inline void save_params(const nn::ParamStore& ps, const fs::path& path) {
  write_atomic(path, nn::params_to_json(ps).dump() + "\n");
}

/// Git blob object id: sha1("blob <size>\0" + content).
inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha1 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

/// Expands directories into their *.json files (sorted, manifests skipped).
inline std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::is_directory(in, ec)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        const auto& p = entry.path();
        if (entry.is_regular_file() && p.extension() == ".json" && p.filename() != "manifest.json") {
          found.push_back(p.string());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(in, ec)) {
      out.push_back(in);
    } else {
      throw IoError("input not found: '" + in + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& config, std::uint64_t seed)
      : started_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["config"] = to_json(config);
    doc_["seed"] = seed;
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  void add_input(const std::string& path) {
    doc_["inputs"].push_back({{"path", path}, {"blob_sha1", git_blob_sha1(read_file(path))}});
  }
  void add_input_content(const std::string& path, const std::string& content) {
    doc_["inputs"].push_back({{"path", path}, {"blob_sha1", git_blob_sha1(content)}});
  }
  void add_output(const std::string& path) { doc_["outputs"].push_back(path); }
  json& extra() { return doc_["details"]; }

  void write(const fs::path& path) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    doc_["timings"] = {{"wall_seconds", secs}};
    write_atomic(path, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point started_;
};

inline fs::path manifest_path_for(const fs::path& output) { return output.string() + ".manifest.json"; }

// ---------------------------------------------------------------------------
// Commands

struct GenOptions {
  scene::SyntheticKind kind = scene::SyntheticKind::kStraight;
  int count = 1;
  std::int64_t seed = 0;
  std::string out_dir;
};

inline std::string scenario_file_name(scene::SyntheticKind kind, int i) {
  std::ostringstream os;
  os << scene::to_string(kind) << '_' << std::setw(4) << std::setfill('0') << i << ".json";
  return os.str();
}

/// Scenario i uses seed + i.
inline std::vector<std::string> cmd_gen_scenarios(const GenOptions& opt, const RunConfig& config) {
  if (opt.count < 0) throw ConfigError("gen-scenarios: count must be >= 0");
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + opt.out_dir + "': " + ec.message());
  RunManifest manifest("gen-scenarios", config, static_cast<std::uint64_t>(opt.seed));
  manifest.extra() = {{"kind", scene::to_string(opt.kind)}, {"count", opt.count}};
  std::vector<std::string> written;
  for (int i = 0; i < opt.count; ++i) {
    const auto sc = scene::gen_synthetic(opt.kind, opt.seed + i);
    const fs::path path = fs::path(opt.out_dir) / scenario_file_name(opt.kind, i);
    write_atomic(path, scene::dump_scenario(sc));
    manifest.add_output(path.string());
    written.push_back(path.string());
  }
  manifest.write(fs::path(opt.out_dir) / "manifest.json");
  return written;
}

/// Frames ending at `last` (default: the ego's last frame) spanning the model history.
inline graph::FrameRange resolve_frames(const scene::Scenario& sc, std::optional<int> first, std::optional<int> last,
                                        int history) {
  const int l = last.value_or(sc.ego().last_frame());
  const int f = first.value_or(std::max(sc.first_frame(), l - history + 1));
  if (f > l) throw ConfigError("frame range is empty (first " + std::to_string(f) + " > last " + std::to_string(l) + ")");
  return {f, l};
}

struct BuildGraphOptions {
  std::string scenario;
  std::optional<int> first, last;
  std::string out;
};

inline graph::EdgeCounts cmd_build_graph(const BuildGraphOptions& opt, const RunConfig& config) {
  const auto sc = scene::load_scenario(opt.scenario);
  const auto range = resolve_frames(sc, opt.first, opt.last, config.model.history);
  graph::Tofg tofg;
  try {
    tofg = graph::build_tofg(sc, range, config.graph);
  } catch (const Error& e) {
    throw ValidationError("build-graph: scenario '" + sc.id + "': " + e.what());
  }
  write_atomic(opt.out, graph::to_json(tofg).dump() + "\n");
  const auto counts = graph::count_edges(tofg);
  RunManifest manifest("build-graph", config, 0);
  manifest.add_input(opt.scenario);
  manifest.add_output(opt.out);
  manifest.extra() = {{"scenario", sc.id},
                      {"frames", {range.first, range.last}},
                      {"counts",
                       {{"nodes", counts.nodes},
                        {"geometric", counts.geometric},
                        {"multiscale", counts.multiscale},
                        {"interaction", counts.interaction},
                        {"temporal", counts.temporal}}}};
  manifest.write(manifest_path_for(opt.out));
  return counts;
}

struct TrainCmdOptions {
  std::vector<std::string> inputs;
  std::optional<std::string> init_checkpoint;
  std::uint64_t seed = 0;
  std::string out_dir;  // params.json, loss.csv, manifest.json
};

inline std::string loss_csv(const std::vector<double>& curve) {
  std::ostringstream os;
  os << "epoch,loss\n" << std::setprecision(17);
  for (std::size_t e = 0; e < curve.size(); ++e) os << e + 1 << ',' << curve[e] << '\n';
  return os.str();
}

inline model::TrainResult cmd_train(const TrainCmdOptions& opt, const RunConfig& config) {
  const auto files = expand_inputs(opt.inputs);
  if (files.empty()) throw ValidationError("train: no scenario files");
  auto mcfg = config.model;
  mcfg.seed = opt.seed;
  RunManifest manifest("train", config, opt.seed);
  std::vector<model::PreparedSample> corpus;
  for (const auto& f : files) {
    const std::string text = read_file(f);
    manifest.add_input_content(f, text);
    scene::Scenario sc;
    try {
      sc = scene::parse_scenario(text);
    } catch (const Error& e) {
      throw ValidationError(f + ": " + e.what());
    }
    for (int frame : model::sample_frames(sc, mcfg, config.train.sample_stride)) {
      corpus.push_back(model::prepare(model::make_sample(sc, frame, mcfg, config.graph), mcfg));
    }
  }
  if (corpus.empty()) throw ValidationError("train: scenarios are too short for history + horizon");
  std::optional<nn::ParamStore> init;
  if (opt.init_checkpoint) {
    init = nn::load_params(*opt.init_checkpoint);
    manifest.add_input(*opt.init_checkpoint);
  }
  model::TrainOptions topt{config.train.epochs, config.train.batch, config.train.lr, opt.seed,
                          config.train.lr_schedule == "cosine" ? model::LrSchedule::kCosine
                                                               : model::LrSchedule::kConstant};
  auto result = model::train(corpus, mcfg, topt, init ? &*init : nullptr);
  const fs::path dir(opt.out_dir);
  save_params(result.params, dir / "params.json");
  write_atomic(dir / "loss.csv", loss_csv(result.loss_curve));
  manifest.add_output((dir / "params.json").string());
  manifest.add_output((dir / "loss.csv").string());
  manifest.extra() = {{"samples", corpus.size()}, {"scenarios", files.size()}};
  manifest.write(dir / "manifest.json");
  return result;
}

inline nn::ParamStore params_or_fresh(const std::optional<std::string>& checkpoint, const model::ModelConfig& cfg) {
  return checkpoint ? nn::load_params(*checkpoint) : model::init_params(cfg);
}

struct PredictOptions {
  std::string scenario;
  std::optional<std::string> checkpoint;  // fresh parameters from --seed when absent
  std::optional<int> frame;               // default: latest frame with a full horizon, else the last frame
  std::uint64_t seed = 0;
  std::string out;
};

inline int default_frame(const scene::Scenario& sc, const model::ModelConfig& cfg) {
  const auto frames = model::sample_frames(sc, cfg, 1);
  return frames.empty() ? sc.ego().last_frame() : frames.back();
}

inline model::Prediction cmd_predict(const PredictOptions& opt, const RunConfig& config) {
  const auto sc = scene::load_scenario(opt.scenario);
  auto mcfg = config.model;
  mcfg.seed = opt.seed;
  const auto params = params_or_fresh(opt.checkpoint, mcfg);
  const int frame = opt.frame.value_or(default_frame(sc, mcfg));
  const auto tofg = graph::build_tofg(sc, {frame - mcfg.history + 1, frame}, config.graph);
  auto pred = model::predict(tofg, mcfg, params);

  json wps = json::array();
  for (const auto& p : pred.waypoints) wps.push_back({p.x, p.y, p.theta});
  json doc = {{"scenario", sc.id}, {"frame", frame}, {"frame_interval", sc.frame_interval}, {"waypoints", wps}};
  std::vector<geometry::Pose2D> truth;
  for (int k = 1; k <= mcfg.horizon; ++k) {
    if (const auto s = scene::state_at(sc.ego(), frame + k)) truth.push_back(s->pose());
  }
  if (truth.size() == pred.waypoints.size()) doc["metrics"] = metrics::to_json(metrics::pred_metrics(pred.waypoints, truth));
  write_atomic(opt.out, doc.dump(2) + "\n");

  RunManifest manifest("predict", config, opt.seed);
  manifest.add_input(opt.scenario);
  if (opt.checkpoint) manifest.add_input(*opt.checkpoint);
  manifest.add_output(opt.out);
  manifest.write(manifest_path_for(opt.out));
  return pred;
}

enum class PlannerKind { kModel, kOracle, kStationary, kConstantVelocity };

inline std::optional<PlannerKind> parse_planner(const std::string& s) {
  if (s == "model") return PlannerKind::kModel;
  if (s == "oracle") return PlannerKind::kOracle;
  if (s == "stationary") return PlannerKind::kStationary;
  if (s == "constant_velocity") return PlannerKind::kConstantVelocity;
  return std::nullopt;
}

struct SimulateOptions {
  std::vector<std::string> inputs;
  PlannerKind planner = PlannerKind::kModel;
  std::optional<std::string> checkpoint;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_dir;  // report.csv, traces/<scenario>.json, manifest.json
};

inline simulator::BatchResult cmd_simulate(const SimulateOptions& opt, const RunConfig& config) {
  const auto files = expand_inputs(opt.inputs);
  if (files.empty()) throw ValidationError("simulate: no scenario files");
  RunManifest manifest("simulate", config, opt.seed);
  std::vector<scene::Scenario> scenarios;
  for (const auto& f : files) {
    const std::string text = read_file(f);
    manifest.add_input_content(f, text);
    try {
      scenarios.push_back(scene::parse_scenario(text));
    } catch (const Error& e) {
      throw ValidationError(f + ": " + e.what());
    }
  }
  auto mcfg = config.model;
  mcfg.seed = opt.seed;
  std::optional<nn::ParamStore> params;
  if (opt.planner == PlannerKind::kModel) {
    params = params_or_fresh(opt.checkpoint, mcfg);
    if (opt.checkpoint) manifest.add_input(*opt.checkpoint);
  }
  const int horizon = mcfg.horizon;
  const simulator::PlannerFactory factory = [&](const scene::Scenario& sc) -> std::unique_ptr<simulator::Planner> {
    switch (opt.planner) {
      case PlannerKind::kOracle:
        return std::make_unique<simulator::OraclePlanner>(sc, horizon);
      case PlannerKind::kStationary:
        return std::make_unique<simulator::StationaryPlanner>(horizon);
      case PlannerKind::kConstantVelocity:
        return std::make_unique<simulator::ConstantVelocityPlanner>(horizon, sc.frame_interval);
      case PlannerKind::kModel:
        break;
    }
    return std::make_unique<simulator::ModelPlanner>(*params, mcfg, config.graph);
  };
  auto result = simulator::batch_eval(scenarios, factory, config.sim_config(), config.w_theta, opt.jobs);

  const fs::path dir(opt.out_dir);
  std::ostringstream csv;
  csv << metrics::plan_csv_header() << ",corrections\n";
  json failures = json::array();
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    if (!row.report) {
      failures.push_back({{"scenario", row.scenario_id}, {"error", row.error}});
      log::warn("simulate: scenario '" + row.scenario_id + "' failed: " + row.error);
      continue;
    }
    csv << metrics::plan_csv_row(row.scenario_id, *row.report) << ',' << row.corrections << '\n';
    const fs::path trace_path = dir / "traces" / (row.scenario_id + ".json");
    write_atomic(trace_path, simulator::to_json(result.traces[i]).dump() + "\n");
    manifest.add_output(trace_path.string());
  }
  csv << metrics::plan_csv_row("mean", result.mean) << ",\n";
  write_atomic(dir / "report.csv", csv.str());
  manifest.add_output((dir / "report.csv").string());
  manifest.extra() = {{"failures", failures}, {"mean", metrics::to_json(result.mean)}};
  manifest.write(dir / "manifest.json");
  return result;
}

struct AttentionOptions {
  std::string scenario;
  std::optional<std::string> checkpoint;
  std::optional<int> frame;
  std::uint64_t seed = 0;
  std::string out;
};

/// Rows `node_id,frame,x,y,head0..head{n-1},mean` over every attended node.
inline std::string attention_csv(const model::AttentionMap& m) {
  std::ostringstream os;
  os << "node_id,frame,x,y";
  for (std::size_t h = 0; h < m.per_head.rows(); ++h) os << ",head" << h;
  os << ",mean\n" << std::setprecision(17);
  for (std::size_t j = 0; j < m.size(); ++j) {
    os << m.node[j] << ',' << m.frame[j] << ',' << m.position[j].x << ',' << m.position[j].y;
    for (std::size_t h = 0; h < m.per_head.rows(); ++h) os << ',' << m.per_head(h, j);
    os << ',' << m.mean[j] << '\n';
  }
  return os.str();
}

inline model::AttentionMap cmd_export_attention(const AttentionOptions& opt, const RunConfig& config) {
  const auto sc = scene::load_scenario(opt.scenario);
  auto mcfg = config.model;
  mcfg.seed = opt.seed;
  const auto params = params_or_fresh(opt.checkpoint, mcfg);
  const int frame = opt.frame.value_or(default_frame(sc, mcfg));
  const auto tofg = graph::build_tofg(sc, {frame - mcfg.history + 1, frame}, config.graph);
  auto map = model::predict(tofg, mcfg, params).attention;
  write_atomic(opt.out, attention_csv(map));
  RunManifest manifest("export-attention", config, opt.seed);
  manifest.add_input(opt.scenario);
  if (opt.checkpoint) manifest.add_input(*opt.checkpoint);
  manifest.add_output(opt.out);
  manifest.write(manifest_path_for(opt.out));
  return map;
}

}  // namespace tofg::cli
