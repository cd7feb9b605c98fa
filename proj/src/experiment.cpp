// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <set>
#include <sstream>

#include "moelab/checkpoint.hpp"
#include "moelab/compressor.hpp"
#include "moelab/errors.hpp"
#include "moelab/format.hpp"
#include "moelab/rng.hpp"
#include "moelab/stats.hpp"

namespace moelab {

using json = nlohmann::ordered_json;

namespace {

const std::set<std::string>& preset_names() {
  static const std::set<std::string> names{"single-expert", "highest-frequent", "cross-layer",
                                           "topk",          "all-in-layer",     "grouped",
                                           "randomize"};
  return names;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(std::string(where) + ": unknown field '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

json model_config_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},   {"num_experts", c.num_experts},
          {"top_k", c.top_k},             {"d_model", c.d_model},
          {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"use_shared_expert", c.use_shared_expert},
          {"use_attention", c.use_attention}, {"eos_token", c.eos_token},
          {"init_scale", c.init_scale}};
}

ModelConfig model_config_from(const json& j) {
  reject_unknown(j,
                 {"num_layers", "num_experts", "top_k", "d_model", "d_ff", "vocab_size",
                  "max_seq_len", "use_shared_expert", "use_attention", "eos_token", "init_scale"},
                 "model.config");
  ModelConfig c = default_model_config();
  read(j, "num_layers", c.num_layers);
  read(j, "num_experts", c.num_experts);
  read(j, "top_k", c.top_k);
  read(j, "d_model", c.d_model);
  read(j, "d_ff", c.d_ff);
  read(j, "vocab_size", c.vocab_size);
  read(j, "max_seq_len", c.max_seq_len);
  read(j, "use_shared_expert", c.use_shared_expert);
  read(j, "use_attention", c.use_attention);
  read(j, "eos_token", c.eos_token);
  read(j, "init_scale", c.init_scale);
  return c;
}

json train_config_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"target_accuracy", t.target_accuracy},
          {"eval_every", t.eval_every},
          {"stop_at_target", t.stop_at_target}};
}

TrainConfig train_config_from(const json& j) {
  reject_unknown(j,
                 {"steps", "learning_rate", "batch_size", "seed", "target_accuracy", "eval_every",
                  "stop_at_target"},
                 "model.train");
  TrainConfig t;
  read(j, "steps", t.steps);
  read(j, "learning_rate", t.learning_rate);
  read(j, "batch_size", t.batch_size);
  read(j, "seed", t.seed);
  read(j, "target_accuracy", t.target_accuracy);
  read(j, "eval_every", t.eval_every);
  read(j, "stop_at_target", t.stop_at_target);
  return t;
}

json task_json(const TaskSpec& t) {
  return {{"kind", std::string(to_string(t.kind))},
          {"modulus", t.modulus},
          {"length", t.length},
          {"open_tag", t.open_tag},
          {"close_tag", t.close_tag},
          {"seed", t.seed}};
}

TaskSpec task_from(const json& j) {
  reject_unknown(j, {"kind", "modulus", "length", "open_tag", "close_tag", "seed"}, "task");
  TaskSpec t;
  if (auto it = j.find("kind"); it != j.end()) {
    try {
      t.kind = task_kind_from_string(it->get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(std::string("task.kind: ") + e.what());
    }
  }
  read(j, "modulus", t.modulus);
  read(j, "length", t.length);
  read(j, "open_tag", t.open_tag);
  read(j, "close_tag", t.close_tag);
  read(j, "seed", t.seed);
  return t;
}

json transfer_json(const TransferParams& p) {
  return {{"pcie_bandwidth", p.pcie_bandwidth},
          {"gpu_mem_bandwidth", p.gpu_mem_bandwidth},
          {"decompress_throughput", p.decompress_throughput},
          {"overlap", p.overlap}};
}

TransferParams transfer_from(const json& j) {
  reject_unknown(j, {"pcie_bandwidth", "gpu_mem_bandwidth", "decompress_throughput", "overlap"},
                 "transfer");
  TransferParams p;
  read(j, "pcie_bandwidth", p.pcie_bandwidth);
  read(j, "gpu_mem_bandwidth", p.gpu_mem_bandwidth);
  read(j, "decompress_throughput", p.decompress_throughput);
  read(j, "overlap", p.overlap);
  return p;
}

json ranges_json(const std::vector<LayerRange>& ranges) {
  json out = json::array();
  for (const auto& r : ranges) out.push_back(json::array({r.first, r.last}));
  return out;
}

std::vector<LayerRange> ranges_from(const json& j) {
  std::vector<LayerRange> out;
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != 2) throw ConfigError("protocol.ranges: expected [first, last] pairs");
    out.push_back({r[0].get<int>(), r[1].get<int>()});
  }
  return out;
}

json protocol_json(const ProtocolConfig& p) {
  return {{"preset", p.preset},
          {"layers", p.layers},
          {"expert", p.expert},
          {"k", p.k},
          {"ranges", ranges_json(p.ranges)}};
}

ProtocolConfig protocol_from(const json& j) {
  reject_unknown(j, {"preset", "layers", "expert", "k", "ranges"}, "protocol");
  ProtocolConfig p;
  read(j, "preset", p.preset);
  read(j, "layers", p.layers);
  read(j, "expert", p.expert);
  read(j, "k", p.k);
  if (auto it = j.find("ranges"); it != j.end()) p.ranges = ranges_from(*it);
  return p;
}

std::vector<int> default_layers(const std::string& preset, int num_layers) {
  if (preset == "single-expert" || preset == "randomize" || preset == "highest-frequent") return {0};
  if (preset == "cross-layer") {
    std::set<int> picks{0, num_layers / 2, (3 * num_layers) / 4, num_layers - 1};
    return {picks.begin(), picks.end()};
  }
  std::vector<int> all(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) all[static_cast<std::size_t>(l)] = l;
  return all;
}

std::vector<LayerRange> default_groups(int num_layers) {
  if (num_layers == 26) return overlapping_groups_26();
  if (num_layers == 1) return {{0, 0}};
  const int half = num_layers / 2;
  return {{0, half - 1}, {half, num_layers - 1}};
}

std::string arm_label(const TargetStrategy& s) {
  return std::visit(
      [](const auto& t) -> std::string {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, target::SingleExpert>) {
          return "single-expert:" + to_string(t.id);
        } else if constexpr (std::is_same_v<T, target::RandomizeExpert>) {
          return "randomize:" + to_string(t.id);
        } else if constexpr (std::is_same_v<T, target::HighestFrequent>) {
          return "highest-frequent:L" + std::to_string(t.layer);
        } else if constexpr (std::is_same_v<T, target::TopKFrequent>) {
          return "topk" + std::to_string(t.k) + ":L" + std::to_string(t.layer);
        } else if constexpr (std::is_same_v<T, target::AllInLayer>) {
          return "all-in-layer:L" + std::to_string(t.layer);
        } else {
          std::string label = "grouped:";
          for (std::size_t i = 0; i < t.ranges.size(); ++i) {
            if (i) label += '+';
            label += "L" + std::to_string(t.ranges[i].first) + "-L" + std::to_string(t.ranges[i].last);
          }
          return label;
        }
      },
      s);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> arm_pia_at(const Arm& arm, double p) {
  std::vector<double> out;
  for (const auto& c : arm.cells)
    if (c.p == p) out.push_back(c.pia);
  return out;
}

json cell_json(const Cell& c) {
  return {{"p", c.p}, {"seed", c.seed}, {"ica", c.ica}, {"pia", c.pia}, {"degenerate", c.degenerate}};
}

}  // namespace

std::vector<CompressionRow> compression_rows(const MoEModel& model, double p) {
  std::vector<CompressionRow> rows;
  for (int l = 0; l < model.config.num_layers; ++l) {
    for (int e = 0; e < model.config.num_experts; ++e) {
      const ExpertId id{l, e};
      const ExpertWeights& w = model.expert(id);
      std::vector<double> flat(values(w.w_in).begin(), values(w.w_in).end());
      flat.insert(flat.end(), values(w.w_out).begin(), values(w.w_out).end());
      CompressionRow row{id, compute_error_bound(w, p), 1.0, 0.0};
      if (row.error_bound > 0) {
        const CompressedBlock block = compress_eb(flat, row.error_bound);
        const std::vector<double> back = decompress_eb(block);
        row.ratio = ratio(block, flat);
        for (std::size_t i = 0; i < flat.size(); ++i)
          row.max_error = std::max(row.max_error, std::abs(flat[i] - back[i]));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

ModelConfig default_model_config() {
  ModelConfig c;
  c.eos_token = vocab::kEos;
  return c;
}

void ExperimentConfig::validate() const {
  if (p_values.empty()) throw ConfigError("at least one p value is required");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  for (double p : p_values)
    if (!std::isfinite(p) || p < 0) throw ConfigError("p values must be finite and non-negative");
  if (!std::isfinite(compression_p) || compression_p <= 0)
    throw ConfigError("compression_p must be positive");
  if (eval_samples < 1) throw ConfigError("eval_samples must be positive");
  if (!preset_names().contains(protocol.preset))
    throw ConfigError("unknown protocol preset '" + protocol.preset + "'");
  if (protocol.k < 1) throw ConfigError("protocol.k must be positive");
  model.validate();
  task.validate();
  transfer.validate();
  if (!checkpoint) {
    train.validate();
    if (train_samples < 1) throw ConfigError("train_samples must be positive");
    for (int l : protocol.layers)
      if (l < 0 || l >= model.num_layers)
        throw ConfigError("protocol layer " + std::to_string(l) + " out of range");
  }
}

json to_json(const ExperimentConfig& c) {
  json model;
  if (c.checkpoint) {
    model["checkpoint"] = c.checkpoint->generic_string();
  } else {
    model["config"] = model_config_json(c.model);
    model["train"] = train_config_json(c.train);
    model["train_samples"] = c.train_samples;
  }
  return {{"model", model},
          {"task", task_json(c.task)},
          {"eval_samples", c.eval_samples},
          {"protocol", protocol_json(c.protocol)},
          {"p_values", c.p_values},
          {"seeds", c.seeds},
          {"clamp", c.clamp},
          {"compression_p", c.compression_p},
          {"transfer", transfer_json(c.transfer)},
          {"output_dir", c.output_dir.generic_string()}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    reject_unknown(j,
                   {"model", "task", "eval_samples", "protocol", "p_values", "seeds", "clamp",
                    "compression_p", "transfer", "output_dir"},
                   "config");
    if (auto it = j.find("model"); it != j.end()) {
      reject_unknown(*it, {"checkpoint", "config", "train", "train_samples"}, "model");
      if (auto cp = it->find("checkpoint"); cp != it->end()) {
        if (it->contains("train") || it->contains("train_samples"))
          throw ConfigError("model: checkpoint and train spec are mutually exclusive");
        c.checkpoint = cp->get<std::string>();
      }
      if (auto mc = it->find("config"); mc != it->end()) c.model = model_config_from(*mc);
      if (auto tc = it->find("train"); tc != it->end()) c.train = train_config_from(*tc);
      read(*it, "train_samples", c.train_samples);
    }
    if (auto it = j.find("task"); it != j.end()) c.task = task_from(*it);
    read(j, "eval_samples", c.eval_samples);
    if (auto it = j.find("protocol"); it != j.end()) c.protocol = protocol_from(*it);
    read(j, "p_values", c.p_values);
    read(j, "seeds", c.seeds);
    read(j, "clamp", c.clamp);
    read(j, "compression_p", c.compression_p);
    if (auto it = j.find("transfer"); it != j.end()) c.transfer = transfer_from(*it);
    if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = it->get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

std::vector<TargetStrategy> protocol_arms(const ProtocolConfig& protocol, int num_layers) {
  const std::string& preset = protocol.preset;
  if (!preset_names().contains(preset)) throw ConfigError("unknown protocol preset '" + preset + "'");
  std::vector<TargetStrategy> arms;
  if (preset == "grouped") {
    const auto ranges = protocol.ranges.empty() ? default_groups(num_layers) : protocol.ranges;
    for (const auto& r : ranges) arms.emplace_back(target::GroupedHighestFrequent{{r}});
    return arms;
  }
  const auto layers = protocol.layers.empty() ? default_layers(preset, num_layers) : protocol.layers;
  for (int l : layers) {
    if (preset == "single-expert") {
      arms.emplace_back(target::SingleExpert{{l, protocol.expert}});
    } else if (preset == "randomize") {
      arms.emplace_back(target::RandomizeExpert{{l, protocol.expert}});
    } else if (preset == "highest-frequent" || preset == "cross-layer") {
      arms.emplace_back(target::HighestFrequent{l});
    } else if (preset == "topk") {
      arms.emplace_back(target::TopKFrequent{l, protocol.k});
    } else {
      arms.emplace_back(target::AllInLayer{l});
    }
  }
  return arms;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MoEModel obtain_model(const ExperimentConfig& config, std::optional<TrainSummary>* training) {
  if (config.checkpoint) {
    try {
      return load_checkpoint(*config.checkpoint);
    } catch (const FormatError& e) {
      throw IoError("cannot load checkpoint " + config.checkpoint->string() + ": " + e.what());
    }
  }
  const Dataset train_data = generate_dataset(config.task, config.train_samples, Split::kTrain);
  const Dataset eval_data = generate_dataset(config.task, config.eval_samples, Split::kEval);
  TrainResult result = moelab::train(config.model, train_data, eval_data, config.task, config.train);
  if (training)
    *training = TrainSummary{result.steps_run, result.final_loss, result.eval_ica, result.eval_pia,
                             result.reached_target};
  return std::move(result.model);
}

Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::optional<TrainSummary> training;
  MoEModel model = obtain_model(config, &training);
  Report report = run_experiment(config, model);
  report.training = training;
  return report;
}

Report run_experiment(const ExperimentConfig& config, const MoEModel& model) {
  config.validate();
  const ModelConfig& mc = model.config;
  Report report;
  report.config = config;

  const Dataset eval_data = generate_dataset(config.task, config.eval_samples, Split::kEval);
  report.baseline_log = ActivationLog(mc.num_layers, mc.num_experts);
  const ModelEvaluation baseline = evaluate_model(model, eval_data, config.task, &report.baseline_log);
  report.baseline_ica = baseline.outcome.ica;
  report.baseline_pia = baseline.outcome.pia;
  report.baseline_degenerate = baseline.outcome.degenerate;

  for (const auto& strategy : protocol_arms(config.protocol, mc.num_layers)) {
    Arm arm;
    arm.label = arm_label(strategy);
    arm.strategy = strategy;
    arm.targets = select_targets(strategy, report.baseline_log);
    const bool randomize = std::holds_alternative<target::RandomizeExpert>(strategy);
    for (double p : config.p_values) {
      ErrorSpec spec;
      spec.percentage = p;
      spec.clamp_to_bound = config.clamp;
      arm.plans.push_back(make_plan(arm.targets, model, spec));
    }
    for (std::size_t pi = 0; pi < config.p_values.size(); ++pi) {
      for (std::uint64_t seed : config.seeds) {
        MoEModel perturbed = [&] {
          if (randomize) return randomize_expert(model, arm.targets.front(), seed);
          PerturbationPlan plan = arm.plans[pi];
          plan.spec.seed = seed;
          return inject_errors(model, plan);
        }();
        const ModelEvaluation eval = evaluate_model(perturbed, eval_data, config.task);
        arm.cells.push_back({config.p_values[pi], seed, eval.outcome.ica, eval.outcome.pia,
                             eval.outcome.degenerate});
      }
    }
    report.arms.push_back(std::move(arm));
  }

  report.compression = compression_rows(model, config.compression_p);
  std::vector<ExpertRatio> ratios;
  for (const auto& row : report.compression) ratios.push_back({row.id, row.ratio});
  report.offload = speedup_report(mc, ratios, config.transfer);
  return report;
}

json report_json(const Report& r) {
  json out;
  out["metadata"] = {{"config_hash", config_hash(r.config)},
                     {"generator", RngStream::kGeneratorName},
                     {"seeds", r.config.seeds}};
  out["config"] = to_json(r.config);
  if (r.training) {
    out["training"] = {{"steps_run", r.training->steps_run},
                       {"final_loss", r.training->final_loss},
                       {"eval_ica", r.training->eval_ica},
                       {"eval_pia", r.training->eval_pia},
                       {"reached_target", r.training->reached_target}};
  }
  out["baseline"] = {{"ica", r.baseline_ica},
                     {"pia", r.baseline_pia},
                     {"degenerate", r.baseline_degenerate}};

  json arms = json::array();
  for (const auto& arm : r.arms) {
    json a;
    a["label"] = arm.label;
    a["strategy"] = strategy_name(arm.strategy);
    a["params"] = strategy_params(arm.strategy);
    json targets = json::array();
    for (const auto& id : arm.targets) targets.push_back({{"layer", id.layer}, {"expert", id.expert}});
    a["targets"] = targets;
    json plans = json::array();
    for (const auto& plan : arm.plans) plans.push_back(plan_to_json(plan, arm.strategy));
    a["plans"] = plans;
    json cells = json::array();
    for (const auto& c : arm.cells) cells.push_back(cell_json(c));
    a["cells"] = cells;
    json agg = json::array();
    for (double p : r.config.p_values) {
      std::vector<double> ica, pia;
      int degenerate = 0;
      for (const auto& c : arm.cells) {
        if (c.p != p) continue;
        ica.push_back(c.ica);
        pia.push_back(c.pia);
        degenerate += c.degenerate ? 1 : 0;
      }
      agg.push_back({{"p", p},
                     {"ica_mean", mean(ica)},
                     {"ica_std", stddev(ica)},
                     {"pia_mean", mean(pia)},
                     {"pia_std", stddev(pia)},
                     {"degenerate_cells", degenerate}});
    }
    a["aggregate"] = agg;
    arms.push_back(std::move(a));
  }
  out["arms"] = arms;

  // Worst vs best arm by mean PIA at the largest p.
  if (r.arms.size() >= 2) {
    const double p_max = *std::max_element(r.config.p_values.begin(), r.config.p_values.end());
    std::size_t worst = 0, best = 0;
    for (std::size_t i = 1; i < r.arms.size(); ++i) {
      if (mean(arm_pia_at(r.arms[i], p_max)) < mean(arm_pia_at(r.arms[worst], p_max))) worst = i;
      if (mean(arm_pia_at(r.arms[i], p_max)) > mean(arm_pia_at(r.arms[best], p_max))) best = i;
    }
    const auto a = arm_pia_at(r.arms[worst], p_max);
    const auto b = arm_pia_at(r.arms[best], p_max);
    const RankTest test = mann_whitney_less(a, b);
    out["comparison"] = {{"p", p_max},
                         {"worst_arm", r.arms[worst].label},
                         {"best_arm", r.arms[best].label},
                         {"worst_pia_drop", r.baseline_pia - mean(a)},
                         {"best_pia_drop", r.baseline_pia - mean(b)},
                         {"margin", mean(b) - mean(a)},
                         {"test", "mann-whitney-u, one-sided"},
                         {"u", test.u},
                         {"p_value", test.p_value},
                         {"exact", test.exact}};
  }

  out["activation_metrics"] = metrics_summary(r.baseline_log);
  json compression = json::array();
  for (const auto& row : r.compression) {
    compression.push_back({{"layer", row.id.layer},
                           {"expert", row.id.expert},
                           {"error_bound", row.error_bound},
                           {"ratio", row.ratio},
                           {"max_error", row.max_error}});
  }
  out["compression"] = compression;
  json offload = json::array();
  for (const auto& row : r.offload) {
    offload.push_back({{"expert", row.label},
                       {"raw_bytes", row.raw_bytes},
                       {"ratio", row.ratio},
                       {"t_uncompressed", row.t_uncompressed},
                       {"t_compressed", row.t_compressed},
                       {"speedup", row.speedup},
                       {"break_even", std::isfinite(row.break_even) ? json(row.break_even) : json(nullptr)}});
  }
  out["offload"] = offload;
  return out;
}

std::string summary_csv(const Report& r) {
  std::ostringstream os;
  os << "arm,p,seed,ica,pia,degenerate\n";
  os << "baseline,,," << format_double(r.baseline_ica) << ',' << format_double(r.baseline_pia) << ','
     << (r.baseline_degenerate ? 1 : 0) << '\n';
  for (const auto& arm : r.arms) {
    for (const auto& c : arm.cells) {
      os << arm.label << ',' << format_double(c.p) << ',' << c.seed << ',' << format_double(c.ica) << ','
         << format_double(c.pia) << ',' << (c.degenerate ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

void emit_report(const Report& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_text_file(dir / "report.json", report_json(report).dump(2) + "\n");
  write_text_file(dir / "summary.csv", summary_csv(report));
  write_text_file(dir / "heatmap.csv", heatmap_csv(report.baseline_log));
  write_text_file(dir / "compression.csv", offload_csv(report.offload));
}

}  // namespace moelab
