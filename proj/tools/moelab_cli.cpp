// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// moelab command-line driver.
//
//   moelab train          --config run.json --checkpoint model.moem
//   moelab inspect        --checkpoint model.moem --out stats/
//   moelab perturb        --config run.json --preset all-in-layer --p 0.3,0.8
//   moelab compress       --input w.f64 --output w.melc --error-bound 1e-3
//   moelab decompress     --input w.melc --output w.f64
//   moelab offload-report --checkpoint model.moem --compression-p 0.1
//
// Exit status: 0 success, 1 configuration error, 2 I/O error, 3 internal
// invariant violation.

#include <cstdio>
#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "moelab/checkpoint.hpp"
#include "moelab/compressor.hpp"
#include "moelab/errors.hpp"
#include "moelab/experiment.hpp"
#include "moelab/format.hpp"

namespace {

using moelab::ExperimentConfig;
using json = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kConfig = 1, kIo = 2, kInternal = 3 };

/// Flags shared by the model-driven subcommands. Each one, when given,
/// overrides the matching field of the JSON config.
struct Overrides {
  std::string config_path;
  std::optional<std::string> checkpoint;
  std::optional<std::string> task;
  std::optional<int> modulus;
  std::optional<int> eval_samples;
  std::optional<int> train_samples;
  std::optional<int> steps;
  std::optional<std::uint64_t> train_seed;
  std::optional<double> learning_rate;
  std::optional<std::string> preset;
  std::optional<std::vector<int>> layers;
  std::optional<int> expert;
  std::optional<int> k;
  std::optional<std::vector<double>> p_values;
  std::optional<std::vector<std::uint64_t>> seeds;
  bool clamp = false;
  std::optional<double> compression_p;
  std::optional<double> pcie;
  std::optional<double> decompress;
  bool overlap = false;
  std::optional<std::string> out;
};

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config");
  cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint (.moem)");
  cmd->add_option("--task", o.task, "modular_sum, copy_reverse or comparison");
  cmd->add_option("--modulus", o.modulus, "Operand range for modular_sum / comparison");
  cmd->add_option("--eval-samples", o.eval_samples);
  cmd->add_option("--out", o.out, "Output path");
}

void add_train_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--train-samples", o.train_samples);
  cmd->add_option("--steps", o.steps);
  cmd->add_option("--train-seed", o.train_seed);
  cmd->add_option("--learning-rate", o.learning_rate);
}

void add_transfer_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--compression-p", o.compression_p, "Error-bound percentage for compression");
  cmd->add_option("--pcie", o.pcie, "Host link bandwidth, bytes/s");
  cmd->add_option("--decompress-throughput", o.decompress, "Bytes/s of decompressed output");
  cmd->add_flag("--overlap", o.overlap, "Overlap transfer with decompression");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    const moelab::Bytes raw = moelab::read_file(o.config_path);
    json j = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded()) throw moelab::ConfigError(o.config_path + ": not valid JSON");
    c = moelab::experiment_config_from_json(j);
  }
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.task) {
    try {
      c.task.kind = moelab::task_kind_from_string(*o.task);
    } catch (const moelab::Error& e) {
      throw moelab::ConfigError(e.what());
    }
  }
  if (o.modulus) c.task.modulus = *o.modulus;
  if (o.eval_samples) c.eval_samples = *o.eval_samples;
  if (o.train_samples) c.train_samples = *o.train_samples;
  if (o.steps) c.train.steps = *o.steps;
  if (o.train_seed) c.train.seed = *o.train_seed;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.preset) c.protocol.preset = *o.preset;
  if (o.layers) c.protocol.layers = *o.layers;
  if (o.expert) c.protocol.expert = *o.expert;
  if (o.k) c.protocol.k = *o.k;
  if (o.p_values) c.p_values = *o.p_values;
  if (o.seeds) c.seeds = *o.seeds;
  if (o.clamp) c.clamp = true;
  if (o.compression_p) c.compression_p = *o.compression_p;
  if (o.pcie) c.transfer.pcie_bandwidth = *o.pcie;
  if (o.decompress) c.transfer.decompress_throughput = *o.decompress;
  if (o.overlap) c.transfer.overlap = true;
  return c;
}

int run_train(const Overrides& o) {
  ExperimentConfig c = resolve(o);
  c.checkpoint.reset();
  c.validate();
  const auto train_data = moelab::generate_dataset(c.task, c.train_samples, moelab::Split::kTrain);
  const auto eval_data = moelab::generate_dataset(c.task, c.eval_samples, moelab::Split::kEval);
  const int every = std::max(1, c.train.steps / 20);
  const auto result = moelab::train(c.model, train_data, eval_data, c.task, c.train, [&](int step, double loss) {
    if (step % every == 0) std::fprintf(stderr, "step %d loss %.6f\n", step, loss);
  });
  const std::string path = o.out.value_or(o.checkpoint.value_or("model.moem"));
  moelab::save_checkpoint(result.model, path);
  json summary{{"checkpoint", path},
               {"steps_run", result.steps_run},
               {"final_loss", result.final_loss},
               {"eval_ica", result.eval_ica},
               {"eval_pia", result.eval_pia},
               {"reached_target", result.reached_target}};
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

int run_inspect(const Overrides& o) {
  ExperimentConfig c = resolve(o);
  c.validate();
  const moelab::MoEModel model = moelab::obtain_model(c);
  const auto data = moelab::generate_dataset(c.task, c.eval_samples, moelab::Split::kEval);
  moelab::ActivationLog log(model.config.num_layers, model.config.num_experts);
  const auto eval = moelab::evaluate_model(model, data, c.task, &log);
  json out{{"ica", eval.outcome.ica},
           {"pia", eval.outcome.pia},
           {"degenerate", eval.outcome.degenerate},
           {"tokens_processed", log.tokens_processed()},
           {"metrics", moelab::metrics_summary(log)}};
  const std::filesystem::path dir = o.out.value_or("moelab-inspect");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw moelab::IoError("cannot create directory " + dir.string() + ": " + ec.message());
  moelab::write_text_file(dir / "metrics.json", out.dump(2) + "\n");
  moelab::export_heatmap(log, dir / "heatmap.csv");
  moelab::write_text_file(dir / "audit.jsonl", moelab::audit_jsonl(data, eval));
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int run_perturb(const Overrides& o) {
  ExperimentConfig c = resolve(o);
  if (o.out) c.output_dir = *o.out;
  const moelab::Report report = moelab::run_experiment(c);
  moelab::emit_report(report, c.output_dir);
  std::cout << moelab::summary_csv(report);
  return kOk;
}

int run_compress(const std::string& in, const std::string& out, double eb) {
  if (!(eb > 0)) throw moelab::ConfigError("--error-bound must be positive");
  const moelab::Bytes raw = moelab::read_file(in);
  if (raw.size() % sizeof(double) != 0)
    throw moelab::FormatError("payload", in + " is not a whole number of 64-bit floats");
  std::vector<double> x(raw.size() / sizeof(double));
  std::memcpy(x.data(), raw.data(), raw.size());
  const moelab::CompressedBlock block = moelab::compress_eb(x, eb);
  const moelab::Bytes bytes = moelab::serialize(block);
  moelab::write_file(out, bytes);
  std::printf("%zu values, %zu -> %zu bytes, ratio %s\n", x.size(), raw.size(), bytes.size(),
              moelab::format_double(moelab::ratio(block, x)).c_str());
  return kOk;
}

int run_decompress(const std::string& in, const std::string& out) {
  const moelab::Bytes bytes = moelab::read_file(in);
  const std::vector<double> x = moelab::decompress_eb(moelab::parse_compressed(bytes));
  moelab::Bytes raw(x.size() * sizeof(double));
  std::memcpy(raw.data(), x.data(), raw.size());
  moelab::write_file(out, raw);
  std::printf("%zu values\n", x.size());
  return kOk;
}

int run_offload(const Overrides& o) {
  ExperimentConfig c = resolve(o);
  c.validate();
  const moelab::MoEModel model = moelab::obtain_model(c);
  std::vector<moelab::ExpertRatio> ratios;
  for (const auto& row : moelab::compression_rows(model, c.compression_p)) ratios.push_back({row.id, row.ratio});
  const std::string csv = moelab::offload_csv(moelab::speedup_report(model.config, ratios, c.transfer));
  if (o.out)
    moelab::write_text_file(*o.out, csv);
  else
    std::cout << csv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Error-sensitivity experiments on small mixture-of-experts models"};
  app.require_subcommand(1);

  Overrides train_o, inspect_o, perturb_o, offload_o;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_model_flags(train, train_o);
  add_train_flags(train, train_o);

  auto* inspect = app.add_subcommand("inspect", "Activation statistics and heatmap of a clean model");
  add_model_flags(inspect, inspect_o);
  add_train_flags(inspect, inspect_o);

  auto* perturb = app.add_subcommand("perturb", "Run a sensitivity protocol and emit a report");
  add_model_flags(perturb, perturb_o);
  add_train_flags(perturb, perturb_o);
  add_transfer_flags(perturb, perturb_o);
  perturb->add_option("--preset", perturb_o.preset,
                      "single-expert, highest-frequent, cross-layer, topk, all-in-layer, grouped, randomize");
  perturb->add_option("--layers", perturb_o.layers)->delimiter(',');
  perturb->add_option("--expert", perturb_o.expert);
  perturb->add_option("--k", perturb_o.k);
  perturb->add_option("--p", perturb_o.p_values, "Error-bound percentages")->delimiter(',');
  perturb->add_option("--seeds", perturb_o.seeds)->delimiter(',');
  perturb->add_flag("--clamp", perturb_o.clamp, "Clip every draw to the error bound");

  std::string codec_in, codec_out;
  double error_bound = 0;
  auto* compress = app.add_subcommand("compress", "Raw little-endian f64 file to .melc");
  compress->add_option("--input", codec_in)->required();
  compress->add_option("--output", codec_out)->required();
  compress->add_option("--error-bound", error_bound)->required();
  auto* decompress = app.add_subcommand("decompress", ".melc to raw little-endian f64 file");
  decompress->add_option("--input", codec_in)->required();
  decompress->add_option("--output", codec_out)->required();

  auto* offload = app.add_subcommand("offload-report", "Per-expert fetch cost with and without compression");
  add_model_flags(offload, offload_o);
  add_train_flags(offload, offload_o);
  add_transfer_flags(offload, offload_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return run_train(train_o);
    if (*inspect) return run_inspect(inspect_o);
    if (*perturb) return run_perturb(perturb_o);
    if (*compress) return run_compress(codec_in, codec_out, error_bound);
    if (*decompress) return run_decompress(codec_in, codec_out);
    if (*offload) return run_offload(offload_o);
  } catch (const moelab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const moelab::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const moelab::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const moelab::DomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const moelab::InputError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
