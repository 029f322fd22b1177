// dlnet: command-line driver for the distillation pipeline.
//
// Exit codes: 0 success, 1 usage or validation error, 2 pipeline failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dlnet/dlnet.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

dlnet::config::PipelineConfig resolve(const Options& o) {
  auto cfg = o.config.empty() ? dlnet::config::PipelineConfig{} : dlnet::config::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

void synth_data(const Options& o) {
  auto cfg = o.config.empty() ? dlnet::config::PipelineConfig{} : dlnet::config::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  const auto series = dlnet::pipeline::load_series(cfg);
  if (o.out.empty()) {
    dlnet::data::write_soh_csv(std::cout, series);
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw dlnet::InputError("cannot write " + o.out);
  dlnet::data::write_soh_csv(f, series);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distill, compress and export battery SoH forecasters"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&opt](CLI::App* sub, const char* out_help) {
    sub->add_option("--config", opt.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the master seed");
    sub->add_option("--out", opt.out, out_help);
    sub->add_flag("--quiet", opt.quiet, "Suppress progress output");
  };
  const char* dir_help = "Output directory (overrides out_dir)";
  auto* teacher = app.add_subcommand("train-teacher", "Train the liquid teacher");
  auto* stage1 = app.add_subcommand("stage1", "First-stage distillation and Pareto selection");
  auto* stage2 = app.add_subcommand("stage2", "Prune, re-distill and select the final front");
  auto* deploy = app.add_subcommand("deploy", "Quantize the chosen student and emit the C bundle");
  auto* report = app.add_subcommand("report", "Rebuild report.md from the ledgers");
  auto* synth = app.add_subcommand("synth-data", "Write the synthetic SoH dataset as CSV");
  auto* all = app.add_subcommand("all", "Run every stage in order");
  for (auto* s : {teacher, stage1, stage2, deploy, report, all}) add_common(s, dir_help);
  add_common(synth, "CSV file to write (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      synth_data(opt);
      return 0;
    }
    const auto cfg = resolve(opt);
    dlnet::pipeline::Logger log(opt.quiet ? nullptr : &std::cerr);
    if (teacher->parsed()) dlnet::pipeline::run_teacher(cfg, log);
    else if (stage1->parsed()) dlnet::pipeline::run_stage1(cfg, log);
    else if (stage2->parsed()) dlnet::pipeline::run_stage2(cfg, log);
    else if (deploy->parsed()) dlnet::pipeline::run_deploy(cfg, log);
    else if (report->parsed()) dlnet::pipeline::run_report(cfg, log);
    else if (all->parsed()) dlnet::pipeline::run_all(cfg, log);
    return 0;
  } catch (const dlnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const dlnet::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
  } catch (const dlnet::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
  } catch (const dlnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
  } catch (const dlnet::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
  } catch (const dlnet::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "pipeline failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
