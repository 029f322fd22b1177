#pragma once

// Stage orchestration. Every stage reads its inputs from the output directory
// and writes its own ledger, checkpoints and artifacts back to it:
//
//   teacher/teacher.dlnt, teacher/ledger.csv
//   stage1/ledger.csv, stage1/front.csv, stage1/ckpt/<id>.dlnt
//   stage2/ledger.csv, stage2/front.csv, stage2/ckpt/<id>.dlnt
//   deploy/ledger.csv, deploy/quantized.dlnt, deploy/bundle/, deploy/summary.json
//   ledger.csv (all rows), report.md, config.json

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlnet/checkpoint.hpp"
#include "dlnet/compression.hpp"
#include "dlnet/config.hpp"
#include "dlnet/data.hpp"
#include "dlnet/distillation.hpp"
#include "dlnet/emit.hpp"
#include "dlnet/error.hpp"
#include "dlnet/ledger.hpp"
#include "dlnet/models.hpp"
#include "dlnet/parallel.hpp"
#include "dlnet/quantization.hpp"
#include "dlnet/record.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/selection.hpp"

namespace dlnet::pipeline {

namespace fs = std::filesystem;
using config::PipelineConfig;

/// Thread-safe progress log with elapsed seconds.
class Logger {
 public:
  explicit Logger(std::ostream* os = &std::cerr) : os_(os), t0_(std::chrono::steady_clock::now()) {}
  void info(const std::string& msg) {
    if (!os_) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%8.1fs] ", s);
    std::lock_guard lock(mu_);
    *os_ << buf << msg << '\n' << std::flush;
  }

 private:
  std::ostream* os_;
  std::chrono::steady_clock::time_point t0_;
  std::mutex mu_;
};

struct Paths {
  fs::path root;
  fs::path teacher_ckpt() const { return root / "teacher" / "teacher.dlnt"; }
  fs::path teacher_ledger() const { return root / "teacher" / "ledger.csv"; }
  fs::path stage_dir(int s) const { return root / ("stage" + std::to_string(s)); }
  fs::path stage_ledger(int s) const { return stage_dir(s) / "ledger.csv"; }
  fs::path deploy_dir() const { return root / "deploy"; }
  fs::path deploy_ledger() const { return deploy_dir() / "ledger.csv"; }
  fs::path quantized_ckpt() const { return deploy_dir() / "quantized.dlnt"; }
  fs::path bundle_dir() const { return deploy_dir() / "bundle"; }
  fs::path summary() const { return deploy_dir() / "summary.json"; }
  fs::path combined_ledger() const { return root / "ledger.csv"; }
  fs::path report() const { return root / "report.md"; }
};

inline Paths paths(const PipelineConfig& cfg) { return {fs::path(cfg.out_dir)}; }

struct Dataset {
  data::DatasetSplit split;
  Tensor<float> Xtr, Ytr, Xte, Yte;
};

inline std::vector<data::SoHSeries> load_series(const PipelineConfig& cfg) {
  if (cfg.data.source == "csv") return data::load_soh_csv(cfg.data.csv_path);
  return data::synth_degradation(cfg.data.n_cells, cfg.data.n_cycles, cfg.data.synth, Rng(cfg.seed).split("data").seed());
}

inline Dataset prepare_data(const PipelineConfig& cfg) {
  Dataset ds;
  ds.split = data::split_by_health(load_series(cfg), cfg.data.test_fraction, Rng(cfg.seed).split("split").seed(),
                                   cfg.data.window_spec());
  if (ds.split.train.empty()) throw DataError("no training windows: series are shorter than tau + tau'");
  if (ds.split.test.empty()) throw DataError("no test windows: test series are shorter than tau + tau'");
  std::tie(ds.Xtr, ds.Ytr) = data::stack_windows(ds.split.train);
  std::tie(ds.Xte, ds.Yte) = data::stack_windows(ds.split.test);
  return ds;
}

/// Seed-selected training windows used for activation calibration.
inline Tensor<float> calibration_set(const Dataset& ds, const PipelineConfig& cfg) {
  const std::size_t n = ds.Xtr.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng(cfg.seed).split("calibration");
  shuffle(idx, rng);
  idx.resize(std::min(n, cfg.deploy.calibration_windows));
  std::sort(idx.begin(), idx.end());
  Tensor<float> X({idx.size(), ds.Xtr.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = ds.Xtr.row(idx[i]);
    std::copy(src.begin(), src.end(), X.row(i).begin());
  }
  return X;
}

inline std::string rel(const Paths& p, const fs::path& f) { return fs::relative(f, p.root).generic_string(); }

/// Errors on the test set plus the cost vector. `size_bytes` is supplied by
/// the caller since it depends on the artifact being costed.
template <class Model>
void evaluate(StudentRecord& r, const Model& m, double size_bytes, const Dataset& ds, const PipelineConfig& cfg) {
  r.errors = select::eval_errors(m, ds.Xte, ds.Yte, cfg.eval.runs, Rng(cfg.seed).split("eval/" + r.id), r.status);
  r.flops = models::count_flops(m);
  r.params = models::count_params(m);
  Tensor<float> x1({1, ds.Xte.cols()});
  std::copy(ds.Xte.row(0).begin(), ds.Xte.row(0).end(), x1.row(0).begin());
  Rng unused(0);
  r.measured_ms = select::median_time_ms(
      [&] { (void)models::predict(m, x1, nn::DropoutMode::Deterministic, unused); }, cfg.eval.timing_reps);
  r.costs = select::make_costs(size_bytes, r.flops, r.measured_ms, cfg.costs);
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  emit::write_text(p, s);
}

/// Concatenates every stage ledger that exists into ledger.csv.
inline void write_combined(const Paths& p) {
  std::vector<StudentRecord> all;
  for (const fs::path& f : {p.teacher_ledger(), p.stage_ledger(1), p.stage_ledger(2), p.deploy_ledger()})
    if (fs::exists(f)) {
      auto rs = ledger::read(f);
      all.insert(all.end(), rs.begin(), rs.end());
    }
  ledger::write(p.combined_ledger(), all);
}

inline std::string describe_front(const std::vector<StudentRecord>& rs) {
  std::string s;
  for (const auto& r : rs)
    if (r.pareto) s += (s.empty() ? "" : ", ") + r.id;
  return s.empty() ? "(empty)" : s;
}

inline models::TeacherModel<float> load_teacher(const Paths& p) {
  if (!fs::exists(p.teacher_ckpt())) throw InputError("no teacher checkpoint at " + p.teacher_ckpt().string() + "; run train-teacher first");
  return ckpt::load_teacher(ckpt::read_file(p.teacher_ckpt()));
}

inline void save_config(const PipelineConfig& cfg) {
  write_text(paths(cfg).root / "config.json", config::to_json(cfg).dump(2) + "\n");
}

inline StudentRecord run_teacher(const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  save_config(cfg);
  const Dataset ds = prepare_data(cfg);
  log.info("data: " + std::to_string(ds.split.train_cells.size()) + " train cells / " + std::to_string(ds.Xtr.rows()) +
           " windows, " + std::to_string(ds.split.test_cells.size()) + " test cells / " + std::to_string(ds.Xte.rows()) +
           " windows");
  models::TeacherConfig tc;
  tc.tau = cfg.data.tau;
  tc.tau_prime = cfg.data.tau_prime;
  tc.hidden = cfg.teacher.hidden;
  tc.t_end = cfg.teacher.t_end;
  tc.ode_steps = cfg.teacher.ode_steps;
  tc.dropout = cfg.teacher.dropout;
  const Rng root(cfg.seed);
  Rng init = root.split("teacher/init");
  auto teacher = models::make_teacher<float>(tc, init);
  distill::TeacherTrainConfig tt{cfg.teacher.epochs, cfg.teacher.batch_size, cfg.teacher.adam};
  log.info("teacher: d=" + std::to_string(tc.hidden) + ", " + std::to_string(tt.epochs) + " epochs");
  const auto res = distill::train_teacher(teacher, distill::TrainSet{ds.Xtr, ds.Ytr, std::nullopt}, tt, root.split("teacher/fit"));
  if (res.status == Status::Failed) throw PipelineError("teacher training failed: " + res.diagnostic);
  const auto bytes = ckpt::save(teacher);
  ckpt::write_file(p.teacher_ckpt(), bytes);
  StudentRecord r;
  r.id = "teacher";
  r.stage = 0;
  r.hidden = teacher.hidden;
  r.checkpoint = rel(p, p.teacher_ckpt());
  evaluate(r, teacher, static_cast<double>(bytes.size()), ds, cfg);
  ledger::write(p.teacher_ledger(), {r});
  write_combined(p);
  log.info("teacher: MAE " + ledger::fmt5(r.errors->mae) + ", " + std::to_string(bytes.size()) + " bytes");
  return r;
}

namespace detail {

inline std::string stage2_id(const std::string& elite, double s, LossKind k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_s%g_", s);
  return elite + buf + loss_letter(k);
}

inline void finish_stage(int stage, std::vector<StudentRecord>& records, const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  const bool any = std::any_of(records.begin(), records.end(), [](const StudentRecord& r) { return r.status == Status::Trained && r.errors; });
  if (!any) {
    ledger::write(p.stage_ledger(stage), records);
    write_combined(p);
    std::string diag;
    for (const auto& r : records) diag += "\n  " + r.id + ": " + r.diagnostic;
    throw PipelineError("stage " + std::to_string(stage) + ": every student failed" + diag);
  }
  const auto sel = select::select_front(records, cfg.weights);
  if (sel.fallback) log.info("stage " + std::to_string(stage) + ": thresholds removed every student; using the unfiltered front");
  ledger::write(p.stage_ledger(stage), records);
  write_text(p.stage_dir(stage) / "front.csv", ledger::front_csv(records));
  write_combined(p);
  log.info("stage " + std::to_string(stage) + ": " + std::to_string(sel.survivors) + " within thresholds, front: " +
           describe_front(records));
}

}  // namespace detail

inline std::vector<StudentRecord> run_stage1(const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  const auto teacher = load_teacher(p);
  const Dataset ds = prepare_data(cfg);
  const Tensor<float> teacher_y = distill::teacher_targets(teacher, ds.Xtr);
  models::StudentConfig base;
  base.tau = cfg.data.tau;
  base.tau_prime = cfg.data.tau_prime;
  base.rank = cfg.students.rank;
  base.euler_steps = cfg.students.euler_steps;
  base.t_end = cfg.students.t_end;
  base.dropout = cfg.students.dropout;
  std::optional<std::pair<double, double>> inherit;
  if (cfg.students.inherit_dynamics)
    inherit = std::pair<double, double>{teacher.dynamics.alpha.value[0], teacher.dynamics.beta.value[0]};
  const auto pool = distill::generate_pool(cfg.students.dims, cfg.students.kinds, cfg.seed, base, inherit);
  log.info("stage 1: " + std::to_string(pool.size()) + " students, " + std::to_string(cfg.distill.epochs) + " epochs");
  const std::size_t workers = cfg.workers ? cfg.workers : default_workers();

  auto records = parallel_map(pool.size(), workers, [&](std::size_t i) {
    const auto& member = pool[i];
    auto model = member.model;
    StudentRecord r;
    r.id = member.id;
    r.stage = 1;
    r.hidden = model.hidden;
    r.kind = member.kind;
    distill::DistillConfig dc = cfg.distill;
    dc.kind = member.kind;
    try {
      const auto res = distill::train_student(teacher, model, distill::TrainSet{ds.Xtr, ds.Ytr, teacher_y}, dc,
                                              Rng(cfg.seed).split("stage1/" + r.id));
      r.status = res.status;
      r.diagnostic = res.diagnostic;
      if (r.status == Status::Trained) {
        const fs::path f = p.stage_dir(1) / "ckpt" / (r.id + ".dlnt");
        const auto bytes = ckpt::save(model);
        ckpt::write_file(f, bytes);
        r.checkpoint = rel(p, f);
        evaluate(r, model, static_cast<double>(bytes.size()), ds, cfg);
      }
    } catch (const TrainingInstability& e) {
      r.status = Status::Failed;
      r.diagnostic = e.what();
      r.errors.reset();
      r.costs.reset();
    } catch (const EvaluationError& e) {
      r.status = Status::Failed;
      r.diagnostic = e.what();
      r.errors.reset();
      r.costs.reset();
    }
    log.info("  " + r.id + ": " + status_name(r.status) + (r.errors ? ", MAE " + ledger::fmt5(r.errors->mae) : ""));
    return r;
  });
  detail::finish_stage(1, records, cfg, log);
  return records;
}

inline std::vector<StudentRecord> run_stage2(const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  if (!fs::exists(p.stage_ledger(1))) throw InputError("no stage-1 ledger at " + p.stage_ledger(1).string() + "; run stage1 first");
  const auto s1 = ledger::read(p.stage_ledger(1));
  std::vector<StudentRecord> elites;
  for (const auto& r : s1)
    if (r.pareto && r.status == Status::Trained) elites.push_back(r);
  if (elites.empty()) throw PipelineError("stage 1 ledger has no Pareto-selected students");
  const auto teacher = load_teacher(p);
  const Dataset ds = prepare_data(cfg);
  const Tensor<float> teacher_y = distill::teacher_targets(teacher, ds.Xtr);
  const Tensor<float> calib = calibration_set(ds, cfg);
  std::vector<models::StudentModel<float>> elite_models;
  for (const auto& e : elites) elite_models.push_back(ckpt::load_student(ckpt::read_file(p.root / e.checkpoint)).model);

  struct Job {
    std::size_t elite;
    double sparsity;
    LossKind kind;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < elites.size(); ++e)
    for (double s : cfg.stage2.sparsities)
      for (LossKind k : cfg.students.kinds) jobs.push_back({e, s, k});
  log.info("stage 2: " + std::to_string(elites.size()) + " elites, " + std::to_string(jobs.size()) + " candidates");
  const std::size_t workers = cfg.workers ? cfg.workers : default_workers();

  auto records = parallel_map(jobs.size(), workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto& elite = elites[job.elite];
    StudentRecord r;
    r.id = detail::stage2_id(elite.id, job.sparsity, job.kind);
    r.stage = 2;
    r.parent = elite.id;
    r.hidden = elite.hidden;
    r.kind = job.kind;
    r.sparsity = job.sparsity;
    try {
      auto [model, mask] = prune::magnitude_prune(elite_models[job.elite], job.sparsity);
      distill::DistillConfig dc = cfg.distill;
      dc.kind = job.kind;
      dc.epochs = cfg.stage2.epochs;
      const auto res = distill::train_student(teacher, model, distill::TrainSet{ds.Xtr, ds.Ytr, teacher_y}, dc,
                                              Rng(cfg.seed).split("stage2/" + r.id), &mask);
      r.status = res.status;
      r.diagnostic = res.diagnostic;
      if (r.status == Status::Trained) {
        const fs::path f = p.stage_dir(2) / "ckpt" / (r.id + ".dlnt");
        ckpt::write_file(f, ckpt::save(model, &mask));
        r.checkpoint = rel(p, f);
        // Deployable size: the int8 payload this variant would ship as.
        const auto qm = quant::quantize_int8(model, &mask, quant::calibrate(model, calib));
        evaluate(r, model, static_cast<double>(quant::payload_size(qm)), ds, cfg);
      }
    } catch (const TrainingInstability& e) {
      r.status = Status::Failed;
      r.diagnostic = e.what();
      r.errors.reset();
      r.costs.reset();
    } catch (const EvaluationError& e) {
      r.status = Status::Failed;
      r.diagnostic = e.what();
      r.errors.reset();
      r.costs.reset();
    }
    log.info("  " + r.id + ": " + status_name(r.status) + (r.errors ? ", MAE " + ledger::fmt5(r.errors->mae) : ""));
    return r;
  });
  detail::finish_stage(2, records, cfg, log);
  return records;
}

/// Lowest f_err on the final front, then lowest f_cst, then id.
inline StudentRecord choose_deploy(const std::vector<StudentRecord>& rs) {
  const StudentRecord* best = nullptr;
  for (const auto& r : rs) {
    if (!r.pareto || r.status != Status::Trained || !r.utility) continue;
    if (!best) {
      best = &r;
      continue;
    }
    const auto& a = *r.utility;
    const auto& b = *best->utility;
    if (a.f_err < b.f_err || (a.f_err == b.f_err && (a.f_cst < b.f_cst || (a.f_cst == b.f_cst && r.id < best->id))))
      best = &r;
  }
  if (!best) throw PipelineError("final front is empty; nothing to deploy");
  return *best;
}

struct DeployResult {
  StudentRecord chosen;
  StudentRecord quantized;
  double float_mae = 0.0;
  emit::Bundle bundle;
};

inline DeployResult run_deploy(const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  if (!fs::exists(p.stage_ledger(2))) throw InputError("no stage-2 ledger at " + p.stage_ledger(2).string() + "; run stage2 first");
  DeployResult out;
  out.chosen = choose_deploy(ledger::read(p.stage_ledger(2)));
  auto loaded = ckpt::load_student(ckpt::read_file(p.root / out.chosen.checkpoint));
  const Dataset ds = prepare_data(cfg);
  const auto& m = loaded.model;
  const auto qm = quant::quantize_int8(m, loaded.mask ? &*loaded.mask : nullptr,
                                       quant::calibrate(m, calibration_set(ds, cfg)));
  ckpt::write_file(p.quantized_ckpt(), ckpt::save(qm));

  Rng unused(0);
  out.float_mae = 0.0;
  {
    const Tensor<float> yf = models::predict(m, ds.Xte, nn::DropoutMode::Deterministic, unused);
    ErrorVector e;
    select::point_errors(yf, ds.Yte, e);
    out.float_mae = e.mae;
  }

  StudentRecord& q = out.quantized;
  q.id = out.chosen.id + "_int8";
  q.stage = 3;
  q.parent = out.chosen.id;
  q.hidden = out.chosen.hidden;
  q.kind = out.chosen.kind;
  q.sparsity = out.chosen.sparsity;
  q.checkpoint = rel(p, p.quantized_ckpt());
  // int8 inference has no dropout: every run repeats the deterministic one.
  const Tensor<float> yq = quant::quantized_predict(qm, ds.Xte);
  ErrorVector e;
  select::point_errors(yq, ds.Yte, e);
  std::vector<float> samples(yq.size() * 2);
  for (std::size_t i = 0; i < yq.size(); ++i) samples[2 * i] = samples[2 * i + 1] = yq[i];
  select::spread_errors(samples, 2, ds.Yte, e);
  q.errors = e;
  q.flops = models::count_flops(m);
  q.params = models::count_params(m);
  const auto x0 = ds.Xte.row(0);
  q.measured_ms = select::median_time_ms([&] { (void)quant::quantized_forward(qm, x0); }, cfg.eval.timing_reps);
  q.costs = select::make_costs(static_cast<double>(quant::payload_size(qm)), q.flops, q.measured_ms, cfg.costs);
  ledger::write(p.deploy_ledger(), {q});
  write_combined(p);

  const auto gv = emit::make_golden(qm, cfg.seed, cfg.deploy.golden_vectors);
  out.bundle = emit::emit_embedded_source(qm, gv);
  emit::write_bundle(p.bundle_dir(), out.bundle);

  nlohmann::ordered_json s;
  std::optional<StudentRecord> teacher;
  if (fs::exists(p.teacher_ledger())) teacher = ledger::read(p.teacher_ledger()).at(0);
  if (teacher && teacher->errors && teacher->costs)
    s["teacher"] = {{"mae", teacher->errors->mae}, {"size_bytes", teacher->costs->size_bytes}};
  s["chosen"] = out.chosen.id;
  s["float_mae"] = out.float_mae;
  s["quantized"] = {{"id", q.id},
                    {"mae", e.mae},
                    {"payload_bytes", out.bundle.payload_bytes},
                    {"arena_bytes", out.bundle.arena_bytes},
                    {"trace_len", quant::trace_length(qm)},
                    {"rle", qm.rle},
                    {"golden_vectors", gv.vectors.size()}};
  s["bundle"] = rel(p, p.bundle_dir());
  write_text(p.summary(), s.dump(2) + "\n");
  log.info("deploy: " + out.chosen.id + " -> " + q.id + ", MAE float " + ledger::fmt5(out.float_mae) + " / int8 " +
           ledger::fmt5(e.mae) + ", payload " + std::to_string(out.bundle.payload_bytes) + " bytes");
  return out;
}

inline fs::path run_report(const PipelineConfig& cfg, Logger& log) {
  const Paths p = paths(cfg);
  ledger::ReportInput in;
  bool any = false;
  if (fs::exists(p.teacher_ledger())) {
    in.teacher = ledger::read(p.teacher_ledger()).at(0);
    any = true;
  }
  for (int s : {1, 2})
    if (fs::exists(p.stage_ledger(s))) {
      (s == 1 ? in.stage1 : in.stage2) = ledger::read(p.stage_ledger(s));
      any = true;
    }
  if (fs::exists(p.deploy_ledger())) {
    in.quantized = ledger::read(p.deploy_ledger()).at(0);
    any = true;
  }
  if (!any) throw InputError("no ledger found under " + p.root.string());
  write_text(p.report(), ledger::markdown_report(in));
  log.info("report: " + p.report().string());
  return p.report();
}

inline void run_all(const PipelineConfig& cfg, Logger& log) {
  auto timed = [&](const char* name, auto&& fn) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - a).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s finished in %.1f s", name, s);
    log.info(buf);
  };
  timed("train-teacher", [&] { run_teacher(cfg, log); });
  timed("stage1", [&] { run_stage1(cfg, log); });
  timed("stage2", [&] { run_stage2(cfg, log); });
  timed("deploy", [&] { run_deploy(cfg, log); });
  timed("report", [&] { run_report(cfg, log); });
}

}  // namespace dlnet::pipeline
