#pragma once

// Pipeline configuration: one JSON document, every key optional, unknown keys
// rejected at every level.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dlnet/adam.hpp"
#include "dlnet/data.hpp"
#include "dlnet/distillation.hpp"
#include "dlnet/error.hpp"
#include "dlnet/record.hpp"
#include "dlnet/selection.hpp"

namespace dlnet::config {

using json = nlohmann::ordered_json;

struct DataConfig {
  std::string source = "synth";  // "synth" or "csv"
  std::string csv_path;
  std::size_t n_cells = 64;
  std::size_t n_cycles = 1000;
  data::SynthParams synth;
  std::size_t tau = 100;
  std::size_t tau_prime = 100;
  std::size_t train_stride = 10;
  std::size_t test_stride = 0;  // 0: tau'
  double test_fraction = 0.2;

  data::WindowSpec window_spec() const { return {tau, tau_prime, train_stride, test_stride ? test_stride : tau_prime}; }
};

struct TeacherSection {
  std::size_t hidden = 128;
  double t_end = 1.0;
  std::size_t ode_steps = 20;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
  double dropout = 0.1;
};

struct StudentSection {
  std::vector<std::size_t> dims{2, 4, 8, 16, 32, 64, 128};
  std::vector<LossKind> kinds{LossKind::MSE, LossKind::Cosine};
  std::size_t rank = 4;
  std::size_t euler_steps = 8;
  double t_end = 1.0;
  double dropout = 0.1;
  bool inherit_dynamics = true;
};

struct Stage2Section {
  std::vector<double> sparsities = prune::default_sparsities();
  std::size_t epochs = 200;
};

struct EvalSection {
  std::size_t runs = 100;
  std::size_t timing_reps = 100;
};

struct DeploySection {
  std::size_t calibration_windows = 64;
  std::size_t golden_vectors = 16;
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/default";
  std::size_t workers = 0;  // 0: one per hardware thread
  DataConfig data;
  TeacherSection teacher;
  StudentSection students;
  distill::DistillConfig distill;
  Stage2Section stage2;
  select::UtilityWeights weights;
  select::CostModel costs;
  EvalSection eval;
  DeploySection deploy;

  void validate() const;
};

namespace detail {

/// Reads keys from one JSON object and remembers which were consumed.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      read(v, out);
    } catch (const BadType&) {
      throw ConfigError(where(key) + " has the wrong type or value");
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  template <class F>
  void sub(const char* key, F&& f) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Obj o(j_.at(key), path_.empty() ? std::string(key) : path_ + "." + key);
    f(o);
    o.finish();
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + where(item.key().c_str()));
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "<root>" : path_;
    if (key) p = path_.empty() ? key : path_ + "." + key;
    return "'" + p + "'";
  }

 private:
  struct BadType {};

  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  static void read(const json& v, U& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw BadType{};
    out = v.get<U>();
  }
  static void read(const json& v, double& out) {
    if (!v.is_number()) throw BadType{};
    out = v.get<double>();
  }
  static void read(const json& v, bool& out) {
    if (!v.is_boolean()) throw BadType{};
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out) {
    if (!v.is_string()) throw BadType{};
    out = v.get<std::string>();
  }
  static void read(const json& v, std::pair<double, double>& out) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw BadType{};
    out = {v[0].get<double>(), v[1].get<double>()};
  }
  template <class T>
  static void read(const json& v, std::vector<T>& out) {
    if (!v.is_array()) throw BadType{};
    out.clear();
    for (const auto& e : v) {
      T x{};
      read(e, x);
      out.push_back(x);
    }
  }
  template <class T, std::size_t N>
  static void read(const json& v, std::array<T, N>& out) {
    if (!v.is_array() || v.size() != N) throw BadType{};
    for (std::size_t i = 0; i < N; ++i) read(v[i], out[i]);
  }
  static void read(const json& v, LossKind& out) {
    const std::string s = v.get<std::string>();
    if (s == "MSE" || s == "mse") out = LossKind::MSE;
    else if (s == "Cosine" || s == "cosine") out = LossKind::Cosine;
    else throw BadType{};
  }
  static void read(const json& v, select::TimeAspect& out) {
    const std::string s = v.get<std::string>();
    if (s == "modeled") out = select::TimeAspect::Modeled;
    else if (s == "measured") out = select::TimeAspect::Measured;
    else throw BadType{};
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_adam(Obj& o, nn::AdamConfig& a) {
  o.get("lr", a.lr);
  o.get("beta1", a.beta1);
  o.get("beta2", a.beta2);
  o.get("adam_eps", a.eps);
}

}  // namespace detail

inline PipelineConfig from_json(const json& j) {
  PipelineConfig c;
  detail::Obj root(j, "");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("workers", c.workers);
  root.sub("data", [&](detail::Obj& o) {
    auto& d = c.data;
    o.get("source", d.source);
    o.get("csv_path", d.csv_path);
    o.get("n_cells", d.n_cells);
    o.get("n_cycles", d.n_cycles);
    o.get("tau", d.tau);
    o.get("tau_prime", d.tau_prime);
    o.get("train_stride", d.train_stride);
    o.get("test_stride", d.test_stride);
    o.get("test_fraction", d.test_fraction);
    o.sub("synth", [&](detail::Obj& s) {
      s.get("a_range", d.synth.a_range);
      s.get("b_range", d.synth.b_range);
      s.get("knee_range", d.synth.knee_range);
      s.get("noise_sd", d.synth.noise_sd);
      s.get("floor", d.synth.floor);
    });
  });
  root.sub("teacher", [&](detail::Obj& o) {
    auto& t = c.teacher;
    o.get("hidden", t.hidden);
    o.get("t_end", t.t_end);
    o.get("ode_steps", t.ode_steps);
    o.get("epochs", t.epochs);
    o.get("batch_size", t.batch_size);
    o.get("dropout", t.dropout);
    detail::read_adam(o, t.adam);
  });
  root.sub("students", [&](detail::Obj& o) {
    auto& s = c.students;
    o.get("dims", s.dims);
    o.get("kinds", s.kinds);
    o.get("rank", s.rank);
    o.get("euler_steps", s.euler_steps);
    o.get("t_end", s.t_end);
    o.get("dropout", s.dropout);
    o.get("inherit_dynamics", s.inherit_dynamics);
  });
  root.sub("distill", [&](detail::Obj& o) {
    auto& d = c.distill;
    o.get("lambda_init", d.lambda_init);
    o.get("lambda_step", d.lambda_step);
    o.get("lambda_max", d.lambda_max);
    o.get("epochs", d.epochs);
    o.get("batch_size", d.batch_size);
    detail::read_adam(o, d.adam);
  });
  root.sub("stage2", [&](detail::Obj& o) {
    o.get("sparsities", c.stage2.sparsities);
    o.get("epochs", c.stage2.epochs);
  });
  root.sub("selection", [&](detail::Obj& o) {
    o.get("error_weights", c.weights.err);
    o.get("cost_weights", c.weights.cst);
    o.get("f_err_max", c.weights.f_err_max);
    o.get("f_cst_max", c.weights.f_cst_max);
    o.get("kappa_e", c.costs.kappa_e);
    o.get("kappa_c", c.costs.kappa_c);
    o.get("kappa_t_ms", c.costs.kappa_t_ms);
    o.get("time_aspect", c.costs.time_aspect);
  });
  root.sub("eval", [&](detail::Obj& o) {
    o.get("runs", c.eval.runs);
    o.get("timing_reps", c.eval.timing_reps);
  });
  root.sub("deploy", [&](detail::Obj& o) {
    o.get("calibration_windows", c.deploy.calibration_windows);
    o.get("golden_vectors", c.deploy.golden_vectors);
  });
  root.finish();
  c.validate();
  return c;
}

inline PipelineConfig parse(const std::string& text, const std::string& source = "<config>") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

inline PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

/// Full resolved configuration, every key present.
inline json to_json(const PipelineConfig& c) {
  auto pair = [](const std::pair<double, double>& p) { return json::array({p.first, p.second}); };
  json kinds = json::array();
  for (LossKind k : c.students.kinds) kinds.push_back(loss_name(k));
  return json{
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"workers", c.workers},
      {"data",
       {{"source", c.data.source},
        {"csv_path", c.data.csv_path},
        {"n_cells", c.data.n_cells},
        {"n_cycles", c.data.n_cycles},
        {"tau", c.data.tau},
        {"tau_prime", c.data.tau_prime},
        {"train_stride", c.data.train_stride},
        {"test_stride", c.data.test_stride},
        {"test_fraction", c.data.test_fraction},
        {"synth",
         {{"a_range", pair(c.data.synth.a_range)},
          {"b_range", pair(c.data.synth.b_range)},
          {"knee_range", pair(c.data.synth.knee_range)},
          {"noise_sd", c.data.synth.noise_sd},
          {"floor", c.data.synth.floor}}}}},
      {"teacher",
       {{"hidden", c.teacher.hidden},
        {"t_end", c.teacher.t_end},
        {"ode_steps", c.teacher.ode_steps},
        {"epochs", c.teacher.epochs},
        {"batch_size", c.teacher.batch_size},
        {"dropout", c.teacher.dropout},
        {"lr", c.teacher.adam.lr},
        {"beta1", c.teacher.adam.beta1},
        {"beta2", c.teacher.adam.beta2},
        {"adam_eps", c.teacher.adam.eps}}},
      {"students",
       {{"dims", c.students.dims},
        {"kinds", kinds},
        {"rank", c.students.rank},
        {"euler_steps", c.students.euler_steps},
        {"t_end", c.students.t_end},
        {"dropout", c.students.dropout},
        {"inherit_dynamics", c.students.inherit_dynamics}}},
      {"distill",
       {{"lambda_init", c.distill.lambda_init},
        {"lambda_step", c.distill.lambda_step},
        {"lambda_max", c.distill.lambda_max},
        {"epochs", c.distill.epochs},
        {"batch_size", c.distill.batch_size},
        {"lr", c.distill.adam.lr},
        {"beta1", c.distill.adam.beta1},
        {"beta2", c.distill.adam.beta2},
        {"adam_eps", c.distill.adam.eps}}},
      {"stage2", {{"sparsities", c.stage2.sparsities}, {"epochs", c.stage2.epochs}}},
      {"selection",
       {{"error_weights", c.weights.err},
        {"cost_weights", c.weights.cst},
        {"f_err_max", c.weights.f_err_max},
        {"f_cst_max", c.weights.f_cst_max},
        {"kappa_e", c.costs.kappa_e},
        {"kappa_c", c.costs.kappa_c},
        {"kappa_t_ms", c.costs.kappa_t_ms},
        {"time_aspect", c.costs.time_aspect == select::TimeAspect::Modeled ? "modeled" : "measured"}}},
      {"eval", {{"runs", c.eval.runs}, {"timing_reps", c.eval.timing_reps}}},
      {"deploy",
       {{"calibration_windows", c.deploy.calibration_windows}, {"golden_vectors", c.deploy.golden_vectors}}}};
}

inline void PipelineConfig::validate() const {
  if (data.source != "synth" && data.source != "csv") throw ConfigError("data.source must be \"synth\" or \"csv\"");
  if (data.source == "csv" && data.csv_path.empty()) throw ConfigError("data.csv_path is required for csv data");
  if (data.tau == 0 || data.tau_prime == 0) throw ConfigError("data.tau and data.tau_prime must be positive");
  if (data.tau > 0xFFFF || data.tau_prime > 0xFFFF) throw ConfigError("window lengths must be <= 65535");
  if (data.train_stride == 0) throw ConfigError("data.train_stride must be >= 1");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) throw ConfigError("data.test_fraction must be in (0, 1)");
  if (data.source == "synth") {
    if (data.n_cells < 3) throw ConfigError("data.n_cells must be >= 3");
    if (data.n_cycles < data.tau + data.tau_prime) throw ConfigError("data.n_cycles must be >= tau + tau_prime");
    for (const auto& [name, r] : {std::pair{"a_range", data.synth.a_range}, std::pair{"b_range", data.synth.b_range},
                                  std::pair{"knee_range", data.synth.knee_range}})
      if (!(r.first <= r.second) || !(r.first >= 0.0)) throw ConfigError(std::string("data.synth.") + name + " must be [lo, hi] with 0 <= lo <= hi");
    if (!(data.synth.noise_sd >= 0.0)) throw ConfigError("data.synth.noise_sd must be >= 0");
    if (!(data.synth.floor > 0.0 && data.synth.floor < 1.0)) throw ConfigError("data.synth.floor must be in (0, 1)");
  }
  if (teacher.hidden < 1) throw ConfigError("teacher.hidden must be >= 1");
  if (teacher.ode_steps < 1) throw ConfigError("teacher.ode_steps must be >= 1");
  if (!(teacher.t_end > 0.0)) throw ConfigError("teacher.t_end must be > 0");
  if (teacher.batch_size < 1) throw ConfigError("teacher.batch_size must be >= 1");
  if (!(teacher.adam.lr > 0.0)) throw ConfigError("teacher.lr must be > 0");
  if (!(teacher.dropout >= 0.0 && teacher.dropout < 1.0)) throw ConfigError("teacher.dropout must be in [0, 1)");
  if (students.dims.empty()) throw ConfigError("students.dims must not be empty");
  for (std::size_t d : students.dims)
    if (d < 2 || !models::is_power_of_two(d)) throw ConfigError("students.dims entries must be powers of two >= 2");
  if (std::set<std::size_t>(students.dims.begin(), students.dims.end()).size() != students.dims.size())
    throw ConfigError("students.dims has duplicates");
  if (students.kinds.empty()) throw ConfigError("students.kinds must not be empty");
  if (students.kinds.size() == 2 && students.kinds[0] == students.kinds[1]) throw ConfigError("students.kinds has duplicates");
  if (students.kinds.size() > 2) throw ConfigError("students.kinds has duplicates");
  if (students.rank < 1) throw ConfigError("students.rank must be >= 1");
  if (students.euler_steps < 1) throw ConfigError("students.euler_steps must be >= 1");
  if (!(students.t_end > 0.0)) throw ConfigError("students.t_end must be > 0");
  if (!(students.dropout >= 0.0 && students.dropout < 1.0)) throw ConfigError("students.dropout must be in [0, 1)");
  distill.validate();
  if (stage2.sparsities.empty()) throw ConfigError("stage2.sparsities must not be empty");
  for (double s : stage2.sparsities)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("stage2.sparsities entries must be in [0, 1)");
  weights.validate();
  costs.validate();
  if (eval.runs < 2) throw ConfigError("eval.runs must be >= 2");
  if (deploy.calibration_windows < 1) throw ConfigError("deploy.calibration_windows must be >= 1");
  if (deploy.golden_vectors < 1) throw ConfigError("deploy.golden_vectors must be >= 1");
}

}  // namespace dlnet::config
