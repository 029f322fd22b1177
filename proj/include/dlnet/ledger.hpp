#pragma once

// Student ledger CSV, front scatter data and the Markdown report. Numbers are
// written with 5 significant digits; the report is rebuilt from ledgers only.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/record.hpp"

namespace dlnet::ledger {

inline const std::vector<std::string>& columns() {
  static const std::vector<std::string> c{
      "id",           "stage",     "parent",      "d",          "loss",     "sparsity", "status",
      "mae",          "rmse",      "mape_percent", "uncertainty", "one_minus_coverage",
      "size_bytes",   "time_ms",   "energy_kwh",  "co2_kg",     "f_err",    "f_cst",    "pareto",
      "flops",        "params",    "measured_ms", "checkpoint", "diagnostic"};
  return c;
}

/// Column excluded from determinism comparisons.
inline constexpr const char* kTimingColumn = "measured_ms";

inline std::string fmt5(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

namespace detail {

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return q + "\"";
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool inq = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (inq) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        inq = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      inq = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (inq) throw SchemaError("ledger: unterminated quoted field");
  out.push_back(std::move(cur));
  return out;
}

inline double num(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("ledger: bad number '" + s + "' in column " + what);
  }
}

}  // namespace detail

inline std::string row(const StudentRecord& r) {
  std::vector<std::string> f;
  f.push_back(r.id);
  f.push_back(std::to_string(r.stage));
  f.push_back(r.parent);
  f.push_back(std::to_string(r.hidden));
  f.push_back(r.stage == 0 ? "-" : loss_name(r.kind));
  f.push_back(fmt5(r.sparsity));
  f.push_back(status_name(r.status));
  for (int i = 0; i < ErrorVector::kAspects; ++i) f.push_back(r.errors ? fmt5((*r.errors)[i]) : "");
  for (int i = 0; i < CostVector::kAspects; ++i) f.push_back(r.costs ? fmt5((*r.costs)[i]) : "");
  f.push_back(r.utility ? fmt5(r.utility->f_err) : "");
  f.push_back(r.utility ? fmt5(r.utility->f_cst) : "");
  f.push_back(r.pareto ? "1" : "0");
  f.push_back(std::to_string(r.flops));
  f.push_back(std::to_string(r.params));
  f.push_back(fmt5(r.measured_ms));
  f.push_back(r.checkpoint);
  f.push_back(r.diagnostic);
  std::string s;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) s += ',';
    s += detail::quote(f[i]);
  }
  return s;
}

inline std::string to_csv(const std::vector<StudentRecord>& rs) {
  std::string s;
  for (std::size_t i = 0; i < columns().size(); ++i) s += (i ? "," : "") + columns()[i];
  s += "\n";
  for (const auto& r : rs) s += row(r) + "\n";
  return s;
}

inline std::vector<StudentRecord> parse_csv(std::istream& in, const std::string& source = "<ledger>") {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty ledger");
  if (detail::split(line) != columns()) throw SchemaError(source + ": unexpected ledger header");
  std::vector<StudentRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line);
    if (f.size() != columns().size()) throw SchemaError(source + ": wrong field count in row '" + f[0] + "'");
    StudentRecord r;
    r.id = f[0];
    r.stage = static_cast<int>(detail::num(f[1], "stage"));
    r.parent = f[2];
    r.hidden = static_cast<std::size_t>(detail::num(f[3], "d"));
    r.kind = f[4] == "Cosine" ? LossKind::Cosine : LossKind::MSE;
    r.sparsity = detail::num(f[5], "sparsity");
    if (f[6] == "Trained") r.status = Status::Trained;
    else if (f[6] == "Failed") r.status = Status::Failed;
    else throw SchemaError(source + ": bad status '" + f[6] + "'");
    if (!f[7].empty()) {
      ErrorVector e;
      e.mae = detail::num(f[7], "mae");
      e.rmse = detail::num(f[8], "rmse");
      e.mape_percent = detail::num(f[9], "mape_percent");
      e.uncertainty = detail::num(f[10], "uncertainty");
      e.one_minus_coverage = detail::num(f[11], "one_minus_coverage");
      r.errors = e;
    }
    if (!f[12].empty()) {
      CostVector c;
      c.size_bytes = detail::num(f[12], "size_bytes");
      c.time_ms = detail::num(f[13], "time_ms");
      c.energy_kwh = detail::num(f[14], "energy_kwh");
      c.co2_kg = detail::num(f[15], "co2_kg");
      r.costs = c;
    }
    if (!f[16].empty()) r.utility = UtilityPoint{detail::num(f[16], "f_err"), detail::num(f[17], "f_cst")};
    r.pareto = f[18] == "1";
    r.flops = static_cast<std::uint64_t>(detail::num(f[19], "flops"));
    r.params = static_cast<std::uint64_t>(detail::num(f[20], "params"));
    r.measured_ms = detail::num(f[21], "measured_ms");
    r.checkpoint = f[22];
    r.diagnostic = f[23];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<StudentRecord> read(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw InputError("no ledger at " + p.string());
  return parse_csv(f, p.string());
}

inline void write(const std::filesystem::path& p, const std::vector<StudentRecord>& rs) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot write " + p.string());
  f << to_csv(rs);
}

/// Replaces the timing column with '*' so ledgers from separate runs compare
/// byte for byte.
inline std::string mask_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  std::size_t col = columns().size();
  bool header = true;
  while (std::getline(in, line)) {
    auto f = detail::split(line);
    if (header) {
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] == kTimingColumn) col = i;
      header = false;
    } else if (col < f.size()) {
      f[col] = "*";
    }
    for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + detail::quote(f[i]);
    out += "\n";
  }
  return out;
}

/// Scatter data: every record with a utility point.
inline std::string front_csv(const std::vector<StudentRecord>& rs) {
  std::string s = "id,f_err,f_cst,pareto\n";
  for (const auto& r : rs)
    if (r.utility) s += detail::quote(r.id) + "," + fmt5(r.utility->f_err) + "," + fmt5(r.utility->f_cst) + "," + (r.pareto ? "1" : "0") + "\n";
  return s;
}

namespace detail {

inline std::string cell_or_dash(const std::optional<double>& v) { return v ? fmt5(*v) : "-"; }

inline std::string metric_table(const std::vector<const StudentRecord*>& cols) {
  std::string s = "| Metric |";
  for (const auto* r : cols) s += " " + r->id + " |";
  s += "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) s += "---:|";
  s += "\n";
  struct Line {
    const char* name;
    std::optional<double> (*get)(const StudentRecord&);
  };
  const Line lines[] = {
      {"MAE", [](const StudentRecord& r) { return r.errors ? std::optional(r.errors->mae) : std::nullopt; }},
      {"RMSE", [](const StudentRecord& r) { return r.errors ? std::optional(r.errors->rmse) : std::nullopt; }},
      {"MAPE (%)", [](const StudentRecord& r) { return r.errors ? std::optional(r.errors->mape_percent) : std::nullopt; }},
      {"SD", [](const StudentRecord& r) { return r.errors ? std::optional(r.errors->uncertainty) : std::nullopt; }},
      {"Coverage (%)",
       [](const StudentRecord& r) {
         return r.errors ? std::optional(100.0 * (1.0 - r.errors->one_minus_coverage)) : std::nullopt;
       }},
      {"Size (kB)", [](const StudentRecord& r) { return r.costs ? std::optional(r.costs->size_bytes / 1000.0) : std::nullopt; }},
      {"Time (ms)", [](const StudentRecord& r) { return r.costs ? std::optional(r.costs->time_ms) : std::nullopt; }},
      {"Energy (kWh)", [](const StudentRecord& r) { return r.costs ? std::optional(r.costs->energy_kwh) : std::nullopt; }},
      {"CO2 (kg)", [](const StudentRecord& r) { return r.costs ? std::optional(r.costs->co2_kg) : std::nullopt; }},
      {"FLOPs", [](const StudentRecord& r) { return std::optional(static_cast<double>(r.flops)); }},
      {"f_err", [](const StudentRecord& r) { return r.utility ? std::optional(r.utility->f_err) : std::nullopt; }},
      {"f_cst", [](const StudentRecord& r) { return r.utility ? std::optional(r.utility->f_cst) : std::nullopt; }},
  };
  for (const auto& l : lines) {
    s += std::string("| ") + l.name + " |";
    for (const auto* r : cols) s += " " + cell_or_dash(l.get(*r)) + " |";
    s += "\n";
  }
  return s;
}

inline std::string pool_table(const std::vector<StudentRecord>& rs) {
  std::string s =
      "| id | d | loss | sparsity | status | MAE | RMSE | MAPE (%) | SD | 1-cov | size (B) | f_err | f_cst | front |\n"
      "|---|---:|---|---:|---|---:|---:|---:|---:|---:|---:|---:|---:|:---:|\n";
  for (const auto& r : rs) {
    auto e = [&](double ErrorVector::*m) { return r.errors ? fmt5((*r.errors).*m) : std::string("-"); };
    s += "| " + r.id + " | " + std::to_string(r.hidden) + " | " + loss_name(r.kind) + " | " + fmt5(r.sparsity) + " | " +
         status_name(r.status) + " | " + e(&ErrorVector::mae) + " | " + e(&ErrorVector::rmse) + " | " +
         e(&ErrorVector::mape_percent) + " | " + e(&ErrorVector::uncertainty) + " | " + e(&ErrorVector::one_minus_coverage) +
         " | " + (r.costs ? fmt5(r.costs->size_bytes) : "-") + " | " + (r.utility ? fmt5(r.utility->f_err) : "-") + " | " +
         (r.utility ? fmt5(r.utility->f_cst) : "-") + " | " + (r.pareto ? "yes" : "") + " |\n";
  }
  return s;
}

}  // namespace detail

struct ReportInput {
  std::optional<StudentRecord> teacher;
  std::vector<StudentRecord> stage1, stage2;
  std::optional<StudentRecord> quantized;
};

inline std::string markdown_report(const ReportInput& in) {
  std::string s = "# DLNet run report\n\n";
  auto selected = [&](const std::vector<StudentRecord>& rs, const StudentRecord* extra) {
    std::vector<const StudentRecord*> cols;
    if (in.teacher) cols.push_back(&*in.teacher);
    for (const auto& r : rs)
      if (r.pareto) cols.push_back(&r);
    if (extra) cols.push_back(extra);
    return cols;
  };
  if (in.teacher) s += "Teacher `" + in.teacher->id + "`: d=" + std::to_string(in.teacher->hidden) + ".\n\n";
  if (!in.stage1.empty()) {
    s += "## Stage 1: teacher and Pareto-selected students\n\n" + detail::metric_table(selected(in.stage1, nullptr)) + "\n";
  }
  if (!in.stage2.empty()) {
    s += "## Stage 2: teacher, final front and deployed model\n\n" +
         detail::metric_table(selected(in.stage2, in.quantized ? &*in.quantized : nullptr)) + "\n";
  }
  if (!in.stage1.empty()) s += "## Stage 1 pool\n\n" + detail::pool_table(in.stage1) + "\n";
  if (!in.stage2.empty()) s += "## Stage 2 pool\n\n" + detail::pool_table(in.stage2) + "\n";
  s += "Coverage is the empirical 95% interval coverage; selection minimizes 1 - coverage.\n";
  return s;
}

}  // namespace dlnet::ledger
