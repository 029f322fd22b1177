#pragma once

// SoH trajectories: CSV ingestion, a synthetic knee-shaped fade generator,
// (tau, tau') windowing and a health-stratified cell split.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/tensor.hpp"

namespace dlnet::data {

inline constexpr double kSohMax = 1.2;

struct SoHSeries {
  std::string cell_id;
  std::vector<double> soh;  // soh[i] belongs to cycle first_cycle + i
  long first_cycle = 1;
};

enum class HealthTag { High, Medium, Low };

inline const char* health_name(HealthTag t) {
  switch (t) {
    case HealthTag::High: return "high";
    case HealthTag::Medium: return "medium";
    case HealthTag::Low: return "low";
  }
  return "?";
}

struct ForecastWindow {
  std::string cell_id;
  std::size_t offset = 0;
  HealthTag tag = HealthTag::Medium;
  std::vector<float> x;
  std::vector<float> y;
};

struct WindowSpec {
  std::size_t tau = 100, tau_prime = 100;
  std::size_t train_stride = 10;
  std::size_t test_stride = 100;
};

struct DatasetSplit {
  std::vector<ForecastWindow> train, test;
  std::vector<std::string> train_cells, test_cells;
  std::map<std::string, HealthTag> tags;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

inline long parse_long(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not an integer: '" + s + "'");
  }
}

}  // namespace detail

/// Parses `cell_id,cycle,soh` records (header required, extra columns ignored).
/// Cells keep their order of first appearance; cycles are sorted and must be
/// contiguous.
inline std::vector<SoHSeries> parse_soh_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty file, expected header cell_id,cycle,soh");
  const auto header = detail::split_csv_line(line);
  auto column = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column("cell_id"), c_cycle = column("cycle"), c_soh = column("soh");
  const std::size_t need = std::max({c_id, c_cycle, c_soh}) + 1;

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<long, double>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (f.size() < need) throw SchemaError(where + ": expected at least " + std::to_string(need) + " fields");
    const std::string& id = f[c_id];
    if (id.empty()) throw DataError(where + ": empty cell_id");
    const long cycle = detail::parse_long(f[c_cycle], where);
    const double soh = detail::parse_double(f[c_soh], where);
    if (!(soh > 0.0 && soh <= kSohMax))
      throw DataError(where + ": soh " + f[c_soh] + " for cell " + id + " cycle " + std::to_string(cycle) +
                      " outside (0, 1.2]");
    auto [it, fresh] = rows.try_emplace(id);
    if (fresh) order.push_back(id);
    it->second.emplace_back(cycle, soh);
  }

  std::vector<SoHSeries> out;
  for (const auto& id : order) {
    auto& r = rows[id];
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    SoHSeries s{id, {}, r.front().first};
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i > 0 && r[i].first == r[i - 1].first)
        throw DataError(source + ": duplicate cycle " + std::to_string(r[i].first) + " for cell " + id);
      if (i > 0 && r[i].first != r[i - 1].first + 1)
        throw DataError(source + ": cycle gap after " + std::to_string(r[i - 1].first) + " for cell " + id);
      s.soh.push_back(r[i].second);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SoHSeries> load_soh_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return parse_soh_csv(in, path);
}

inline void write_soh_csv(std::ostream& os, const std::vector<SoHSeries>& series) {
  os << "cell_id,cycle,soh\n";
  char buf[64];
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.soh.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", s.soh[i]);
      os << s.cell_id << ',' << (s.first_cycle + static_cast<long>(i)) << ',' << buf << '\n';
    }
}

struct SynthParams {
  std::pair<double, double> a_range{5e-5, 2e-4};
  std::pair<double, double> b_range{3.5e-6, 1e-5};
  std::pair<double, double> knee_range{600.0, 900.0};
  double noise_sd = 0.002;
  double floor = 1e-3;
};

struct CellParams {
  double a = 0, b = 0, knee = 0;
};

inline std::string synth_cell_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell%03zu", i);
  return buf;
}

/// Fade parameters of cell i, drawn from the cell's own stream.
inline CellParams synth_cell_params(const SynthParams& p, std::uint64_t seed, std::size_t i) {
  Rng rng = Rng(seed).split(synth_cell_id(i));
  CellParams c;
  c.a = rng.uniform(p.a_range.first, p.a_range.second);
  c.b = rng.uniform(p.b_range.first, p.b_range.second);
  c.knee = rng.uniform(p.knee_range.first, p.knee_range.second);
  return c;
}

/// Noise-free SoH at a cycle.
inline double synth_soh(const CellParams& c, double cycle) {
  const double over = std::max(0.0, cycle - c.knee);
  return 1.0 - c.a * cycle - c.b * over * over;
}

/// SoH(c) = 1 - a c - b max(0, c - knee)^2 + N(0, noise_sd^2), clipped to [floor, 1.2].
inline std::vector<SoHSeries> synth_degradation(std::size_t n_cells, std::size_t n_cycles, const SynthParams& p,
                                                std::uint64_t seed) {
  auto check_range = [](const std::pair<double, double>& r, const char* what) {
    if (!(r.first <= r.second) || !std::isfinite(r.first) || !std::isfinite(r.second))
      throw ConfigError(std::string("invalid synthetic range for ") + what);
  };
  check_range(p.a_range, "a");
  check_range(p.b_range, "b");
  check_range(p.knee_range, "knee");
  if (!(p.noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
  if (!(p.floor > 0.0 && p.floor < kSohMax)) throw ConfigError("synthetic floor must be in (0, 1.2)");

  std::vector<SoHSeries> out;
  out.reserve(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) {
    const CellParams c = synth_cell_params(p, seed, i);
    Rng noise = Rng(seed).split(synth_cell_id(i) + "/noise");
    SoHSeries s{synth_cell_id(i), std::vector<double>(n_cycles), 1};
    for (std::size_t k = 0; k < n_cycles; ++k) {
      double v = synth_soh(c, static_cast<double>(k + 1));
      if (p.noise_sd > 0.0) v += noise.normal(0.0, p.noise_sd);
      s.soh[k] = std::clamp(v, p.floor, kSohMax);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::size_t window_count(std::size_t len, std::size_t tau, std::size_t tau_prime, std::size_t stride) {
  if (len < tau + tau_prime) return 0;
  return (len - tau - tau_prime) / stride + 1;
}

inline std::vector<ForecastWindow> make_windows(const SoHSeries& s, std::size_t tau, std::size_t tau_prime,
                                                std::size_t stride, HealthTag tag = HealthTag::Medium) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  if (tau < 1 || tau_prime < 1) throw ConfigError("window lengths must be >= 1");
  const std::size_t n = window_count(s.soh.size(), tau, tau_prime, stride);
  std::vector<ForecastWindow> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t off = w * stride;
    ForecastWindow fw{s.cell_id, off, tag, {}, {}};
    fw.x.assign(s.soh.begin() + off, s.soh.begin() + off + tau);
    fw.y.assign(s.soh.begin() + off + tau, s.soh.begin() + off + tau + tau_prime);
    out.push_back(std::move(fw));
  }
  return out;
}

/// Cells are ranked by final SoH and cut into tertiles; each tertile gives
/// round(fraction * size) test cells (at least one), drawn with the seed.
inline DatasetSplit split_by_health(const std::vector<SoHSeries>& series, double test_fraction, std::uint64_t seed,
                                    const WindowSpec& spec) {
  if (series.size() < 3) throw ConfigError("health split needs at least 3 cells, got " + std::to_string(series.size()));
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");

  std::vector<std::size_t> idx(series.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (const auto& s : series)
    if (s.soh.empty()) throw DataError("cell " + s.cell_id + " has no samples");
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double fa = series[a].soh.back(), fb = series[b].soh.back();
    if (fa != fb) return fa > fb;
    return series[a].cell_id < series[b].cell_id;
  });

  DatasetSplit split;
  std::vector<bool> is_test(series.size(), false);
  const std::size_t n = idx.size();
  const HealthTag tags[3] = {HealthTag::High, HealthTag::Medium, HealthTag::Low};
  std::size_t begin = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const std::size_t end = (g + 1) * n / 3;
    std::vector<std::size_t> group(idx.begin() + static_cast<long>(begin), idx.begin() + static_cast<long>(end));
    for (std::size_t i : group) split.tags[series[i].cell_id] = tags[g];
    const auto want = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(group.size())));
    const std::size_t k = std::clamp<std::size_t>(want, 1, group.size());
    Rng rng = Rng(seed).split(std::string("split/") + health_name(tags[g]));
    shuffle(group, rng);
    for (std::size_t j = 0; j < k; ++j) is_test[group[j]] = true;
    begin = end;
  }

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const HealthTag tag = split.tags[s.cell_id];
    if (is_test[i]) {
      split.test_cells.push_back(s.cell_id);
      auto w = make_windows(s, spec.tau, spec.tau_prime, spec.test_stride, tag);
      split.test.insert(split.test.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    } else {
      split.train_cells.push_back(s.cell_id);
      auto w = make_windows(s, spec.tau, spec.tau_prime, spec.train_stride, tag);
      split.train.insert(split.train.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
  }
  if (split.train_cells.empty()) throw ConfigError("health split left no training cells");
  return split;
}

/// Stacks windows into X [n, tau] and Y [n, tau'].
inline std::pair<Tensor<float>, Tensor<float>> stack_windows(const std::vector<ForecastWindow>& ws,
                                                             const std::vector<std::size_t>& pick) {
  if (pick.empty()) throw ConfigError("cannot stack an empty window set");
  const std::size_t tau = ws.at(pick[0]).x.size(), tp = ws.at(pick[0]).y.size();
  Tensor<float> X({pick.size(), tau}), Y({pick.size(), tp});
  for (std::size_t r = 0; r < pick.size(); ++r) {
    const auto& w = ws.at(pick[r]);
    if (w.x.size() != tau || w.y.size() != tp) throw InputError("window shapes differ within a batch");
    std::copy(w.x.begin(), w.x.end(), X.data().begin() + static_cast<long>(r * tau));
    std::copy(w.y.begin(), w.y.end(), Y.data().begin() + static_cast<long>(r * tp));
  }
  return {std::move(X), std::move(Y)};
}

inline std::pair<Tensor<float>, Tensor<float>> stack_windows(const std::vector<ForecastWindow>& ws) {
  std::vector<std::size_t> all(ws.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack_windows(ws, all);
}

}  // namespace dlnet::data
