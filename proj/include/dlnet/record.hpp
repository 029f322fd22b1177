#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace dlnet {

enum class LossKind { MSE, Cosine };

inline const char* loss_name(LossKind k) { return k == LossKind::MSE ? "MSE" : "Cosine"; }
inline char loss_letter(LossKind k) { return k == LossKind::MSE ? 'M' : 'C'; }

enum class Status { Trained, Failed };

inline const char* status_name(Status s) { return s == Status::Trained ? "Trained" : "Failed"; }

/// Five error aspects; all minimized.
struct ErrorVector {
  double mae = 0, rmse = 0, mape_percent = 0, uncertainty = 0, one_minus_coverage = 0;

  static constexpr int kAspects = 5;
  double operator[](int i) const {
    switch (i) {
      case 0: return mae;
      case 1: return rmse;
      case 2: return mape_percent;
      case 3: return uncertainty;
      default: return one_minus_coverage;
    }
  }
  double& operator[](int i) {
    switch (i) {
      case 0: return mae;
      case 1: return rmse;
      case 2: return mape_percent;
      case 3: return uncertainty;
      default: return one_minus_coverage;
    }
  }
  double coverage() const { return 1.0 - one_minus_coverage; }
};

/// Four cost aspects; all minimized. time_ms is the value that enters the
/// cost utility (see CostModel::time_aspect).
struct CostVector {
  double size_bytes = 0, time_ms = 0, energy_kwh = 0, co2_kg = 0;

  static constexpr int kAspects = 4;
  double operator[](int i) const {
    switch (i) {
      case 0: return size_bytes;
      case 1: return time_ms;
      case 2: return energy_kwh;
      default: return co2_kg;
    }
  }
  double& operator[](int i) {
    switch (i) {
      case 0: return size_bytes;
      case 1: return time_ms;
      case 2: return energy_kwh;
      default: return co2_kg;
    }
  }
};

struct UtilityPoint {
  double f_err = 0, f_cst = 0;
};

/// One pool member across its life: created, trained, evaluated, selected.
struct StudentRecord {
  std::string id;
  int stage = 1;
  std::size_t hidden = 0;
  LossKind kind = LossKind::MSE;
  double sparsity = 0.0;
  std::string parent;
  std::string checkpoint;
  Status status = Status::Trained;
  std::string diagnostic;
  std::optional<ErrorVector> errors;
  std::optional<CostVector> costs;
  std::optional<UtilityPoint> utility;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  double measured_ms = 0.0;
  bool pareto = false;
};

}  // namespace dlnet
