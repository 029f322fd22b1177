#pragma once

// Student training against a frozen teacher with a joint loss
//
//   L = lambda * MSE(y_s, y) + (1 - lambda) * L_distill(y_s, y_t)
//
// where lambda grows linearly per epoch up to a cap, plus plain regression
// training for the teacher itself.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/adam.hpp"
#include "dlnet/compression.hpp"
#include "dlnet/error.hpp"
#include "dlnet/models.hpp"
#include "dlnet/record.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/tape.hpp"

namespace dlnet::distill {

using nn::GradTape;
using nn::Var;

struct DistillConfig {
  double lambda_init = 0.1;
  double lambda_step = 0.004;
  double lambda_max = 0.9;
  std::size_t epochs = 200;
  LossKind kind = LossKind::Cosine;
  nn::AdamConfig adam;
  std::size_t batch_size = 32;
  /// Constant lambda for every epoch; bypasses the schedule.
  std::optional<double> lambda_fixed;

  void validate() const {
    if (!(lambda_init > 0.0 && lambda_init < 1.0 && lambda_max > 0.0 && lambda_max < 1.0))
      throw ConfigError("lambda bounds must lie in (0, 1)");
    if (lambda_init > lambda_max) throw ConfigError("lambda_init must not exceed lambda_max");
    if (!(lambda_step >= 0.0)) throw ConfigError("lambda_step must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (lambda_fixed && !(*lambda_fixed >= 0.0 && *lambda_fixed <= 1.0))
      throw ConfigError("fixed lambda must lie in [0, 1]");
  }
};

inline double lambda_at(std::size_t epoch, const DistillConfig& cfg) {
  if (cfg.lambda_fixed) return *cfg.lambda_fixed;
  return std::min(cfg.lambda_init + static_cast<double>(epoch) * cfg.lambda_step, cfg.lambda_max);
}

template <class T>
Var distill_loss(GradTape<T>& t, Var ys, Var yt, LossKind kind) {
  return kind == LossKind::MSE ? nn::mse(t, ys, yt) : nn::cosine_loss(t, ys, yt);
}

template <class T>
Var total_loss(GradTape<T>& t, Var ys, Var ytrue, Var yt, double lambda, LossKind kind) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  Var l_true = nn::mse(t, ys, ytrue);
  Var l_dist = distill_loss(t, ys, yt, kind);
  const T lam = static_cast<T>(lambda);
  return nn::lincomb(t, {l_true, l_dist}, {lam, T{1} - lam});
}

/// Value form for a single forecast or a batch of them.
template <class T>
T distill_loss(const Tensor<T>& ys, const Tensor<T>& yt, LossKind kind) {
  if (ys.size() != yt.size()) throw ConfigError("distill_loss operands differ in size");
  GradTape<T> t(false);
  const Dims d{ys.rows(), ys.cols()};
  return t.value(distill_loss(t, t.constant(ys.reshaped(d)), t.constant(yt.reshaped(d)), kind))[0];
}

template <class T>
T total_loss(const Tensor<T>& ys, const Tensor<T>& ytrue, const Tensor<T>& yt, double lambda, LossKind kind) {
  if (ys.size() != ytrue.size() || ys.size() != yt.size()) throw ConfigError("total_loss operands differ in size");
  GradTape<T> t(false);
  const Dims d{ys.rows(), ys.cols()};
  Var v = total_loss(t, t.constant(ys.reshaped(d)), t.constant(ytrue.reshaped(d)), t.constant(yt.reshaped(d)),
                     lambda, kind);
  return t.value(v)[0];
}

/// Training windows with optional precomputed teacher forecasts.
struct TrainSet {
  Tensor<float> X, Y;
  std::optional<Tensor<float>> teacher_Y;
  std::size_t size() const { return X.rows(); }
};

struct TrainResult {
  Status status = Status::Trained;
  std::string diagnostic;
  std::size_t epochs_run = 0;
  std::vector<double> epoch_loss;
  std::size_t skipped_batches = 0;
};

struct FitOptions {
  std::size_t epochs = 0;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
  std::function<double(std::size_t)> lambda;  // empty: plain regression
  LossKind kind = LossKind::MSE;
  std::size_t max_bad_epochs = 3;
};

namespace detail {

inline Tensor<float> gather_rows(const Tensor<float>& src, const std::vector<std::size_t>& order, std::size_t begin,
                                 std::size_t end) {
  const std::size_t n = src.cols();
  Tensor<float> out({end - begin, n});
  for (std::size_t r = begin; r < end; ++r) {
    const auto row = src.row(order[r]);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<long>((r - begin) * n));
  }
  return out;
}

template <class Model>
void clamp_alpha(Model& m) {
  for (auto& a : m.dynamics.alpha.value.storage()) a = std::max(a, 0.0f);
}

}  // namespace detail

/// Mini-batch Adam over shuffled windows. A batch whose loss, state or
/// gradient is non-finite is skipped; `max_bad_epochs` consecutive epochs
/// containing such a batch end training with status Failed.
template <class Model>
TrainResult fit(Model& m, const TrainSet& data, const FitOptions& opt, Rng rng, const prune::PruneMask* mask = nullptr) {
  TrainResult res;
  if (opt.epochs == 0) return res;
  if (data.size() == 0) throw ConfigError("training set is empty");
  if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (data.X.cols() != m.tau || data.Y.cols() != m.tau_prime) throw InputError("training windows do not match model shape");
  if (opt.lambda && !data.teacher_Y) throw ConfigError("distillation requires teacher forecasts");

  auto params = m.parameters();
  nn::AdamState<float> state(params);
  Rng shuffle_rng = rng.split("shuffle");
  Rng dropout_rng = rng.split("dropout");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t bad_streak = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    const double lam = opt.lambda ? opt.lambda(epoch) : 1.0;
    double loss_sum = 0.0;
    std::size_t good = 0;
    bool bad = false;
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      const std::size_t e = std::min(order.size(), b + opt.batch_size);
      Tensor<float> xb = detail::gather_rows(data.X, order, b, e);
      Tensor<float> yb = detail::gather_rows(data.Y, order, b, e);
      try {
        GradTape<float> t(true);
        Var ys = models::forward(t, m, xb, nn::DropoutMode::Train, dropout_rng);
        Var loss;
        if (opt.lambda) {
          Var yt = t.constant(detail::gather_rows(*data.teacher_Y, order, b, e));
          loss = total_loss(t, ys, t.constant(std::move(yb)), yt, lam, opt.kind);
        } else {
          loss = nn::mse(t, ys, t.constant(std::move(yb)));
        }
        const float lv = t.value(loss)[0];
        if (!std::isfinite(lv)) throw TrainingInstability("non-finite loss");
        t.backward(loss);
        auto grads = t.gradients(params);
        if (mask) prune::masked_grad_apply(grads, *mask);
        nn::adam_step<float>(params, grads, state, opt.adam);
        detail::clamp_alpha(m);
        loss_sum += lv;
        ++good;
      } catch (const TrainingInstability& ex) {
        bad = true;
        ++res.skipped_batches;
        res.diagnostic = "epoch " + std::to_string(epoch) + ": " + ex.what();
      }
    }
    res.epochs_run = epoch + 1;
    res.epoch_loss.push_back(good ? loss_sum / static_cast<double>(good) : std::nan(""));
    bad_streak = bad ? bad_streak + 1 : 0;
    if (bad_streak >= opt.max_bad_epochs) {
      res.status = Status::Failed;
      res.diagnostic = "non-finite loss in " + std::to_string(bad_streak) + " consecutive epochs; last: " + res.diagnostic;
      return res;
    }
  }
  return res;
}

struct TeacherTrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
};

template <class T>
TrainResult train_teacher(models::TeacherModel<T>& teacher, const TrainSet& data, const TeacherTrainConfig& cfg, Rng rng) {
  FitOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.adam = cfg.adam;
  return fit(teacher, data, opt, rng);
}

/// Teacher forecasts for every training window, dropout off.
template <class T>
Tensor<float> teacher_targets(const models::TeacherModel<T>& teacher, const Tensor<float>& X) {
  Rng unused(0);
  return models::predict(teacher, X, nn::DropoutMode::Deterministic, unused);
}

/// Trains `student` in place. The teacher is only read. If `data` lacks
/// teacher forecasts they are computed once up front.
template <class T>
TrainResult train_student(const models::TeacherModel<T>& teacher, models::StudentModel<T>& student, TrainSet data,
                          const DistillConfig& cfg, Rng rng, const prune::PruneMask* mask = nullptr) {
  cfg.validate();
  if (teacher.tau != student.tau || teacher.tau_prime != student.tau_prime)
    throw ConfigError("student and teacher windows differ");
  if (!data.teacher_Y && cfg.epochs > 0) data.teacher_Y = teacher_targets(teacher, data.X);
  FitOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.adam = cfg.adam;
  opt.kind = cfg.kind;
  opt.lambda = [cfg](std::size_t e) { return lambda_at(e, cfg); };
  return fit(student, data, opt, rng, mask);
}

struct PoolMember {
  std::string id;
  LossKind kind;
  models::StudentModel<float> model;
};

inline std::string stage1_id(LossKind kind, std::size_t d) { return std::string(1, loss_letter(kind)) + "-" + std::to_string(d); }

/// One student per (dim, kind), each initialized from the seed split by its id.
inline std::vector<PoolMember> generate_pool(const std::vector<std::size_t>& dims, const std::vector<LossKind>& kinds,
                                             std::uint64_t seed, const models::StudentConfig& base,
                                             std::optional<std::pair<double, double>> inherit = {}) {
  if (dims.empty()) throw ConfigError("student pool needs at least one hidden dimension");
  if (kinds.empty()) throw ConfigError("student pool needs at least one loss kind");
  for (std::size_t d : dims)
    if (!models::is_power_of_two(d) || d < 2) throw ConfigError("pool dimension " + std::to_string(d) + " is not a power of two >= 2");
  std::vector<PoolMember> pool;
  for (std::size_t d : dims)
    for (LossKind k : kinds) {
      models::StudentConfig c = base;
      c.hidden = d;
      const std::string id = stage1_id(k, d);
      Rng rng = Rng(seed).split("init/" + id);
      pool.push_back({id, k, models::make_student<float>(c, rng, inherit)});
    }
  return pool;
}

/// FNV-1a over every parameter's name and raw bytes.
template <class Model>
std::uint64_t param_checksum(const Model& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto* p : m.parameters()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data().data(), p->value.size() * sizeof(p->value[0]));
  }
  return h;
}

}  // namespace dlnet::distill
