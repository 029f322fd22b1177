#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"

using namespace dlnet;
using models::StudentConfig;
using models::TeacherConfig;
using nn::DropoutMode;

namespace {

TeacherConfig small_teacher(std::size_t d) {
  TeacherConfig c;
  c.tau = 6;
  c.tau_prime = 4;
  c.hidden = d;
  c.ode_steps = 4;
  return c;
}

StudentConfig small_student(std::size_t d) {
  StudentConfig c;
  c.tau = 6;
  c.tau_prime = 4;
  c.hidden = d;
  c.rank = 4;
  c.euler_steps = 3;
  return c;
}

models::TeacherDynamics<double> dyn(double alpha, double beta, std::size_t d, double w = 0.0, std::size_t steps = 20) {
  models::TeacherDynamics<double> t;
  t.alpha = oracle::scalar("alpha", alpha);
  t.beta = oracle::scalar("beta", beta);
  t.W = {"W", Tensor<double>({d, d}, w), true};
  t.t_end = 1.0;
  t.steps = steps;
  return t;
}

}  // namespace

TEST(TeacherDerivative, Examples) {
  const auto d0 = models::teacher_dynamics_deriv(Tensor<double>({3}, 0.0), dyn(1, 1, 3, 0.2), Tensor<double>({3}, 0.0));
  for (double v : d0.data()) EXPECT_EQ(v, 0.0);

  const auto h0 = Tensor<double>::vector({0.5, -1, 2});
  const auto d1 = models::teacher_dynamics_deriv(h0, dyn(1, 0, 3, 0.7), Tensor<double>({3}, 0.4));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(d1[i], -h0[i]);

  const auto d2 = models::teacher_dynamics_deriv(Tensor<double>({4}, 0.0), dyn(0, 1, 4), Tensor<double>({4}, 0.5));
  for (double v : d2.data()) EXPECT_NEAR(v, 0.46212, 1e-5);
}

TEST(TeacherDerivative, NonFiniteIsTrainingInstability) {
  EXPECT_THROW(models::teacher_dynamics_deriv(Tensor<double>({2}, NAN), dyn(1, 1, 2), Tensor<double>({2}, 0.0)),
               TrainingInstability);
}

TEST(IntegrateOde, LinearDecayMatchesClosedForm) {
  const auto h0 = Tensor<double>::vector({1, -2, 0.5});
  const auto h = models::integrate_ode(h0, dyn(0.8, 0, 3), Tensor<double>({3}, 0.0));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h[i], h0[i] * std::exp(-0.8), 1e-6);
}

TEST(IntegrateOde, ZeroDerivativeKeepsState) {
  const auto h0 = Tensor<double>::vector({1, -2, 0.5});
  EXPECT_EQ(models::integrate_ode(h0, dyn(0, 0, 3, 0.3), Tensor<double>({3}, 1.0)), h0);
}

TEST(IntegrateOde, FourthOrderConvergence) {
  for (std::size_t n : {4u, 8u, 16u}) {
    const double ratio = oracle::rk4_halving_ratio(n);
    EXPECT_GE(ratio, 12.0) << "n=" << n;
    EXPECT_LE(ratio, 20.0) << "n=" << n;
  }
}

TEST(EulerRollout, Examples) {
  auto m = oracle::matched_dynamics(4, 2, 1);
  m.student.alpha.value[0] = 0;
  m.student.beta.value[0] = 0;
  m.student.steps = 1;
  m.student.dt = 1.0;
  EXPECT_EQ(models::euler_rollout(m.h0, m.student, m.u), m.h0);

  m.student.alpha.value[0] = 0.6;
  m.student.dt = 0.25;
  const auto h = models::euler_rollout(m.h0, m.student, m.u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(h[i], m.h0[i] * (1 - 0.6 * 0.25));
}

TEST(EulerRollout, FirstOrderConvergenceToOde) {
  for (std::size_t k : {64u, 128u, 256u}) {
    const double ratio = oracle::euler_halving_ratio(k);
    EXPECT_GE(ratio, 1.5) << "K=" << k;
    EXPECT_LE(ratio, 2.5) << "K=" << k;
  }
}

TEST(LowRank, DiagonalOnlyWhenFactorsVanish) {
  const auto w = Tensor<double>::vector({1, -2, 3});
  const auto h = Tensor<double>::vector({0.5, 0.5, 2});
  const auto y = models::lowrank_matvec(w, Tensor<double>({3, 2}, 0.0), Tensor<double>({3, 2}, 0.0), 2, h);
  EXPECT_EQ(y, Tensor<double>::vector({0.5, -1, 6}));
}

TEST(LowRank, RankOneOuterProduct) {
  const auto y = models::lowrank_matvec(Tensor<double>({4}, 0.0), Tensor<double>({4, 1}, 1.0),
                                        Tensor<double>({4, 1}, 1.0), 1, Tensor<double>::vector({1, 0, 0, 0}));
  EXPECT_EQ(y, Tensor<double>({4}, 1.0));
}

TEST(LowRank, MatchesDenseConstruction) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(15);
    const std::size_t r = 1 + rng.below(d - 1);
    const auto w = oracle::random_tensor({d}, rng);
    const auto U = oracle::random_tensor({d, r}, rng);
    const auto V = oracle::random_tensor({d, r}, rng);
    const auto h = oracle::random_tensor({d}, rng);
    const auto y = models::lowrank_matvec(w.cast<float>(), U.cast<float>(), V.cast<float>(), r, h.cast<float>());
    const auto ref = oracle::dense_lowrank(w.storage(), U.storage(), V.storage(), d, r, h.storage());
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(y[i], ref[i], 1e-5) << "d=" << d << " r=" << r;
  }
}

TEST(LowRank, DimensionMismatchIsConfigError) {
  EXPECT_THROW(models::lowrank_matvec(Tensor<double>({3}), Tensor<double>({3, 2}), Tensor<double>({3, 1}), 2,
                                      Tensor<double>({3})),
               ConfigError);
}

TEST(Model, ZeroFinalLayerGivesZeroForecast) {
  Rng rng(3);
  auto s = models::make_student<float>(small_student(4), rng);
  s.decoder.fc3.weight.value.fill(0.0f);
  s.decoder.fc3.bias.value.fill(0.0f);
  const auto y = models::model_forward(s, Tensor<float>({6}, 0.9f), DropoutMode::Deterministic, rng);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Model, DeterministicModeIsPure) {
  Rng rng(3);
  const auto t = models::make_teacher<float>(small_teacher(8), rng);
  const auto x = Tensor<float>::vector({1, 0.99f, 0.98f, 0.97f, 0.96f, 0.95f});
  Rng a(1), b(2);
  EXPECT_EQ(models::model_forward(t, x, DropoutMode::Deterministic, a), models::model_forward(t, x, DropoutMode::Deterministic, b));
}

TEST(Model, StudentsShareTheTeacherInterface) {
  Rng rng(3);
  const auto t = models::make_teacher<float>(small_teacher(8), rng);
  const auto x = Tensor<float>({6}, 0.9f);
  for (std::size_t d : {2u, 4u, 8u, 16u}) {
    const auto s = models::make_student<float>(small_student(d), rng);
    EXPECT_EQ(models::model_forward(s, x, DropoutMode::Deterministic, rng).dims(),
              models::model_forward(t, x, DropoutMode::Deterministic, rng).dims());
  }
}

TEST(Model, WrongWindowLengthIsInputError) {
  Rng rng(3);
  const auto s = models::make_student<float>(small_student(4), rng);
  EXPECT_THROW(models::model_forward(s, Tensor<float>({5}, 0.9f), DropoutMode::Deterministic, rng), InputError);
}

TEST(Model, StudentWidthMustBePowerOfTwo) {
  Rng rng(3);
  EXPECT_THROW(models::make_student<float>(small_student(6), rng), ConfigError);
}

TEST(Model, TeacherGradientMatchesFiniteDifference) {
  Rng rng(8);
  auto t = models::cast_model<double>(models::make_teacher<float>(small_teacher(8), rng));
  EXPECT_LT(oracle::model_grad_check(t, 21), 1e-4);
}

TEST(Model, StudentGradientMatchesFiniteDifference) {
  Rng rng(8);
  auto s = models::cast_model<double>(models::make_student<float>(small_student(4), rng));
  EXPECT_LT(oracle::model_grad_check(s, 22), 1e-4);
}

TEST(Counts, DenseAndLowRankDynamics) {
  Rng rng(1);
  TeacherConfig tc = small_teacher(128);
  tc.ode_steps = 1;
  EXPECT_EQ(models::dynamics_param_count(models::make_teacher<float>(tc, rng)), 16384u);
  const auto s128 = models::make_student<float>(small_student(128), rng);
  EXPECT_EQ(models::dynamics_param_count(s128), 1152u);
  // 92.97%, i.e. 93% to the whole percent.
  EXPECT_GE(std::round(100.0 * (1.0 - 1152.0 / 16384.0)), 93.0);
  const auto s2 = models::make_student<float>(small_student(2), rng);
  EXPECT_EQ(s2.dynamics.rank, 1u);
  EXPECT_EQ(models::dynamics_param_count(s2), 6u);
  for (std::size_t d : {4u, 8u, 16u, 32u, 64u}) {
    const auto s = models::make_student<float>(small_student(d), rng);
    const std::size_t r = s.dynamics.rank;
    EXPECT_EQ(models::dynamics_param_count(s), d + 2 * d * r);
  }
}

TEST(Counts, ParamsSumLayerShapes) {
  Rng rng(1);
  const auto s = models::make_student<float>(small_student(4), rng);
  // tau=6, e1=8, d=4, e2=8, e3=4, tau'=4, r=3.
  const std::size_t enc = (6 * 8 + 8) + 16 + (8 * 4 + 4) + 8;
  const std::size_t dynp = 2 + 4 + 2 * 4 * 3;
  const std::size_t dec = (4 * 8 + 8) + 16 + (8 * 4 + 4) + 8 + (4 * 4 + 4);
  EXPECT_EQ(models::count_params(s), enc + dynp + dec);
}

TEST(Counts, FlopsFollowPerElementConstants) {
  Rng rng(1);
  auto s = models::make_student<float>(small_student(4), rng);
  const std::uint64_t encdec = 6 + (2 * 6 * 8 + 8 * 8 + 8) + (2 * 8 * 4 + 8 * 4 + 8 * 4) + (2 * 4 * 8 + 8 * 8 + 8) +
                               (2 * 8 * 4 + 8 * 4 + 4) + (2 * 4 * 4);
  EXPECT_EQ(models::count_flops(s), encdec + 3 * (4 * 4 * 3 + 16 * 4));
  // RK4 step: four right-hand sides of 2d^2 + 12d plus 14d of stage arithmetic.
  EXPECT_EQ(models::FlopModel::rk4_step(64), 4u * (2 * 64 * 64 + 12 * 64) + 14 * 64);
  auto tc = small_teacher(64);
  const auto t1 = models::make_teacher<float>(tc, rng);
  tc.hidden = 128;
  const auto t2 = models::make_teacher<float>(tc, rng);
  EXPECT_EQ(models::count_flops(t2) - models::count_flops(t1) -
                (models::FlopModel::encoder_decoder(6, 4, 128, t2.widths) -
                 models::FlopModel::encoder_decoder(6, 4, 64, t1.widths)),
            tc.ode_steps * (models::FlopModel::rk4_step(128) - models::FlopModel::rk4_step(64)));
  EXPECT_GT(models::count_flops(t2), models::count_flops(t1));
}

TEST(Model, ToyTeacherFitsLinearDecay) {
  // SoH(c) = 1 - 1e-4 c, no noise.
  const std::size_t tau = 16, tp = 8, len = 1000;
  std::vector<float> soh(len);
  for (std::size_t c = 0; c < len; ++c) soh[c] = static_cast<float>(1.0 - 1e-4 * static_cast<double>(c + 1));
  auto windows = [&](std::size_t first, std::size_t last, std::size_t stride) {
    std::vector<float> xs, ys;
    std::size_t n = 0;
    for (std::size_t o = first; o + tau + tp <= last; o += stride, ++n) {
      xs.insert(xs.end(), soh.begin() + static_cast<long>(o), soh.begin() + static_cast<long>(o + tau));
      ys.insert(ys.end(), soh.begin() + static_cast<long>(o + tau), soh.begin() + static_cast<long>(o + tau + tp));
    }
    return std::pair{Tensor<float>({n, tau}, xs), Tensor<float>({n, tp}, ys)};
  };
  auto [Xtr, Ytr] = windows(0, 800, 4);
  auto [Xte, Yte] = windows(800, 1000, 8);
  TeacherConfig tc;
  tc.tau = tau;
  tc.tau_prime = tp;
  tc.hidden = 8;
  tc.ode_steps = 4;
  tc.dropout = 0.0;
  Rng rng(5);
  auto teacher = models::make_teacher<float>(tc, rng);
  distill::TeacherTrainConfig cfg;
  cfg.epochs = 150;
  cfg.adam.lr = 3e-3;
  const auto res = distill::train_teacher(teacher, distill::TrainSet{Xtr, Ytr, {}}, cfg, Rng(6));
  ASSERT_EQ(res.status, Status::Trained);
  const auto pred = models::predict(teacher, Xte, DropoutMode::Deterministic, rng);
  double mae = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) mae += std::fabs(pred[i] - Yte[i]);
  mae /= static_cast<double>(pred.size());
  EXPECT_LT(mae, 5e-3);
}
