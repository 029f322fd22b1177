#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"

using namespace dlnet;

namespace {

models::StudentModel<float> student(std::size_t d, std::uint64_t seed) {
  models::StudentConfig c;
  c.tau = 8;
  c.tau_prime = 4;
  c.hidden = d;
  Rng rng(seed);
  return models::make_student<float>(c, rng);
}

// Positions of zero-valued prunable weights, flattened in parameter order.
std::vector<bool> zero_set(const models::StudentModel<float>& m) {
  std::vector<bool> z;
  for (const auto* p : m.parameters())
    if (p->prunable)
      for (float v : p->value.data()) z.push_back(v == 0.0f);
  return z;
}

}  // namespace

TEST(Prune, ZeroSparsityKeepsModel) {
  const auto m = student(4, 1);
  const auto [pruned, mask] = prune::magnitude_prune(m, 0.0);
  EXPECT_EQ(distill::param_checksum(pruned), distill::param_checksum(m));
  EXPECT_EQ(mask.zeros(), 0u);
  EXPECT_EQ(mask.prunable(), prune::prunable_count(m));
}

TEST(Prune, SmallestMagnitudesGoFirst) {
  auto m = student(2, 1);
  // Force a tiny global problem: all prunable weights large except four.
  for (auto* p : m.parameters())
    if (p->prunable) p->value.fill(5.0f);
  auto& w = m.dynamics.w_diag.value;
  auto& u = m.dynamics.U.value;
  w[0] = 0.1f;
  w[1] = -0.5f;
  u[0] = 0.3f;
  u[1] = -0.2f;
  const std::size_t n = prune::prunable_count(m);
  // s chosen so that floor(s n) = 2.
  const double s = 2.5 / static_cast<double>(n);
  const auto [pruned, mask] = prune::magnitude_prune(m, s);
  EXPECT_EQ(pruned.dynamics.w_diag.value[0], 0.0f);
  EXPECT_EQ(pruned.dynamics.U.value[1], 0.0f);
  EXPECT_EQ(pruned.dynamics.w_diag.value[1], -0.5f);
  EXPECT_EQ(pruned.dynamics.U.value[0], 0.3f);
  EXPECT_EQ(mask.zeros(), 2u);
}

TEST(Prune, ExactCountsForEverySparsity) {
  const auto m = student(8, 2);
  const std::size_t n = prune::prunable_count(m);
  for (double s : prune::default_sparsities()) {
    const auto [pruned, mask] = prune::magnitude_prune(m, s);
    const auto expect = static_cast<std::size_t>(std::floor(s * static_cast<double>(n) + 1e-9));
    EXPECT_EQ(prune::zero_count(pruned), expect) << "s=" << s;
    EXPECT_EQ(mask.zeros(), expect);
  }
}

TEST(Prune, HundredWeightsAtNinetyPercent) {
  EXPECT_EQ(prune::prune_count(0.9, 100), 90u);
  EXPECT_EQ(prune::prune_count(0.3, 10), 3u);
  EXPECT_EQ(prune::prune_count(0.7, 10), 7u);
}

TEST(Prune, NonPrunableTensorsUntouched) {
  const auto m = student(8, 3);
  const auto [pruned, mask] = prune::magnitude_prune(m, 0.7);
  auto a = m.parameters();
  auto b = pruned.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i]->prunable) {
      EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
    }
}

TEST(Prune, ZeroSetsAreNested) {
  const auto m = student(8, 4);
  std::vector<bool> prev;
  for (double s : prune::default_sparsities()) {
    const auto z = zero_set(prune::magnitude_prune(m, s).first);
    if (!prev.empty())
      for (std::size_t i = 0; i < z.size(); ++i)
        if (prev[i]) {
          EXPECT_TRUE(z[i]) << "s=" << s << " index " << i;
        }
    prev = z;
  }
}

TEST(Prune, SparsityOneIsConfigError) {
  const auto m = student(4, 1);
  EXPECT_THROW(prune::magnitude_prune(m, 1.0), ConfigError);
  EXPECT_THROW(prune::magnitude_prune(m, -0.1), ConfigError);
}

TEST(MaskedGrad, OnesKeepZerosDrop) {
  const auto m = student(4, 1);
  auto params = const_cast<models::StudentModel<float>&>(m).parameters();
  std::vector<Tensor<float>> grads;
  for (auto* p : params) grads.emplace_back(p->value.dims(), 1.0f);
  const auto ones = prune::full_mask(m);
  auto g1 = grads;
  prune::masked_grad_apply(g1, ones);
  for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_EQ(g1[k], grads[k]);

  auto zeros = ones;
  for (auto& k : zeros.keep) std::fill(k.begin(), k.end(), std::uint8_t{0});
  auto g0 = grads;
  prune::masked_grad_apply(g0, zeros);
  for (std::size_t k = 0; k < g0.size(); ++k)
    if (params[k]->prunable) {
      for (float v : g0[k].data()) EXPECT_EQ(v, 0.0f);
    }
}

TEST(MaskedGrad, ZerosPersistThroughTraining) {
  models::StudentConfig c;
  c.tau = 8;
  c.tau_prime = 4;
  c.hidden = 8;
  Rng rng(5);
  const auto base = models::make_student<float>(c, rng);
  models::TeacherConfig tc;
  tc.tau = 8;
  tc.tau_prime = 4;
  tc.hidden = 8;
  tc.ode_steps = 2;
  const auto teacher = models::make_teacher<float>(tc, rng);
  Tensor<float> X({40, 8}), Y({40, 4});
  for (float& v : X.storage()) v = static_cast<float>(rng.uniform(0.7, 1.0));
  for (float& v : Y.storage()) v = static_cast<float>(rng.uniform(0.7, 1.0));

  auto [m, mask] = prune::magnitude_prune(base, 0.6);
  const auto before = zero_set(m);
  distill::DistillConfig cfg;
  cfg.epochs = 20;
  cfg.adam.lr = 1e-2;
  ASSERT_EQ(distill::train_student(teacher, m, {X, Y, {}}, cfg, Rng(6), &mask).status, Status::Trained);
  const auto after = zero_set(m);
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before[i]) {
      EXPECT_TRUE(after[i]) << "pruned weight " << i << " revived";
    }
  EXPECT_EQ(prune::zero_count(m), mask.zeros());
}

TEST(Variants, OnePerSparsity) {
  const auto m = student(4, 1);
  EXPECT_EQ(prune::prune_variants(m, prune::default_sparsities()).size(), 9u);
  EXPECT_TRUE(prune::prune_variants(m, {}).empty());
  const auto v = prune::prune_variants(m, {0.2, 0.5});
  EXPECT_EQ(v[0].sparsity, 0.2);
  EXPECT_LT(prune::zero_count(v[0].model), prune::zero_count(v[1].model));
  // Three elites give 27 candidates before the loss-kind doubling.
  std::size_t total = 0;
  for (int e = 0; e < 3; ++e) total += prune::prune_variants(student(4, 10 + e), prune::default_sparsities()).size();
  EXPECT_EQ(total, 27u);
}
