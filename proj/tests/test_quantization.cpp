#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <vector>

#include <unistd.h>

#include "oracles.hpp"

using namespace dlnet;
using quant::QuantizedModel;
namespace fs = std::filesystem;

namespace {

models::StudentModel<float> toy_student(std::size_t d, std::uint64_t seed, std::size_t tau = 12, std::size_t tp = 6) {
  models::StudentConfig c;
  c.tau = tau;
  c.tau_prime = tp;
  c.hidden = d;
  c.euler_steps = 4;
  Rng rng(seed);
  return models::make_student<float>(c, rng);
}

Tensor<float> windows(std::size_t n, std::size_t tau, std::uint64_t seed) {
  Tensor<float> X({n, tau});
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    const double start = rng.uniform(0.7, 1.0), slope = rng.uniform(0, 2e-3);
    for (std::size_t j = 0; j < tau; ++j)
      X.at(r, j) = static_cast<float>(start - slope * static_cast<double>(j) + rng.normal(0, 0.002));
  }
  return X;
}

QuantizedModel quantize(const models::StudentModel<float>& m, const prune::PruneMask* mask = nullptr) {
  return quant::quantize_int8(m, mask, quant::calibrate(m, windows(64, m.tau, 5)));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dlnet_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ActivationParams, ConstantPositiveIncludesZero) {
  const auto p = quant::activation_params(0.7, 0.7);
  EXPECT_FLOAT_EQ(p.scale, static_cast<float>(0.7 / 255));
  EXPECT_EQ(p.zero_point, -128);
  EXPECT_EQ(quant::quantize_act(0.0f, p), -128);
  EXPECT_EQ(quant::quantize_act(0.7f, p), 127);
}

TEST(ActivationParams, AffineMappingOfMinusOneToTwo) {
  const auto p = quant::activation_params(-1.0, 2.0);
  EXPECT_FLOAT_EQ(p.scale, static_cast<float>(3.0 / 255));
  EXPECT_EQ(p.zero_point, static_cast<int>(std::round(-128.0 + 1.0 / (3.0 / 255))));
  EXPECT_EQ(quant::quantize_act(-1.0f, p), -128);
  EXPECT_EQ(quant::quantize_act(2.0f, p), 127);
  EXPECT_NEAR(quant::dequantize_act(quant::quantize_act(0.0f, p), p), 0.0f, p.scale / 2);
}

TEST(Calibrate, RangesContainZeroAndObservedValues) {
  const auto m = toy_student(4, 1);
  const auto r = quant::calibrate(m, windows(16, m.tau, 2));
  for (const auto& b : r) {
    EXPECT_LE(b.lo, 0.0);
    EXPECT_GE(b.hi, 0.0);
  }
  const auto& in = r[static_cast<int>(models::Boundary::Input)];
  EXPECT_EQ(in.lo, 0.0);
  EXPECT_GT(in.hi, 0.6);
}

TEST(Calibrate, EmptySetIsConfigError) {
  const auto m = toy_student(4, 1);
  EXPECT_THROW(quant::calibrate(m, Tensor<float>({0, m.tau})), ConfigError);
}

TEST(QuantizeWeight, HandExample) {
  const auto q = quant::quantize_weight("w", Tensor<float>::vector({-1.0f, 0.5f, 1.0f}));
  EXPECT_FLOAT_EQ(q.scale, 1.0f / 127);
  EXPECT_EQ(q.q, (std::vector<std::int8_t>{-127, 64, 127}));
}

TEST(QuantizeWeight, AllZeroTensorUsesUnitScale) {
  const auto q = quant::quantize_weight("w", Tensor<float>({5}, 0.0f));
  EXPECT_EQ(q.scale, 1.0f);
  for (auto v : q.q) EXPECT_EQ(v, 0);
}

TEST(QuantizeInt8, RoundTripWithinHalfScale) {
  const auto m = toy_student(8, 3);
  const auto qm = quantize(m);
  const Tensor<float>* src[] = {&m.encoder.fc1.weight.value, &m.encoder.fc2.weight.value, &m.dynamics.w_diag.value,
                                &m.dynamics.U.value,         &m.dynamics.V.value,         &m.decoder.fc1.weight.value,
                                &m.decoder.fc2.weight.value, &m.decoder.fc3.weight.value};
  for (int k = 0; k < quant::kWeightSlots; ++k) {
    const auto& w = qm.w[k];
    for (std::size_t i = 0; i < w.q.size(); ++i) {
      EXPECT_GE(w.q[i], -127);
      EXPECT_LE(std::fabs(static_cast<double>(w.q[i]) * w.scale - (*src[k])[i]), w.scale / 2 * (1 + 1e-6)) << w.name;
    }
  }
}

TEST(QuantizeInt8, PrunedPositionsAreExactZeros) {
  const auto [pm, mask] = prune::magnitude_prune(toy_student(8, 3), 0.5);
  const auto qm = quantize(pm, &mask);
  std::size_t int8_zeros = 0;
  for (const auto& w : qm.w) int8_zeros += static_cast<std::size_t>(std::count(w.q.begin(), w.q.end(), 0));
  EXPECT_GE(int8_zeros, mask.zeros());
  EXPECT_TRUE(qm.rle);
}

TEST(QuantizeInt8, UnzeroedMaskedWeightIsRejected) {
  auto [pm, mask] = prune::magnitude_prune(toy_student(8, 3), 0.5);
  for (auto* p : pm.parameters())
    if (p->prunable) p->value.fill(0.25f);
  EXPECT_THROW(quantize(pm, &mask), ConfigError);
}

TEST(QuantizedForward, IdentityBoundaryWithinOneStep) {
  const auto p = quant::activation_params(0.0, 1.2);
  for (float x = 0.0f; x <= 1.2f; x += 0.01f)
    EXPECT_LE(std::fabs(quant::dequantize_act(quant::quantize_act(x, p), p) - x), p.scale);
}

TEST(QuantizedForward, CloseToFloatAndDeterministic) {
  for (std::size_t d : {4u, 8u, 16u, 32u}) {
    const auto m = toy_student(d, 10 + d);
    const auto qm = quantize(m);
    const auto X = windows(100, m.tau, 99);
    Rng rng(0);
    const auto yf = models::predict(m, X, nn::DropoutMode::Deterministic, rng);
    const auto yq = quant::quantized_predict(qm, X);
    double diff = 0;
    for (std::size_t i = 0; i < yf.size(); ++i) diff += std::fabs(yf[i] - yq[i]);
    EXPECT_LE(diff / static_cast<double>(yf.size()), 0.005) << "d=" << d;
    EXPECT_EQ(quant::quantized_predict(qm, X), yq);
  }
}

TEST(QuantizedForward, WrongLengthIsInputError) {
  const auto qm = quantize(toy_student(4, 1));
  std::vector<float> x(qm.tau + 1, 0.5f);
  EXPECT_THROW(quant::quantized_forward(qm, x), InputError);
}

TEST(Rle, RoundTripAndEscapes) {
  std::vector<std::int8_t> q{0, 0, 0, 5, 0, -3, 0, 0, 127, -127};
  q.insert(q.end(), 600, 0);
  q.push_back(1);
  const auto enc = quant::rle_encode(q);
  EXPECT_LT(enc.size(), q.size());
  EXPECT_EQ(quant::rle_decode(enc, q.size()), q);
  // Dense values never collide with the escape byte.
  for (std::size_t i = 0; i < enc.size(); ++i)
    if (static_cast<std::int8_t>(enc[i]) == -128) {
      ASSERT_LT(i + 1, enc.size());
      EXPECT_GE(enc[i + 1], 2);
      ++i;
    }
}

TEST(Rle, MalformedInputIsCheckpointError) {
  const std::vector<std::uint8_t> dangling{0x05, 0x80};
  EXPECT_THROW(quant::rle_decode(dangling, 2), CheckpointError);
  const std::vector<std::uint8_t> short_run{0x80, 0x03};
  EXPECT_THROW(quant::rle_decode(short_run, 4), CheckpointError);
}

TEST(Payload, RoundTripDenseAndSparse) {
  const auto dense = quantize(toy_student(8, 3));
  EXPECT_FALSE(dense.rle);
  EXPECT_EQ(quant::deserialize(quant::serialize(dense)), dense);
  const auto [pm, mask] = prune::magnitude_prune(toy_student(8, 3), 0.7);
  const auto sparse = quantize(pm, &mask);
  EXPECT_TRUE(sparse.rle);
  EXPECT_EQ(quant::deserialize(quant::serialize(sparse)), sparse);
  EXPECT_LT(quant::payload_size(sparse), quant::payload_size(dense));
}

TEST(Payload, TruncatedBytesAreRejected) {
  auto bytes = quant::serialize(quantize(toy_student(4, 3)));
  bytes.resize(bytes.size() - 3);
  EXPECT_ANY_THROW(quant::deserialize(bytes));
}

TEST(Golden, RegeneratesAndHasConfiguredCount) {
  const auto qm = quantize(toy_student(4, 3));
  const auto a = emit::make_golden(qm, 42);
  const auto b = emit::make_golden(qm, 42);
  ASSERT_EQ(a.vectors.size(), emit::kDefaultGoldenCount);
  for (std::size_t i = 0; i < a.vectors.size(); ++i) {
    EXPECT_EQ(a.vectors[i].input, b.vectors[i].input);
    EXPECT_EQ(a.vectors[i].trace, b.vectors[i].trace);
    EXPECT_EQ(a.vectors[i].output, b.vectors[i].output);
    EXPECT_EQ(a.vectors[i].trace.size(), quant::trace_length(qm));
  }
  for (float v : a.vectors[0].input) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(emit::make_golden(qm, 42, 5).vectors.size(), 5u);
}

TEST(Golden, CsvRowsAndVectorIds) {
  const auto qm = quantize(toy_student(4, 3));
  const auto gv = emit::make_golden(qm, 42);
  const std::string csv = emit::golden_csv(qm, gv);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "vector_id,kind,index,value");
  std::set<int> ids;
  std::size_t rows = 0;
  std::regex kind_re("^(input|output|intermediate:[0-9]+)$");
  while (std::getline(in, line)) {
    ++rows;
    std::stringstream ls(line);
    std::string id, kind;
    std::getline(ls, id, ',');
    std::getline(ls, kind, ',');
    ids.insert(std::stoi(id));
    EXPECT_TRUE(std::regex_match(kind, kind_re)) << kind;
  }
  EXPECT_EQ(ids.size(), 16u);
  EXPECT_EQ(rows, 16 * (qm.tau + quant::trace_length(qm) + qm.tau_prime));
}

TEST(Emit, ByteIdenticalAcrossCalls) {
  const auto qm = quantize(toy_student(4, 3));
  const auto gv = emit::make_golden(qm, 1);
  EXPECT_EQ(emit::emit_embedded_source(qm, gv), emit::emit_embedded_source(qm, emit::make_golden(qm, 1)));
}

TEST(Emit, PayloadArrayMatchesSizeMetric) {
  const auto qm = quantize(toy_student(4, 3));
  const auto b = emit::emit_embedded_source(qm, emit::make_golden(qm, 1));
  EXPECT_EQ(b.payload_bytes, quant::payload_size(qm));
  std::smatch mm;
  ASSERT_TRUE(std::regex_search(b.header, mm, std::regex("#define DLNET_PAYLOAD_BYTES ([0-9]+)")));
  EXPECT_EQ(std::stoul(mm[1]), quant::payload_size(qm));
  const auto open = b.header.find("dlnet_payload[DLNET_PAYLOAD_BYTES] = {");
  ASSERT_NE(open, std::string::npos);
  const auto close = b.header.find("};", open);
  const std::string body = b.header.substr(open, close - open);
  std::size_t entries = 0;
  for (std::size_t p = body.find("0x"); p != std::string::npos; p = body.find("0x", p + 2)) ++entries;
  EXPECT_EQ(entries, quant::payload_size(qm));
}

TEST(Emit, SolverOpIsRejectedWithOffender) {
  auto qm = quantize(toy_student(4, 3));
  qm.graph = quant::teacher_graph();
  try {
    emit::emit_embedded_source(qm, emit::make_golden(quantize(toy_student(4, 3)), 1));
    FAIL() << "expected EmissionError";
  } catch (const EmissionError& e) {
    EXPECT_NE(std::string(e.what()).find("OdeSolve"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("dynamics.rk4"), std::string::npos) << e.what();
  }
}

// Compiles the emitted kernel with the system C compiler and replays the
// golden inputs through it.
class EmittedKernel : public ::testing::TestWithParam<double> {};

TEST_P(EmittedKernel, MatchesSimulatorBitForBit) {
  if (std::system("cc --version > /dev/null 2>&1") != 0) GTEST_SKIP() << "no C compiler available";
  const double sparsity = GetParam();
  auto [pm, mask] = prune::magnitude_prune(toy_student(8, 4), sparsity);
  const auto qm = quantize(pm, &mask);
  const auto gv = emit::make_golden(qm, 9);
  const auto bundle = emit::emit_embedded_source(qm, gv);
  const fs::path dir = scratch("kernel" + std::to_string(static_cast<int>(sparsity * 10)));
  emit::write_bundle(dir, bundle);
  std::ofstream(dir / "main.c") << R"(#include <stdio.h>
#include "dlnet_model.h"
void dlnet_forecast(const float* x, float* y, int8_t* trace);
int main(void) {
  float x[DLNET_TAU], y[DLNET_TAU_PRIME];
  int8_t tr[DLNET_TRACE_LEN];
  int j;
  for (;;) {
    for (j = 0; j < DLNET_TAU; j++)
      if (scanf("%f", &x[j]) != 1) return 0;
    dlnet_forecast(x, y, tr);
    for (j = 0; j < DLNET_TRACE_LEN; j++) printf("%d ", tr[j]);
    for (j = 0; j < DLNET_TAU_PRIME; j++) printf("%.9g ", y[j]);
    printf("\n");
  }
}
)";
  {
    std::ofstream in(dir / "inputs.txt");
    char buf[32];
    for (const auto& g : gv.vectors)
      for (float v : g.input) {
        std::snprintf(buf, sizeof buf, "%.9g\n", static_cast<double>(v));
        in << buf;
      }
  }
  const std::string d = dir.string();
  const std::string cmd = "cd '" + d +
                          "' && cc -std=c99 -O2 -Wall -Wextra -pedantic -Werror -ffp-contract=off main.c dlnet_model.c "
                          "-lm -o kernel 2> cc.log && ./kernel < inputs.txt > out.txt";
  ASSERT_EQ(std::system(cmd.c_str()), 0) << "see " << d << "/cc.log";
  std::ifstream out(dir / "out.txt");
  for (const auto& g : gv.vectors) {
    for (std::size_t j = 0; j < g.trace.size(); ++j) {
      int v = 0;
      ASSERT_TRUE(out >> v);
      ASSERT_EQ(v, g.trace[j]) << "trace index " << j;
    }
    for (float want : g.output) {
      float got = 0;
      ASSERT_TRUE(out >> got);
      EXPECT_LE(std::fabs(got - want), 1e-5);
    }
  }
  fs::remove_all(dir);
}

INSTANTIATE_TEST_SUITE_P(DenseAndSparse, EmittedKernel, ::testing::Values(0.0, 0.7));
