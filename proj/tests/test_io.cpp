#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <unistd.h>

#include "dlnet/dlnet.hpp"

using namespace dlnet;

namespace {

models::TeacherModel<float> small_teacher() {
  models::TeacherConfig c;
  c.tau = 8;
  c.tau_prime = 4;
  c.hidden = 8;
  c.ode_steps = 3;
  Rng rng(1);
  return models::make_teacher<float>(c, rng);
}

models::StudentModel<float> small_student() {
  models::StudentConfig c;
  c.tau = 8;
  c.tau_prime = 4;
  c.hidden = 8;
  Rng rng(2);
  return models::make_student<float>(c, rng);
}

template <class A, class B>
void expect_same_params(const A& a, const B& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    EXPECT_EQ(pa[i]->prunable, pb[i]->prunable);
  }
}

StudentRecord sample_record() {
  StudentRecord r;
  r.id = "C-16_s0.3";
  r.stage = 2;
  r.parent = "C-16";
  r.hidden = 16;
  r.kind = LossKind::Cosine;
  r.sparsity = 0.3;
  r.errors = ErrorVector{0.0123, 0.0234, 1.5, 0.004, 0.05};
  r.costs = CostVector{4096, 0.25, 1.2e-8, 5.6e-9};
  r.utility = UtilityPoint{0.1, 0.2};
  r.pareto = true;
  r.flops = 12345;
  r.params = 678;
  r.measured_ms = 0.0421;
  r.checkpoint = "students/C-16_s0.3.bin";
  r.diagnostic = "note, with \"quotes\"";
  return r;
}

}  // namespace

TEST(Checkpoint, TeacherRoundTrip) {
  const auto m = small_teacher();
  const auto bytes = ckpt::save(m);
  const auto back = ckpt::load_teacher(bytes);
  expect_same_params(m, back);
  EXPECT_EQ(back.dynamics.steps, m.dynamics.steps);
  EXPECT_EQ(ckpt::save(back), bytes);
}

TEST(Checkpoint, StudentWithMaskRoundTrip) {
  const auto [m, mask] = prune::magnitude_prune(small_student(), 0.5);
  const auto bytes = ckpt::save(m, &mask);
  const auto back = ckpt::load_student(bytes);
  expect_same_params(m, back.model);
  ASSERT_TRUE(back.mask);
  EXPECT_EQ(*back.mask, mask);
  EXPECT_EQ(back.model.dynamics.rank, m.dynamics.rank);
  EXPECT_EQ(ckpt::save(back.model, &*back.mask), bytes);
}

TEST(Checkpoint, QuantizedRoundTrip) {
  const auto m = small_student();
  Tensor<float> calib({16, 8}, 0.9f);
  const auto qm = quant::quantize_int8(m, nullptr, quant::calibrate(m, calib));
  const auto bytes = ckpt::save(qm);
  EXPECT_EQ(ckpt::load_quantized(bytes), qm);
}

TEST(Checkpoint, KindMismatchIsCheckpointError) {
  EXPECT_THROW(ckpt::load_student(ckpt::save(small_teacher())), CheckpointError);
}

TEST(Checkpoint, CorruptionIsCheckpointError) {
  auto bytes = ckpt::save(small_student());
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  EXPECT_THROW(ckpt::load_student(flipped), CheckpointError);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(ckpt::decode(magic), CheckpointError);

  EXPECT_THROW(ckpt::decode(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)), CheckpointError);
  EXPECT_THROW(ckpt::decode(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 9)), CheckpointError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / ("dlnet_io_" + std::to_string(::getpid()));
  const auto bytes = ckpt::save(small_student());
  ckpt::write_file(dir / "nested" / "s.bin", bytes);
  EXPECT_EQ(ckpt::read_file(dir / "nested" / "s.bin"), bytes);
  std::filesystem::remove_all(dir);
  EXPECT_ANY_THROW(ckpt::read_file(dir / "missing.bin"));
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = config::parse(R"({"seed": 7, "teacher": {"hidden": 32}, "students": {"dims": [4, 8]}})");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.teacher.hidden, 32u);
  EXPECT_EQ(c.students.dims, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(c.data.tau, 100u);
  EXPECT_DOUBLE_EQ(c.distill.lambda_init, 0.1);
}

TEST(Config, UnknownKeyIsConfigError) {
  EXPECT_THROW(config::parse(R"({"sede": 7})"), ConfigError);
  try {
    config::parse(R"({"teacher": {"hiden": 4}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("teacher.hiden"), std::string::npos) << e.what();
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(config::parse("{not json"), ConfigError);
  EXPECT_THROW(config::parse(R"({"seed": "x"})"), ConfigError);
  EXPECT_THROW(config::parse(R"({"teacher": {"hidden": -3}})"), ConfigError);
  EXPECT_THROW(config::parse(R"({"students": {"dims": [12]}})"), ConfigError);
  EXPECT_THROW(config::parse(R"({"distill": {"lambda_init": 0.95}})"), ConfigError);
}

TEST(Config, ToJsonRoundTrip) {
  const auto a = config::parse(R"({"seed": 3, "data": {"tau": 16, "tau_prime": 8}, "stage2": {"sparsities": [0.5]}})");
  const auto j = config::to_json(a);
  const auto b = config::parse(j.dump());
  EXPECT_EQ(config::to_json(b), j);
}

TEST(Config, SmokeConfigLoads) {
  const auto c = config::load(std::filesystem::path(DLNET_SOURCE_DIR) / "configs" / "smoke.json");
  EXPECT_EQ(c.students.dims.size(), 7u);
  EXPECT_EQ(c.stage2.sparsities.size(), 9u);
  EXPECT_THROW(config::load("/nonexistent.json"), InputError);
}

TEST(Ledger, RoundTrip) {
  StudentRecord failed;
  failed.id = "M-2";
  failed.hidden = 2;
  failed.status = Status::Failed;
  failed.diagnostic = "non-finite loss";
  const std::vector<StudentRecord> rs{sample_record(), failed};
  const auto csv = ledger::to_csv(rs);
  std::istringstream in(csv);
  const auto back = ledger::parse_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, rs[0].id);
  EXPECT_EQ(back[0].diagnostic, rs[0].diagnostic);
  EXPECT_EQ(back[0].kind, LossKind::Cosine);
  EXPECT_TRUE(back[0].pareto);
  EXPECT_DOUBLE_EQ(back[0].errors->mae, 0.0123);
  EXPECT_DOUBLE_EQ(back[0].costs->size_bytes, 4096);
  EXPECT_EQ(back[1].status, Status::Failed);
  EXPECT_FALSE(back[1].errors);
  EXPECT_EQ(ledger::to_csv(back), csv);
}

TEST(Ledger, BadHeaderIsSchemaError) {
  std::istringstream in("id,stage\nx,1\n");
  EXPECT_THROW(ledger::parse_csv(in), SchemaError);
  std::istringstream empty("");
  EXPECT_THROW(ledger::parse_csv(empty), SchemaError);
}

TEST(Ledger, MaskTimingHidesOnlyMeasuredColumn) {
  auto a = sample_record();
  auto b = a;
  b.measured_ms = 9.75;
  const auto ma = ledger::mask_timing(ledger::to_csv({a}));
  EXPECT_EQ(ma, ledger::mask_timing(ledger::to_csv({b})));
  EXPECT_NE(ma.find(",*,"), std::string::npos);
  b.errors->mae = 0.5;
  EXPECT_NE(ma, ledger::mask_timing(ledger::to_csv({b})));
}

TEST(Ledger, FiveSignificantDigits) {
  EXPECT_EQ(ledger::fmt5(0.0123456), "0.012346");
  EXPECT_EQ(ledger::fmt5(4096), "4096");
  EXPECT_EQ(ledger::fmt5(1.0 / 3.0), "0.33333");
}
