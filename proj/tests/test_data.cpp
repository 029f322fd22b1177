#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dlnet/dlnet.hpp"

using namespace dlnet;
using namespace dlnet::data;

namespace {

std::vector<SoHSeries> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_soh_csv(in, "fixture.csv");
}

// First cycle with SoH below 0.8 for the noise-free curve, from the roots of
// 1 - a c - b (c - knee)^2 = 0.8.
double eol_root(const CellParams& c) {
  const double linear = 0.2 / c.a;
  if (linear <= c.knee) return linear;
  const double disc = c.a * c.a - 4.0 * c.b * (c.a * c.knee - 0.2);
  return c.knee + (-c.a + std::sqrt(disc)) / (2.0 * c.b);
}

std::vector<SoHSeries> linear_cells(std::size_t n, std::size_t len) {
  std::vector<SoHSeries> out;
  for (std::size_t i = 0; i < n; ++i) {
    SoHSeries s{"c" + std::to_string(i), {}, 1};
    for (std::size_t k = 0; k < len; ++k) s.soh.push_back(1.0 - 1e-4 * static_cast<double>((i + 1) * (k + 1)));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Csv, ThreeRowsOneCell) {
  const auto s = parse("cell_id,cycle,soh\nA,1,1.0\nA,2,0.99\nA,3,0.98\n");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].cell_id, "A");
  EXPECT_EQ(s[0].first_cycle, 1);
  EXPECT_EQ(s[0].soh, (std::vector<double>{1.0, 0.99, 0.98}));
}

TEST(Csv, InterleavedCellsAndUnsortedCycles) {
  const auto s = parse("soh,cell_id,cycle,temp\n0.9,B,5,25\n1.0,A,1,25\n0.89,B,6,25\n0.99,A,2,25\n0.91,B,4,25\n");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].cell_id, "B");
  EXPECT_EQ(s[0].first_cycle, 4);
  EXPECT_EQ(s[0].soh, (std::vector<double>{0.91, 0.9, 0.89}));
  EXPECT_EQ(s[1].soh, (std::vector<double>{1.0, 0.99}));
}

TEST(Csv, DuplicateCycleIsDataError) {
  try {
    parse("cell_id,cycle,soh\nA,1,1.0\nA,1,0.99\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate cycle 1"), std::string::npos) << e.what();
  }
}

TEST(Csv, GapIsDataError) { EXPECT_THROW(parse("cell_id,cycle,soh\nA,1,1.0\nA,3,0.99\n"), DataError); }

TEST(Csv, MissingColumnIsSchemaError) {
  EXPECT_THROW(parse("cell_id,soh\nA,1.0\n"), SchemaError);
  EXPECT_THROW(parse(""), SchemaError);
  EXPECT_THROW(parse("cell_id,cycle,soh\nA,1\n"), SchemaError);
}

TEST(Csv, OutOfRangeOrGarbageIsDataError) {
  EXPECT_THROW(parse("cell_id,cycle,soh\nA,1,1.5\n"), DataError);
  EXPECT_THROW(parse("cell_id,cycle,soh\nA,1,0\n"), DataError);
  EXPECT_THROW(parse("cell_id,cycle,soh\nA,1,abc\n"), DataError);
  EXPECT_THROW(parse("cell_id,cycle,soh\nA,x,0.9\n"), DataError);
  EXPECT_THROW(parse("cell_id,cycle,soh\n,1,0.9\n"), DataError);
}

TEST(Csv, WriteParseRoundTrip) {
  SynthParams p;
  const auto cells = synth_degradation(3, 50, p, 4);
  std::stringstream ss;
  write_soh_csv(ss, cells);
  const auto back = parse_soh_csv(ss);
  ASSERT_EQ(back.size(), cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(back[i].cell_id, cells[i].cell_id);
    ASSERT_EQ(back[i].soh.size(), cells[i].soh.size());
    for (std::size_t k = 0; k < cells[i].soh.size(); ++k) EXPECT_NEAR(back[i].soh[k], cells[i].soh[k], 1e-8);
  }
}

TEST(Csv, MissingFileIsInputError) { EXPECT_THROW(load_soh_csv("/nonexistent/soh.csv"), InputError); }

TEST(Synth, LinearWhenNoiseAndCurvatureAreZero) {
  SynthParams p;
  p.noise_sd = 0.0;
  p.b_range = {0.0, 0.0};
  p.a_range = {1e-4, 1e-4};
  const auto s = synth_degradation(1, 100, p, 1);
  for (std::size_t k = 0; k < 100; ++k) EXPECT_NEAR(s[0].soh[k], 1.0 - 1e-4 * static_cast<double>(k + 1), 1e-15);
}

TEST(Synth, SameSeedSameSeries) {
  const SynthParams p;
  const auto a = synth_degradation(4, 300, p, 9);
  const auto b = synth_degradation(4, 300, p, 9);
  const auto c = synth_degradation(4, 300, p, 10);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].soh, b[i].soh);
  EXPECT_NE(a[0].soh, c[0].soh);
}

TEST(Synth, CellsDoNotDependOnPoolSize) {
  const SynthParams p;
  const auto small = synth_degradation(2, 100, p, 3);
  const auto big = synth_degradation(6, 100, p, 3);
  EXPECT_EQ(small[1].soh, big[1].soh);
}

TEST(Synth, NonIncreasingWithoutNoiseAndWithinBounds) {
  SynthParams p;
  p.noise_sd = 0.0;
  for (const auto& s : synth_degradation(20, 1500, p, 2)) {
    for (std::size_t k = 1; k < s.soh.size(); ++k) EXPECT_LE(s.soh[k], s.soh[k - 1]);
    for (double v : s.soh) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, kSohMax);
    }
  }
}

TEST(Synth, EndOfLifeMostlyBetween700And1000) {
  SynthParams p;
  const std::size_t n = 500;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = eol_root(synth_cell_params(p, 21, i));
    if (c >= 700.0 && c <= 1000.0) ++inside;
  }
  EXPECT_GE(static_cast<double>(inside) / n, 0.9) << inside << " of " << n;
}

TEST(Synth, NoiseFreeCrossingMatchesClosedForm) {
  SynthParams p;
  p.noise_sd = 0.0;
  const auto cells = synth_degradation(30, 1500, p, 22);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double root = eol_root(synth_cell_params(p, 22, i));
    const auto& s = cells[i].soh;
    const auto it = std::find_if(s.begin(), s.end(), [](double v) { return v < 0.8; });
    ASSERT_NE(it, s.end());
    const double cycle = static_cast<double>(it - s.begin() + 1);
    EXPECT_GE(cycle, root);
    EXPECT_LT(cycle, root + 1.0);
  }
}

TEST(Synth, InvalidParamsAreConfigErrors) {
  SynthParams p;
  p.a_range = {2e-4, 1e-4};
  EXPECT_THROW(synth_degradation(1, 10, p, 1), ConfigError);
  p = {};
  p.noise_sd = -1;
  EXPECT_THROW(synth_degradation(1, 10, p, 1), ConfigError);
}

TEST(Windows, Counts) {
  EXPECT_EQ(window_count(200, 100, 100, 10), 1u);
  EXPECT_EQ(window_count(210, 100, 100, 10), 2u);
  EXPECT_EQ(window_count(199, 100, 100, 10), 0u);
  EXPECT_EQ(window_count(1000, 100, 100, 100), 9u);
}

TEST(Windows, ContentsAndCountProperty) {
  const auto cells = linear_cells(1, 257);
  for (std::size_t stride : {1u, 3u, 10u, 64u}) {
    const auto ws = make_windows(cells[0], 20, 7, stride);
    const std::size_t expect = (257 - 27) / stride + 1;
    ASSERT_EQ(ws.size(), expect);
    for (std::size_t w = 0; w < ws.size(); ++w) {
      EXPECT_EQ(ws[w].offset, w * stride);
      ASSERT_EQ(ws[w].x.size(), 20u);
      ASSERT_EQ(ws[w].y.size(), 7u);
      EXPECT_EQ(ws[w].x[0], static_cast<float>(cells[0].soh[w * stride]));
      EXPECT_EQ(ws[w].y[0], static_cast<float>(cells[0].soh[w * stride + 20]));
      EXPECT_LE(w * stride + 27, 257u);
    }
  }
  EXPECT_THROW(make_windows(cells[0], 20, 7, 0), ConfigError);
}

TEST(Split, OneTestCellPerTertile) {
  const auto cells = linear_cells(9, 300);
  const WindowSpec spec{100, 100, 10, 100};
  const auto split = split_by_health(cells, 1.0 / 3.0, 5, spec);
  ASSERT_EQ(split.test_cells.size(), 3u);
  EXPECT_EQ(split.train_cells.size(), 6u);
  std::set<HealthTag> seen;
  for (const auto& id : split.test_cells) seen.insert(split.tags.at(id));
  EXPECT_EQ(seen.size(), 3u);
  // Slowest fade is healthiest.
  EXPECT_EQ(split.tags.at("c0"), HealthTag::High);
  EXPECT_EQ(split.tags.at("c8"), HealthTag::Low);
  EXPECT_EQ(split.train.size(), 6u * window_count(300, 100, 100, 10));
  EXPECT_EQ(split.test.size(), 3u * window_count(300, 100, 100, 100));
}

TEST(Split, DisjointAndDeterministic) {
  const auto cells = linear_cells(12, 250);
  const WindowSpec spec{50, 50, 10, 50};
  const auto a = split_by_health(cells, 0.25, 7, spec);
  const auto b = split_by_health(cells, 0.25, 7, spec);
  EXPECT_EQ(a.test_cells, b.test_cells);
  EXPECT_EQ(a.train_cells, b.train_cells);
  std::set<std::string> train(a.train_cells.begin(), a.train_cells.end());
  for (const auto& id : a.test_cells) EXPECT_EQ(train.count(id), 0u) << id;
  for (const auto& w : a.train) EXPECT_EQ(train.count(w.cell_id), 1u);
  for (const auto& w : a.test) EXPECT_EQ(train.count(w.cell_id), 0u);
  EXPECT_EQ(a.train_cells.size() + a.test_cells.size(), cells.size());
}

TEST(Split, TooFewCellsIsConfigError) {
  const WindowSpec spec{10, 10, 5, 10};
  EXPECT_THROW(split_by_health(linear_cells(2, 100), 0.3, 1, spec), ConfigError);
  EXPECT_THROW(split_by_health(linear_cells(6, 100), 0.0, 1, spec), ConfigError);
}

TEST(Stack, ShapesAndErrors) {
  const auto ws = make_windows(linear_cells(1, 40)[0], 8, 4, 5);
  const auto [X, Y] = stack_windows(ws);
  EXPECT_EQ(X.dims(), (std::vector<std::size_t>{ws.size(), 8}));
  EXPECT_EQ(Y.dims(), (std::vector<std::size_t>{ws.size(), 4}));
  EXPECT_EQ(X[8], ws[1].x[0]);
  EXPECT_THROW(stack_windows(ws, {}), ConfigError);
}
