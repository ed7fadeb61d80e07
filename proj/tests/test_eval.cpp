#include <cmath>
#include <numeric>

#include "doctest.h"
#include "eolt/eval.hpp"
#include "eolt/io.hpp"
#include "helpers.hpp"

using namespace eolt;

namespace {

struct Fixture {
  SwapModel model{0, SwapVariant::blur_bottleneck};
  IdentityEmbedder embedder{0};
  EvalSetup setup;

  explicit Fixture(std::size_t n, std::size_t size = 16) {
    setup.model = &model;
    setup.embedder = &embedder;
    for (const auto& r : synth_images(n, size, size, 1)) setup.images.push_back(r.pixels);
    setup.budget = {0.05, 0.01, 5};
    setup.eot_transforms = {TransformId::gaussblur, TransformId::hflip};
    setup.fingerprint = "test";
  }
};

}  // namespace

TEST_CASE("category aggregation algebra") {
  Rng rng(1);
  const std::vector<TransformId> all(all_transforms().begin(), all_transforms().end());
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TransformId> subset;
    std::vector<double> cells;
    for (TransformId t : all)
      if (rng.uniform() < 0.5) {
        subset.push_back(t);
        cells.push_back(rng.uniform(-1, 1));
      }
    if (subset.empty()) continue;
    const double clean = rng.uniform(-1, 1);
    const auto row = aggregate_categories(clean, subset, cells);
    CHECK(row[0] == clean);
    double overall = 0.0;
    int used = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      double s = 0.0;
      int n = 0;
      for (std::size_t k = 0; k < subset.size(); ++k)
        if (category_of(subset[k]) == kCategories[c]) {
          s += cells[k];
          ++n;
        }
      if (n == 0) {
        CHECK(std::isnan(row[1 + c]));
        continue;
      }
      CHECK(std::abs(row[1 + c] - s / n) <= 1e-12);
      overall += row[1 + c];
      ++used;
    }
    CHECK(std::abs(row[7] - overall / used) <= 1e-12);
  }
}

TEST_CASE("train spec names round trip") {
  for (const char* n : {"no_attack", "pgd_clean", "eot", "eolt", "gaussblur"})
    CHECK(TrainSpec::parse(n).name() == n);
  CHECK_THROWS(TrainSpec::parse("dfrap"));
}

TEST_CASE("cross matrix shape and deterministic CSV") {
  Fixture f(2);
  const Catalog cat({TransformId::gaussblur, TransformId::jpeg});
  const auto a = cross_matrix(f.setup, cat, Rng(3));
  CHECK(a.rows.size() == 4);
  CHECK(a.cols.size() == 3);
  CHECK(a.rows[0] == "no_attack");
  CHECK(a.rows[1] == "pgd_clean");
  CHECK(a.cols[0] == "clean");
  REQUIRE(a.values.size() == 4);
  for (const auto& row : a.values) {
    CHECK(row.size() == 3);
    for (double v : row) CHECK(std::abs(v) <= 1.0);
  }
  const auto b = cross_matrix(f.setup, cat, Rng(3));
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.to_csv().find("test") != std::string::npos);
  CHECK(a.to_svg().find("<svg") != std::string::npos);
}

TEST_CASE("eval cell records its inputs") {
  Fixture f(3);
  const auto rec = eval_cell(f.setup, TrainSpec::parse("no_attack"), std::nullopt, Rng(4));
  CHECK(rec.n_images == 3);
  CHECK(rec.test_spec == "clean");
  CHECK(rec.magnitudes_used.empty());
  CHECK(eval_cell(f.setup, TrainSpec::parse("no_attack"), TransformId::jpeg, Rng(4)).magnitudes_used ==
        std::vector<int>{2, 5, 8});
  double manual = 0.0;
  for (const auto& x : f.setup.images) manual += id_similarity(f.embedder, f.model(x), x);
  CHECK(rec.mean_id_sim == doctest::Approx(manual / 3).epsilon(1e-12));
}

TEST_CASE("attacks lower clean-column similarity") {
  Fixture f(32);
  f.setup.budget = {0.05, 0.01, 10};
  const auto base = eval_cell(f.setup, TrainSpec::parse("no_attack"), std::nullopt, Rng(5));
  for (const char* m : {"pgd_clean", "eot", "gaussblur"}) {
    const auto rec = eval_cell(f.setup, TrainSpec::parse(m), std::nullopt, Rng(5));
    INFO(m);
    CHECK(rec.mean_id_sim <= base.mean_id_sim);
  }
}

TEST_CASE("category table carries the eolt row and its Overall") {
  Fixture f(2);
  const PolicyNet policy(Catalog(f.setup.eot_transforms), Backbone::small_cnn, 0);
  f.setup.policy = &policy;
  const std::vector<TransformId> tests = {TransformId::normal, TransformId::gaussblur, TransformId::hflip};
  const std::vector<TrainSpec> methods = {TrainSpec::parse("no_attack"), TrainSpec::parse("eolt")};
  const auto rep = category_table(f.setup, methods, tests, Rng(6));
  CHECK(rep.methods == std::vector<std::string>{"no_attack", "eolt"});
  for (std::size_t m = 0; m < 2; ++m) {
    const auto agg = aggregate_categories(rep.clean[m], tests, rep.cells[m]);
    for (std::size_t c = 0; c < 8; ++c)
      if (!std::isnan(agg[c])) CHECK(agg[c] == rep.table[m][c]);
  }
  CHECK(rep.overall("eolt") == rep.table[1][7]);

  f.setup.policy = nullptr;
  CHECK_THROWS(category_table(f.setup, methods, tests, Rng(6)));
}

TEST_CASE("distribution export") {
  const Catalog nine({TransformId::normal, TransformId::salt, TransformId::hsv, TransformId::boxblur,
                      TransformId::gaussblur, TransformId::contrast, TransformId::jpeg, TransformId::hflip,
                      TransformId::crop});
  const PolicyNet policy(nine, Backbone::small_cnn, 0);
  std::vector<Tensor> images;
  for (const auto& r : synth_images(3, 32, 32, 2)) images.push_back(r.pixels);
  const auto rows = export_distribution(policy, images, 1.0 / 6);
  CHECK(rows.size() == 81);
  double s = 0.0;
  for (const auto& r : rows) {
    s += r.probability;
    CHECK(r.probability == doctest::Approx(1.0 / 81).epsilon(1e-12));
  }
  CHECK(std::abs(s - 1.0) <= 1e-6);
  const auto mass = category_mass(rows);
  CHECK(mass[2] == doctest::Approx(2.0 / 9).epsilon(1e-12));
  CHECK(distribution_csv(rows).find("gaussblur@4") != std::string::npos);
}

TEST_CASE("sweep parameter names") {
  for (const char* n : {"pgd_steps", "cap", "lr", "backbone"})
    CHECK(sweep_parameter_name(*parse_sweep_parameter(n)) == n);
  CHECK_FALSE(parse_sweep_parameter("epochs").has_value());
}
