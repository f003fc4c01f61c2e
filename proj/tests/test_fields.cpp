#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pml/errors.hpp"
#include "pml/fields.hpp"
#include "pml/grid.hpp"

using namespace pml;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double pop_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("fluid model closed forms") {
  FluidModel fluid;  // mu_w=1, mu_o=5, quadratic Corey
  const std::vector<double> S = {0.5};
  const std::vector<double> lam = mobility(fluid, S);
  // 0.25/1 + 0.25/5
  CHECK(lam[0] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(fractional_flow(fluid, 0.5) == doctest::Approx(0.25 / 0.3).epsilon(1e-14));
  CHECK(fractional_flow(fluid, 0.0) == 0.0);
  CHECK(fractional_flow(fluid, 1.0) == 1.0);
}

TEST_CASE("fractional flow is monotone and matches its derivative") {
  FluidModel fluid;
  fluid.mu_w = 0.8;
  fluid.mu_o = 3.0;
  double prev = fractional_flow(fluid, 0.0);
  for (int i = 1; i <= 40; ++i) {
    const double s = i / 40.0;
    const double f = fractional_flow(fluid, s);
    CHECK(f >= prev);
    prev = f;
  }
  // Central differences away from the clamped endpoints.
  const double h = 1e-6;
  for (double s : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    const double fd = (fractional_flow(fluid, s + h) - fractional_flow(fluid, s - h)) / (2 * h);
    CHECK(fractional_flow_deriv(fluid, s) == doctest::Approx(fd).epsilon(1e-7));
  }
  // The vector form agrees with the scalar one.
  std::vector<double> S = {0.0, 0.3, 0.6, 1.0}, fw, dfw;
  fractional_flow(fluid, S, fw, dfw);
  for (std::size_t i = 0; i < S.size(); ++i) {
    CHECK(fw[i] == fractional_flow(fluid, S[i]));
    CHECK(dfw[i] == fractional_flow_deriv(fluid, S[i]));
  }
}

TEST_CASE("non-integer Corey exponents take the pow path") {
  FluidModel fluid;
  fluid.a = 2.5;
  fluid.b = 1.7;
  const std::vector<double> lam = mobility(fluid, {0.4});
  const double want = std::pow(0.4, 2.5) / fluid.mu_w + std::pow(0.6, 1.7) / fluid.mu_o;
  CHECK(lam[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("mobility rejects saturations outside the unit interval") {
  FluidModel fluid;
  CHECK_THROWS_AS(mobility(fluid, {0.5, 1.5}), domain_error);
  CHECK_THROWS_AS(mobility(fluid, {-0.2}), domain_error);
  // The validation tolerance admits roundoff-level excursions.
  CHECK_NOTHROW(mobility(fluid, {1.0 + 5e-11, -5e-11}));
}

TEST_CASE("five-spot source is balanced") {
  const Grid g = build_grid(5, 5, 1.0, 1.0);
  const std::array<double, 4> rates = {1.0, 2.0, 3.0, 4.0};
  const SourceField f = five_spot_source(g, rates);
  REQUIRE(f.wells.size() == 5);
  // Injectors in the corners, the balancing producer at the center cell.
  CHECK(f.wells[0].first == g.cell_id(0, 0));
  CHECK(f.wells[1].first == g.cell_id(0, 4));
  CHECK(f.wells[2].first == g.cell_id(4, 0));
  CHECK(f.wells[3].first == g.cell_id(4, 4));
  CHECK(f.wells[4].first == g.cell_id(2, 2));
  CHECK(f.wells[4].second == doctest::Approx(-10.0));
  double total = 0.0;
  for (double r : f.r) total += r * g.cell_volume;
  CHECK(std::fabs(total) < 1e-12);

  CHECK_THROWS_AS(five_spot_source(build_grid(2, 5, 1.0, 1.0), rates), config_error);
  CHECK_THROWS_AS(five_spot_source(g, {1.0, 2.0, 0.0, 4.0}), config_error);
}

TEST_CASE("two-well source geometry") {
  const Grid g = build_grid(6, 4, 3.0, 2.0);
  const SourceField f = two_well_source(g, 2.5);
  REQUIRE(f.wells.size() == 2);
  CHECK(f.wells[0].first == g.cell_id(g.ny - 1, 0));
  CHECK(f.wells[0].second == doctest::Approx(2.5));
  CHECK(f.wells[1].first == g.cell_id(0, g.nx - 1));
  CHECK(f.wells[1].second == doctest::Approx(-2.5));
  CHECK(f.r[f.wells[0].first] == doctest::Approx(2.5 / g.cell_volume));
  double total = 0.0;
  for (double r : f.r) total += r * g.cell_volume;
  CHECK(std::fabs(total) < 1e-12);
  CHECK_THROWS_AS(two_well_source(g, -1.0), config_error);
}

TEST_CASE("sampled five-spot rates are deterministic and in range") {
  const auto a = sample_five_spot_rates(99, 2e-4, 3e-4);
  const auto b = sample_five_spot_rates(99, 2e-4, 3e-4);
  const auto c = sample_five_spot_rates(100, 2e-4, 3e-4);
  CHECK(a == b);
  CHECK(a != c);
  for (double q : a) {
    CHECK(q >= 2e-4);
    CHECK(q < 3e-4);
  }
}

TEST_CASE("rate schedule sampling and lookup") {
  const RateSchedule s = sample_rate_schedule(4, 1000, 4, 0.5, 1.5);
  REQUIRE(s.breakpoints.size() == 4);
  REQUIRE(s.rates.size() == 5);
  for (std::size_t j = 0; j + 1 < s.breakpoints.size(); ++j)
    CHECK(s.breakpoints[j] < s.breakpoints[j + 1]);
  for (std::size_t b : s.breakpoints) {
    CHECK(b >= 2);
    CHECK(b <= 999);
  }
  for (double r : s.rates) {
    CHECK(r >= 0.5);
    CHECK(r < 1.5);
  }
  const RateSchedule s2 = sample_rate_schedule(4, 1000, 4, 0.5, 1.5);
  CHECK(s.breakpoints == s2.breakpoints);
  CHECK(s.rates == s2.rates);

  RateSchedule manual;
  manual.breakpoints = {3, 7};
  manual.rates = {10.0, 20.0, 30.0};
  CHECK(manual.rate_at(1) == 10.0);
  CHECK(manual.rate_at(2) == 10.0);
  CHECK(manual.rate_at(3) == 20.0);
  CHECK(manual.rate_at(6) == 20.0);
  CHECK(manual.rate_at(7) == 30.0);
  CHECK(manual.rate_at(500) == 30.0);

  CHECK_THROWS_AS(sample_rate_schedule(1, 10, 10, 0.0, 1.0), config_error);
  CHECK_THROWS_AS(sample_rate_schedule(1, 10, 9, 0.0, 1.0), config_error);
  CHECK_NOTHROW(sample_rate_schedule(1, 10, 8, 0.0, 1.0));
}

TEST_CASE("lognormal permeability synthesis") {
  const Grid g = build_grid(30, 30, 1.0, 1.0);

  const PermField flat = generate_lognormal_permeability(g, 1, 0.0, 3.0);
  for (double k : flat.kappa) CHECK(k == 1.0);

  const PermField a = generate_lognormal_permeability(g, 7, 0.8, 3.0);
  const PermField b = generate_lognormal_permeability(g, 7, 0.8, 3.0);
  const PermField c = generate_lognormal_permeability(g, 8, 0.8, 3.0);
  CHECK(a.kappa == b.kappa);
  CHECK(a.kappa != c.kappa);
  for (double k : a.kappa) CHECK(k > 0.0);

  // log kappa is rescaled to sample standard deviation sigma exactly.
  std::vector<double> logk(a.kappa.size());
  std::transform(a.kappa.begin(), a.kappa.end(), logk.begin(),
                 [](double k) { return std::log(k); });
  CHECK(pop_std(logk) == doctest::Approx(0.8).epsilon(1e-12));

  // Smoothing damps cell-to-cell increments relative to white noise.
  const PermField rough = generate_lognormal_permeability(g, 7, 0.8, 0.0);
  auto mean_abs_dx = [&](const PermField& p) {
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < g.ny; ++k)
      for (std::size_t h = 0; h + 1 < g.nx; ++h, ++cnt)
        acc += std::fabs(std::log(p.kappa[g.cell_id(k, h + 1)]) -
                         std::log(p.kappa[g.cell_id(k, h)]));
    return acc / static_cast<double>(cnt);
  };
  CHECK(mean_abs_dx(a) < 0.5 * mean_abs_dx(rough));

  CHECK_THROWS_AS(generate_lognormal_permeability(g, 1, -0.5, 3.0), config_error);
}

TEST_CASE("permeability binary round trip") {
  const Grid g = build_grid(8, 6, 1.0, 1.0);
  const PermField perm = generate_lognormal_permeability(g, 3, 1.0, 2.0);
  const std::string path = tmp_path("pml_test_perm.bin");
  write_permeability(path, g, perm);
  const PermField back = load_permeability(path, g);
  CHECK(back.kappa == perm.kappa);
  CHECK(back.provenance == "file:" + path);

  // Mismatched grid and truncation are both detected.
  CHECK_THROWS_AS(load_permeability(path, build_grid(6, 8, 1.0, 1.0)), io_error);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  CHECK_THROWS_AS(load_permeability(path, g), io_error);
  std::remove(path.c_str());

  PermField wrong = perm;
  wrong.kappa.pop_back();
  CHECK_THROWS_AS(write_permeability(path, g, wrong), inconsistency_error);
}

TEST_CASE("permeability text ingestion") {
  const Grid g = build_grid(3, 2, 1.0, 1.0);
  const std::string path = tmp_path("pml_test_perm.txt");
  {
    std::ofstream out(path);
    out << "# one value per line, comments allowed\n";
    out << "1.0\n2.0\n\n3.0\n  4.0\n5.0\n6.0\n";
  }
  const PermField perm = load_permeability(path, g);
  CHECK(perm.kappa == std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_permeability(tmp_path("pml_no_such_file.txt"), g), io_error);

  {
    std::ofstream out(path);
    out << "1.0\n2.0\n";
  }
  CHECK_THROWS_AS(load_permeability(path, g), io_error);  // wrong count
  {
    std::ofstream out(path);
    out << "1.0\n2.0\n-3.0\n4.0\n5.0\n6.0\n";
  }
  CHECK_THROWS_AS(load_permeability(path, g), domain_error);  // nonpositive entry
  std::remove(path.c_str());
}
