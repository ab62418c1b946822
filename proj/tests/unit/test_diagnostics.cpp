#include <doctest.h>

#include <cmath>
#include <random>

#include "ndlc/diagnostics.hpp"
#include "ndlc/error.hpp"
#include "ndlc/io.hpp"

using namespace ndlc;

namespace {

Vector normal_stream(std::uint64_t seed, int n) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  Vector v(n);
  for (int k = 0; k < n; ++k) v[k] = z(gen);
  return v;
}

PosteriorDraws draws_from(const std::vector<Vector>& chains, const std::string& name) {
  PosteriorDraws d;
  d.names = {name};
  for (const Vector& c : chains) {
    d.chains.push_back(Matrix(c));
    std::vector<int> its(c.size());
    for (int k = 0; k < c.size(); ++k) its[k] = k + 1;
    d.iterations.push_back(its);
  }
  return d;
}

// Split-chain reference written from the textbook definition.
double reference_rhat(const std::vector<Vector>& chains) {
  std::vector<std::vector<double>> halves;
  for (const Vector& c : chains) {
    const int n = static_cast<int>(c.size()) / 2;
    halves.emplace_back(c.data(), c.data() + n);
    halves.emplace_back(c.data() + c.size() - n, c.data() + c.size());
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves[0].size());
  std::vector<double> means;
  double grand = 0.0;
  for (const auto& h : halves) {
    double s = 0.0;
    for (double v : h) s += v;
    means.push_back(s / n);
    grand += s / n / m;
  }
  double B = 0.0, W = 0.0;
  for (std::size_t k = 0; k < halves.size(); ++k) {
    B += (means[k] - grand) * (means[k] - grand) * n / (m - 1);
    double ss = 0.0;
    for (double v : halves[k]) ss += (v - means[k]) * (v - means[k]);
    W += ss / (n - 1) / m;
  }
  const double var_plus = (n - 1) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

}  // namespace

TEST_CASE("rhat") {
  SUBCASE("iid normal chains") {
    const std::vector<Vector> chains = {normal_stream(1, 10000), normal_stream(2, 10000), normal_stream(3, 10000)};
    const auto r = rhat(chains);
    REQUIRE(r.has_value());
    CHECK(*r >= 0.99);
    CHECK(*r <= 1.02);
    CHECK(*r == doctest::Approx(reference_rhat(chains)).epsilon(1e-12));
  }
  SUBCASE("shifted chains") {
    Vector a = normal_stream(4, 500), b = normal_stream(5, 500);
    b.array() += 3.0;
    const auto r = rhat({a, b});
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(reference_rhat({a, b})).epsilon(1e-12));
    CHECK(*r > 1.5);
  }
  SUBCASE("disjoint constants") {
    const auto r = rhat({Vector::Constant(50, 1.0), Vector::Constant(50, 2.0)});
    REQUIRE(r.has_value());
    CHECK(*r > 1.5);
  }
  SUBCASE("single constant value is not applicable") {
    CHECK_FALSE(rhat({Vector::Constant(50, 0.3), Vector::Constant(50, 0.3)}).has_value());
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(rhat({normal_stream(1, 100)}), SpecError);
    CHECK_THROWS_AS(rhat({normal_stream(1, 9), normal_stream(2, 9)}), SpecError);
  }
}

TEST_CASE("type 7 quantiles") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({5}, 0.9) == 5.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.0) == 1.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 1.0) == 5.0);
  CHECK(quantile({0, 10}, 0.975) == doctest::Approx(9.75));
}

TEST_CASE("summary table") {
  SUBCASE("constant draws") {
    const auto rows = summarize(draws_from({Vector::Constant(20, 0.7), Vector::Constant(20, 0.7)}, "x"));
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean == 0.7);
    CHECK(rows[0].sd == 0.0);
    CHECK(rows[0].q025 == 0.7);
    CHECK(rows[0].q975 == 0.7);
    CHECK_FALSE(rows[0].rhat.has_value());
  }
  SUBCASE("normal quantiles") {
    const auto rows = summarize(draws_from({normal_stream(7, 50000), normal_stream(8, 50000)}, "z"));
    CHECK(std::abs(rows[0].q025 + 1.96) < 0.03);
    CHECK(std::abs(rows[0].q975 - 1.96) < 0.03);
    CHECK(std::abs(rows[0].mean) < 0.02);
    CHECK(std::abs(rows[0].sd - 1.0) < 0.02);
  }
  SUBCASE("column layout") {
    const auto rows = summarize(draws_from({normal_stream(1, 20), normal_stream(2, 20)}, "a"));
    const std::string csv = summary_to_csv(rows);
    CHECK(csv.substr(0, csv.find('\n')) == "parameter,Mean,SD,2.5%,97.5%,Rhat");
    CHECK(max_rhat(rows).has_value());
  }
}
