#include <doctest.h>

#include <cmath>
#include <vector>

#include "nemo/errors.hpp"
#include "nemo/grid.hpp"
#include "nemo/random.hpp"
#include "oracles.hpp"

using namespace nemo;

namespace {
void check_weights(std::vector<double> t, std::vector<double> expected) {
  const Eigen::VectorXd w = build_weights(t);
  REQUIRE(w.size() == static_cast<Eigen::Index>(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(w[static_cast<Eigen::Index>(i)] == doctest::Approx(expected[i]).epsilon(1e-14));
}
}  // namespace

TEST_CASE("trapezoid weights on small grids") {
  check_weights({0, 0.25, 0.5, 0.75, 1}, {0.125, 0.25, 0.25, 0.25, 0.125});
  check_weights({0, 0.1, 0.4, 1.0}, {0.05, 0.2, 0.45, 0.3});
  check_weights({0, 1}, {0.5, 0.5});
}

TEST_CASE("weights reject bad grids") {
  CHECK_THROWS_AS(build_weights(std::vector<double>{0.0, 0.0, 1.0}), InvalidGrid);
  CHECK_THROWS_AS(build_weights(std::vector<double>{1.0, 0.5}), InvalidGrid);
  CHECK_THROWS_AS(build_weights(std::vector<double>{0.3}), InvalidGrid);
  CHECK_THROWS_AS(Grid(std::vector<double>{0.0, 0.5, 0.4}), InvalidGrid);
}

TEST_CASE("grid invariants hold on random grids") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = static_cast<Eigen::Index>(2 + rng.index(60));
    std::vector<double> t(static_cast<std::size_t>(m));
    double acc = rng.normal();
    for (auto& v : t) {
      acc += 0.01 + rng.uniform();
      v = acc;
    }
    Grid g(t);
    CHECK((g.weights().array() > 0.0).all());
    CHECK(std::abs(g.weights().sum() - g.length()) < 1e-12 * std::max(1.0, g.length()));
    const Eigen::VectorXd ref = oracle::trapezoid(g.points());
    CHECK((g.weights() - ref).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("inner products") {
  SUBCASE("constant integrand") {
    for (Eigen::Index m : {2, 7, 50}) {
      Grid g = Grid::uniform(0.0, 1.0, m);
      const Eigen::VectorXd one = Eigen::VectorXd::Ones(m);
      CHECK(inner_product(one, one, g) == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("linear integrand is exact") {
    Grid g = Grid::uniform(0.0, 1.0, 101);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(101);
    CHECK(std::abs(inner_product(g.points(), one, g) - 0.5) < 1e-14);
  }
  SUBCASE("sin and cos are orthogonal") {
    Grid g = Grid::uniform(0.0, 1.0, 201);
    const Eigen::VectorXd s = (2.0 * oracle::kPi * g.points().array()).sin();
    const Eigen::VectorXd c = (2.0 * oracle::kPi * g.points().array()).cos();
    const double exact = oracle::integrate([](double t) { return std::sin(2 * oracle::kPi * t) * std::cos(2 * oracle::kPi * t); }, 0.0, 1.0);
    CHECK(std::abs(exact) < 1e-10);
    CHECK(std::abs(inner_product(s, c, g) - exact) < 1e-4);
  }
  SUBCASE("length mismatch") {
    Grid g = Grid::uniform(0.0, 1.0, 5);
    CHECK_THROWS_AS(inner_product(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(5), g), DimensionError);
  }
}

TEST_CASE("symmetric and bilinear") {
  Rng rng(3);
  Grid g = Grid::uniform(-1.0, 2.0, 37);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd f = rng.normal_vector(37), h = rng.normal_vector(37), k = rng.normal_vector(37);
    const double a = rng.normal(), b = rng.normal();
    CHECK(inner_product(f, h, g) == inner_product(h, f, g));
    const double lhs = inner_product(a * f + b * h, k, g);
    const double rhs = a * inner_product(f, k, g) + b * inner_product(h, k, g);
    CHECK(std::abs(lhs - rhs) < 1e-12 * (1.0 + std::abs(rhs)));
  }
}

TEST_CASE("quadrature error scales as 1/m^2") {
  std::vector<double> c;
  for (Eigen::Index m : {10, 100, 1000}) {
    Grid g = Grid::uniform(0.0, 1.0, m);
    const Eigen::VectorXd sq = g.points().array().square();
    const double err = std::abs(g.weights().dot(sq) - 1.0 / 3.0);
    // trapezoid error for t^2 on a uniform grid is h^2 / 6 with h = 1/(m-1)
    CHECK(err == doctest::Approx(1.0 / (6.0 * (m - 1.0) * (m - 1.0))).epsilon(1e-6));
    c.push_back(err * static_cast<double>(m * m));
  }
  CHECK(c.back() / c.front() < 1.25);
  CHECK(c.back() / c.front() > 0.8);
}

TEST_CASE("merge grids") {
  SUBCASE("two subjects") {
    auto mg = merge_grids({{0.0, 1.0}, {0.5, 1.0}});
    CHECK(mg.grid.points() == Eigen::Vector3d(0.0, 0.5, 1.0));
    CHECK(mg.maps[0].indices() == std::vector<Eigen::Index>{0, 2});
    CHECK(mg.maps[1].indices() == std::vector<Eigen::Index>{1, 2});
  }
  SUBCASE("identity") {
    auto mg = merge_grids({{0.0, 0.5, 1.0}});
    CHECK(mg.maps[0].indices() == std::vector<Eigen::Index>{0, 1, 2});
  }
  SUBCASE("chain of overlaps") {
    auto mg = merge_grids({{0.0, 0.3}, {0.3, 0.9}, {0.9}});
    CHECK(mg.grid.points() == Eigen::Vector3d(0.0, 0.3, 0.9));
    CHECK(mg.maps[0].indices() == std::vector<Eigen::Index>{0, 1});
    CHECK(mg.maps[1].indices() == std::vector<Eigen::Index>{1, 2});
    CHECK(mg.maps[2].indices() == std::vector<Eigen::Index>{2});
  }
  SUBCASE("float noise below tolerance collapses") {
    auto mg = merge_grids({{0.0, 0.1 + 0.2}, {0.3, 1.0}});
    CHECK(mg.grid.size() == 3);
    CHECK(mg.maps[0].indices() == std::vector<Eigen::Index>{0, 1});
    CHECK(mg.maps[1].indices() == std::vector<Eigen::Index>{1, 2});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(merge_grids({}), EmptyDataset);
    CHECK_THROWS_AS(merge_grids({{}}), EmptyDataset);
    CHECK_THROWS_AS(merge_grids({{0.5, 0.2}}), InvalidGrid);
  }
}

TEST_CASE("merge then gather round-trips observed values") {
  Rng rng(5);
  std::vector<std::vector<double>> pts;
  std::vector<Eigen::VectorXd> vals;
  for (int i = 0; i < 30; ++i) {
    std::vector<double> t;
    for (int l = 0; l < 40; ++l)
      if (rng.uniform() < 0.4) t.push_back(l / 39.0);
    if (t.size() < 1) t.push_back(0.5);
    Eigen::VectorXd v = rng.normal_vector(static_cast<Eigen::Index>(t.size()));
    pts.push_back(t);
    vals.push_back(v);
  }
  auto mg = merge_grids(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Eigen::VectorXd common = Eigen::VectorXd::Zero(mg.grid.size());
    mg.maps[i].scatter_add(vals[i], common);
    CHECK(mg.maps[i].gather(common) == vals[i]);
    for (Eigen::Index j = 0; j < mg.maps[i].size(); ++j)
      CHECK(std::abs(mg.grid.points()[mg.maps[i][j]] - pts[i][static_cast<std::size_t>(j)]) <= kGridMergeTolerance);
  }
}

TEST_CASE("index map validation") {
  CHECK_THROWS_AS(SubjectIndexMap({0, 0}, 3), InvalidGrid);
  CHECK_THROWS_AS(SubjectIndexMap({2, 1}, 3), InvalidGrid);
  CHECK_THROWS_AS(SubjectIndexMap({0, 3}, 3), InvalidGrid);
  CHECK_THROWS_AS(SubjectIndexMap({-1}, 3), InvalidGrid);
  CHECK_NOTHROW(SubjectIndexMap({0, 2}, 3));
}
