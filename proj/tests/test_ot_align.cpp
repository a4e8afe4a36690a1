#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mmalign/ot_align.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace mmalign;

TEST_CASE("band bookkeeping") {
  Mask m = band_mask(4, 1);
  CHECK(m[0] == 0);  // row 0, column -1
  CHECK(m[1] == 1);
  CHECK(m[3 * 3 + 2] == 0);  // row 3, column 4
  for (Index l = 1; l <= 12; ++l) {
    for (Index w = 0; w < l + 2; ++w) {
      Mask mask = band_mask(l, w);
      Index count = 0;
      for (auto f : mask) count += f;
      CHECK(count == valid_slot_count(l, w));
    }
  }
  CHECK(valid_slot_count(5, 0) == 5);
  CHECK(valid_slot_count(5, 4) == 25);
}

TEST_CASE("build_cost closed forms") {
  Rng rng(1);
  Matrix z = fixture::gaussian(5, 3, rng);
  BandedCost same = build_cost(z, z, 2);
  for (Index i = 0; i < 5; ++i) CHECK(std::abs(same.band(i, 2)) <= 1e-15);

  Matrix a = Matrix::Zero(4, 4), b = Matrix::Zero(4, 4);
  a.col(0).setOnes();
  a.col(1).setConstant(0.5);
  b.col(2).setOnes();
  b.col(3).setConstant(-2.0);
  BandedCost ortho = build_cost(a, b, 1);
  for (Index i = 0; i < 4; ++i)
    for (Index k = 0; k < 3; ++k)
      if (ortho.is_valid(i, k)) CHECK(ortho.band(i, k) == doctest::Approx(1.0).epsilon(1e-15));

  Matrix v = Matrix::Ones(3, 2);
  BandedCost anti = build_cost(v, -v, 2);
  for (Index i = 0; i < 3; ++i)
    for (Index k = 0; k < 5; ++k)
      if (anti.is_valid(i, k)) CHECK(anti.band(i, k) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("build_cost rejects zero-norm vectors and bad shapes") {
  Matrix z = Matrix::Ones(3, 2);
  Matrix zero = z;
  zero.row(1).setZero();
  CHECK_THROWS_AS(build_cost(z, zero, 1), DegenerateError);
  CHECK_THROWS_AS(build_cost(zero, z, 1), DegenerateError);
  CHECK_THROWS_AS(build_cost(z, Matrix::Ones(4, 2), 1), DimensionError);
}

TEST_CASE("sinkhorn forced and symmetric cases") {
  BandedCost diag;
  diag.length = 2;
  diag.window = 0;
  diag.valid = band_mask(2, 0);
  diag.band = Matrix(2, 1);
  diag.band << 0.3, 1.7;
  auto r = sinkhorn(diag, 0.1);
  CHECK(r.converged);
  Matrix dense = r.plan.dense();
  CHECK(dense(0, 0) == doctest::Approx(1.0));
  CHECK(dense(1, 1) == doctest::Approx(1.0));
  CHECK(dense(0, 1) == 0.0);
  CHECK(dense(1, 0) == 0.0);

  BandedCost flat;
  flat.length = 2;
  flat.window = 1;
  flat.valid = band_mask(2, 1);
  flat.band = Matrix::Constant(2, 3, 0.8);
  auto s = sinkhorn(flat, 0.2);
  Matrix d = s.plan.dense();
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(d(i, j) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("sinkhorn matches the IPF oracle on l=3, W=1") {
  Rng rng(2);
  BandedCost cost = fixture::random_cost(3, 1, rng);
  auto ref = oracle::ipf(oracle::dense_cost(cost), 0.1);
  Matrix got = sinkhorn(cost, 0.1).plan.dense();
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(got(i, j) - static_cast<double>(ref[i][j])) <= 1e-6);
}

TEST_CASE("sinkhorn checkpoints never increase the violation") {
  Rng rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    const Index l = fixture::uniform_index(rng, 8, 64);
    const Index w = fixture::uniform_index(rng, 0, 4);
    SinkhornOptions opt;
    opt.tol = 1e-13;  // force a long run
    opt.max_iter = 200;
    auto r = sinkhorn(fixture::random_cost(l, w, rng), uniform(rng, 0.05, 1.0), opt);
    for (std::size_t k = 1; k < r.checkpoints.size(); ++k) {
      CHECK(r.checkpoints[k] <= r.checkpoints[k - 1] + 1e-12);
    }
  }
}

TEST_CASE("narrow bands on long sequences converge within the default budget") {
  // tridiagonal kernels with tiny off-band mass used to stall at violation ~0.67
  Rng rng(12);
  for (int rep = 0; rep < 300; ++rep) {
    const Index l = fixture::uniform_index(rng, 32, 64);
    const Index w = fixture::uniform_index(rng, 1, 2);
    const BandedCost cost = fixture::random_cost(l, w, rng);
    const double mu = uniform(rng, 0.05, 0.3);
    const auto r = sinkhorn(cost, mu);
    CHECK(r.converged);
    CHECK(r.violation <= 1e-6);
  }
}

TEST_CASE("plain sinkhorn reaches the same fixed point as the accelerated one") {
  Rng rng(4);
  BandedCost cost = fixture::random_cost(12, 3, rng);
  SinkhornOptions plain;
  plain.newton_acceleration = false;
  plain.max_iter = 20000;
  plain.tol = 1e-10;
  SinkhornOptions fast;
  fast.tol = 1e-10;
  auto a = sinkhorn(cost, 0.3, plain);
  auto b = sinkhorn(cost, 0.3, fast);
  CHECK(a.converged);
  CHECK(b.converged);
  CHECK(b.iterations <= a.iterations);
  CHECK((a.plan.band - b.plan.band).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("band rows of the plan sum to one") {
  Rng rng(5);
  auto r = sinkhorn(fixture::random_cost(20, 4, rng), 0.1);
  CHECK((r.plan.row_sums().array() - 1.0).abs().maxCoeff() <= 1e-6);
  CHECK(r.plan.band.minCoeff() >= 0.0);
}

TEST_CASE("kernel underflow is a conditioning error unless retried in the log domain") {
  BandedCost cost;
  cost.length = 3;
  cost.window = 1;
  cost.valid = band_mask(3, 1);
  cost.band = Matrix::Constant(3, 3, 2.0);
  cost.band(1, 1) = 0.0;
  CHECK_THROWS_AS(sinkhorn(cost, 1e-3), ConditioningError);
  SinkhornOptions opt;
  opt.log_domain_retry = true;
  auto r = sinkhorn(cost, 1e-3, opt);
  CHECK(r.log_domain);
  CHECK(r.converged);
  CHECK(r.violation <= 1e-6);
}

TEST_CASE("sinkhorn argument errors") {
  Rng rng(6);
  BandedCost cost = fixture::random_cost(4, 1, rng);
  CHECK_THROWS_AS(sinkhorn(cost, 0.0), ConfigError);
  SinkhornOptions opt;
  opt.tol = 0.0;
  CHECK_THROWS_AS(sinkhorn(cost, 0.1, opt), ConfigError);
}

TEST_CASE("transport_cost closed forms") {
  BandedCost zero;
  zero.length = 4;
  zero.window = 1;
  zero.valid = band_mask(4, 1);
  zero.band = Matrix::Constant(4, 3, 0.7);
  zero.band.col(1).setZero();
  AlignmentPlan identity{4, 1, Matrix::Zero(4, 3)};
  identity.band.col(1).setOnes();
  CHECK(transport_cost(identity, zero) == 0.0);

  BandedCost flat;
  flat.length = 2;
  flat.window = 1;
  flat.valid = band_mask(2, 1);
  flat.band = Matrix::Constant(2, 3, 0.4);
  AlignmentPlan uniform{2, 1, Matrix::Constant(2, 3, 0.5)};
  uniform.band(0, 0) = 0.0;
  uniform.band(1, 2) = 0.0;
  CHECK(transport_cost(uniform, flat) == doctest::Approx(2 * 0.4));

  AlignmentPlan wrong{3, 1, Matrix::Zero(3, 3)};
  CHECK_THROWS_AS(transport_cost(wrong, flat), DimensionError);
}

TEST_CASE("hungarian oracle agrees with brute force") {
  Rng rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    const Index l = fixture::uniform_index(rng, 2, 7);
    auto dense = oracle::dense_cost(fixture::random_cost(l, fixture::uniform_index(rng, 0, l - 1), rng));
    CHECK(oracle::hungarian(dense) == doctest::Approx(oracle::brute_force_assignment(dense)));
  }
}

TEST_CASE("small mu approaches the assignment optimum from above") {
  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    BandedCost cost = fixture::random_cost(8, 3, rng);
    SinkhornOptions opt;
    opt.log_domain_retry = true;
    opt.max_iter = 5000;
    auto r = sinkhorn(cost, 0.01, opt);
    const double opt_cost = oracle::hungarian(oracle::dense_cost(cost));
    const double got = transport_cost(r.plan, cost);
    CHECK(got >= opt_cost - 1e-6);
    CHECK(got <= 1.02 * opt_cost);
  }
}

TEST_CASE("alignment dump round trip omits out-of-band entries") {
  Rng rng(9);
  auto r = sinkhorn(fixture::random_cost(6, 2, rng), 0.2);
  std::stringstream ss;
  write_alignment_dump(ss, r.plan);
  std::string first;
  std::getline(ss, first);
  CHECK(first == "6 2");
  std::string row0;
  std::getline(ss, row0);
  CHECK(row0.rfind("0.000000000 0.000000000 ", 0) == 0);
  ss.seekg(0);
  AlignmentPlan back = read_alignment_dump(ss);
  CHECK((back.band - r.plan.band).cwiseAbs().maxCoeff() <= 5e-10);

  std::istringstream bad("3 1\n0 0 0\n");
  CHECK_THROWS_AS(read_alignment_dump(bad), DataError);
}

TEST_CASE("band heat peaks at the shift slot") {
  // noise-free copy shifted by 2 along a random walk
  Rng rng(10);
  std::vector<AlignmentPlan> plans;
  for (int rep = 0; rep < 10; ++rep) {
    const Index l = 24, d = 6;
    Matrix walk = fixture::gaussian(l + 2, d, rng);
    for (Index t = 1; t < l + 2; ++t)
      for (Index j = 0; j < d; ++j) walk(t, j) = 0.6 * walk(t - 1, j) + standard_normal(rng);
    Matrix x1 = walk.bottomRows(l), x2 = walk.topRows(l);  // x2_t = x1_{t-2}
    plans.push_back(sinkhorn(build_cost(x1, x2, 4), 0.3).plan);
  }
  Vector heat = band_heat(plans);
  Index peak = 0;
  heat.maxCoeff(&peak);
  CHECK(peak == 4 + 2);

  // plans shorter than the threshold drop out
  std::vector<AlignmentPlan> mixed = plans;
  AlignmentPlan flat{6, 4, Matrix::Zero(6, 9)};
  flat.band.col(0).setConstant(100.0);
  mixed.push_back(flat);
  CHECK((band_heat(mixed, 10) - heat).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK_THROWS_AS(band_heat({}), DataError);
  AlignmentPlan other{24, 3, Matrix::Zero(24, 7)};
  mixed.push_back(other);
  CHECK_THROWS_AS(band_heat(mixed), DimensionError);
}
