#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "teq/objectives.hpp"

using namespace teq;
using Md = nn::Matrix<double>;

namespace {

Md random_codes(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Md m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<int> paired_ids(int groups, Rng& rng) {
  std::vector<int> ids;
  for (int g = 0; g < groups; ++g) ids.insert(ids.end(), {g, g});
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

}  // namespace

TEST_CASE("similarity examples and bounds") {
  const std::vector<double> x{1.0, 2.0, -0.5}, y{0.0, 0.0, 1.0};
  CHECK(similarity(x, x) == doctest::Approx(22026.4658).epsilon(1e-9));
  const std::vector<double> a{1.0, 0.0}, b{0.0, 3.0};
  CHECK(similarity(a, b) == doctest::Approx(1.0));
  const std::vector<double> neg{-1.0, -2.0, 0.5};
  CHECK(similarity(x, neg) == doctest::Approx(4.5400e-5).epsilon(1e-4));
  CHECK_THROWS_WITH(similarity(x, std::vector<double>{0.0, 0.0, 0.0}), "degenerate code");

  Rng rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0), s(0.01, 50.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(5), q(5);
    for (auto& v : p) v = u(rng);
    for (auto& v : q) v = u(rng);
    const double sim = similarity(p, q);
    REQUIRE(sim >= std::exp(-10.0) * (1 - 1e-12));
    REQUIRE(sim <= std::exp(10.0) * (1 + 1e-12));
    const double alpha = s(rng), beta = s(rng);
    std::vector<double> ps(p), qs(q);
    for (auto& v : ps) v *= alpha;
    for (auto& v : qs) v *= beta;
    REQUIRE(std::abs(similarity(ps, qs) - sim) <= 1e-6 * sim);
  }
}

TEST_CASE("uniform similarity gives ln(N+1)") {
  for (int groups = 2; groups <= 9; ++groups) {
    Md codes = Md::Ones(2 * groups, 6);
    std::vector<int> ids;
    for (int g = 0; g < groups; ++g) ids.insert(ids.end(), {g, g});
    const auto eq = equivariance_loss<double>(codes, ids);
    const auto in = instance_loss<double>(codes, ids);
    CHECK(eq.loss == doctest::Approx(std::log(groups)).epsilon(1e-12));
    CHECK(in.loss == doctest::Approx(std::log(groups)).epsilon(1e-12));
  }
  Md four = Md::Ones(8, 3);
  std::vector<int> ids{0, 0, 1, 1, 2, 2, 3, 3};
  CHECK(equivariance_loss<double>(four, ids).loss == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("single orthogonal negative") {
  Md codes(4, 2);
  codes << 1, 0, 1, 0, 0, 1, 0, 1;
  std::vector<int> ids{0, 0, 1, 1};
  const double expect = std::log1p(std::exp(-10.0));
  CHECK(equivariance_loss<double>(codes, ids).loss == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(4.5399e-5).epsilon(1e-4));
}

TEST_CASE("losses match the scalar oracle on random 8-group batches") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ids = paired_ids(8, rng);
    const Md codes = random_codes(rng, 16, 12);
    const double expect = oracle::paired_nce(codes, ids, 0.1);
    REQUIRE(std::abs(equivariance_loss<double>(codes, ids).loss - expect) <= 1e-9);
    REQUIRE(std::abs(instance_loss<double>(codes, ids).loss - expect) <= 1e-9);
  }
  // two instances, hand-set codes
  Md hand(4, 3);
  hand << 1, 2, 0, 0.5, 1.5, 0.2, -1, 0, 1, -0.7, 0.3, 1.1;
  const std::vector<int> ids{7, 3, 7, 3};
  CHECK(std::abs(instance_loss<double>(hand, ids).loss - oracle::paired_nce(hand, ids, 0.1)) <= 1e-9);
}

TEST_CASE("NCE losses are invariant to relabelling and batch permutation") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int groups = 6;
    const auto ids = paired_ids(groups, rng);
    const Md codes = random_codes(rng, 2 * groups, 8);
    const double base = equivariance_loss<double>(codes, ids).loss;

    std::vector<int> relabel(ids);
    for (int& id : relabel) id = 1000 - 17 * id;
    REQUIRE(std::abs(equivariance_loss<double>(codes, relabel).loss - base) <= 1e-9);

    // permute rows while keeping the order of the two members of each group
    std::vector<int> group_order(groups);
    std::iota(group_order.begin(), group_order.end(), 0);
    std::shuffle(group_order.begin(), group_order.end(), rng);
    std::vector<int> perm(codes.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // stable within groups: sort each group's rows back into original relative order
    for (int g = 0; g < groups; ++g) {
      std::vector<int> pos, rows;
      for (std::size_t k = 0; k < perm.size(); ++k)
        if (ids[perm[k]] == g) {
          pos.push_back(static_cast<int>(k));
          rows.push_back(perm[k]);
        }
      std::sort(rows.begin(), rows.end());
      for (std::size_t k = 0; k < pos.size(); ++k) perm[pos[k]] = rows[k];
    }
    Md shuffled(codes.rows(), codes.cols());
    std::vector<int> sids(ids.size());
    for (std::size_t k = 0; k < perm.size(); ++k) {
      shuffled.row(k) = codes.row(perm[k]);
      sids[k] = ids[perm[k]];
    }
    REQUIRE(std::abs(instance_loss<double>(shuffled, sids).loss - base) <= 1e-9);
  }
}

TEST_CASE("malformed batch plans are rejected") {
  Md codes = Md::Ones(6, 3);
  CHECK_THROWS_WITH(equivariance_loss<double>(codes, std::vector<int>{0, 0, 0, 1, 1, 1}), "malformed batch plan");
  CHECK_THROWS_WITH(equivariance_loss<double>(codes, std::vector<int>{0, 0, 1, 1, 2, 3}), "malformed batch plan");
  Md two = Md::Ones(2, 3);
  CHECK_THROWS_WITH(instance_loss<double>(two, std::vector<int>{0, 0}), "malformed batch plan");
  Md zero = Md::Zero(4, 3);
  CHECK_THROWS_WITH(instance_loss<double>(zero, std::vector<int>{0, 0, 1, 1}), "degenerate code");
}

TEST_CASE("NCE gradient matches finite differences with frozen partners") {
  Rng rng(8);
  const auto ids = paired_ids(4, rng);
  const Md codes = random_codes(rng, 8, 5);
  const Md frozen = codes;
  const auto res = equivariance_loss<double>(codes, ids, 0.1, &frozen);
  const double h = 1e-6;
  Md x = codes;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double up = equivariance_loss<double>(x, ids, 0.1, &frozen).loss;
    x.data()[i] = v - h;
    const double down = equivariance_loss<double>(x, ids, 0.1, &frozen).loss;
    x.data()[i] = v;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - res.grad.data()[i]) / std::max(1e-8, std::abs(fd) + std::abs(res.grad.data()[i])));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("stop-gradient: detached arguments receive exactly zero gradient") {
  Rng rng(13);
  const auto ids = paired_ids(5, rng);
  const Md codes = random_codes(rng, 10, 6);
  const auto base = instance_loss<double>(codes, ids, 0.1, &codes);
  for (int r = 0; r < codes.rows(); ++r) {
    // changing row r only where it is used as a detached partner must not
    // change the gradient that reaches row r
    Md targets = codes;
    targets.row(r) = random_codes(rng, 1, 6);
    const auto moved = instance_loss<double>(codes, ids, 0.1, &targets);
    REQUIRE(moved.loss != base.loss);
    for (int k = 0; k < codes.cols(); ++k) REQUIRE(moved.grad(r, k) == base.grad(r, k));
  }
  // with targets frozen, the loss depends on a partner row only through its
  // own anchor term; a row's gradient is unchanged when other rows move
  const Md frozen = codes;
  Md shifted = codes;
  shifted.row(0) *= 3.0;  // scale leaves its own cosine terms unchanged
  const auto s = equivariance_loss<double>(shifted, ids, 0.1, &frozen);
  for (int r = 1; r < codes.rows(); ++r)
    for (int k = 0; k < codes.cols(); ++k) REQUIRE(s.grad(r, k) == base.grad(r, k));
}

TEST_CASE("making a positive pair more parallel lowers the loss") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<int> ids{0, 0, 1, 1, 2, 2};
    Md codes = random_codes(rng, 6, 4);
    const double before = equivariance_loss<double>(codes, ids).loss;
    // move row 1 halfway towards row 0
    Md closer = codes;
    closer.row(1) = 0.5 * codes.row(1) / codes.row(1).norm() + 0.5 * codes.row(0) / codes.row(0).norm();
    if (closer.row(1).norm() < 1e-6) continue;
    // keep the other pairs fixed: only anchors 0 and 1 see the change in their positive,
    // but row 1 also acts as a negative for groups 1 and 2, so compare the positive terms only
    std::vector<int> pair_only{0, 0, 1, 1};
    Md sub_before(4, 4), sub_after(4, 4);
    sub_before << codes.row(0), codes.row(1), codes.row(2), codes.row(3);
    sub_after << closer.row(0), closer.row(1), closer.row(2), closer.row(3);
    const double cos_before = codes.row(0).dot(codes.row(1)) / (codes.row(0).norm() * codes.row(1).norm());
    const double cos_after = closer.row(0).dot(closer.row(1)) / (closer.row(0).norm() * closer.row(1).norm());
    REQUIRE(cos_after >= cos_before - 1e-12);
    // anchor-0 term only depends on row 1 as its positive
    auto anchor0 = [&](const Md& c) {
      auto cs = [&](int a, int b) { return c.row(a).dot(c.row(b)) / (c.row(a).norm() * c.row(b).norm()); };
      const double pos = std::exp(cs(0, 1) / 0.1);
      return -std::log(pos / (pos + std::exp(cs(0, 3) / 0.1) + std::exp(cs(0, 5) / 0.1)));
    };
    REQUIRE(anchor0(closer) <= anchor0(codes) + 1e-12);
    (void)before;
  }
}

TEST_CASE("cross-entropy examples") {
  Md uniform = Md::Zero(3, 4);
  const std::vector<int> labels{0, 1, 3};
  CHECK(cross_entropy<double>(uniform, labels).loss == doctest::Approx(std::log(4.0)));
  Md saturated = Md::Constant(3, 4, -50.0);
  for (int r = 0; r < 3; ++r) saturated(r, labels[r]) = 50.0;
  CHECK(cross_entropy<double>(saturated, labels).loss < 1e-12);
  CHECK_THROWS_WITH(cross_entropy<double>(uniform, std::vector<int>{0, 4, 1}), "label out of range");
  CHECK_THROWS_WITH(cross_entropy<double>(uniform, std::vector<int>{0, -1, 1}), "label out of range");
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(5);
  Md logits = random_codes(rng, 5, 3);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  const auto res = cross_entropy<double>(logits, labels);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double v = logits.data()[i];
    logits.data()[i] = v + h;
    const double up = cross_entropy<double>(logits, labels).loss;
    logits.data()[i] = v - h;
    const double down = cross_entropy<double>(logits, labels).loss;
    logits.data()[i] = v;
    const double fd = (up - down) / (2 * h);
    REQUIRE(std::abs(fd - res.grad.data()[i]) <= 1e-4 * std::max(1e-8, std::abs(fd) + std::abs(res.grad.data()[i])));
  }
}

TEST_CASE("disabled auxiliary heads contribute nothing") {
  Rng rng(2);
  const Md s = random_codes(rng, 4, 4), d = random_codes(rng, 4, 2), o = random_codes(rng, 2, 3);
  const std::vector<int> ls{0, 1, 2, 3}, ld{0, 1, 1, 0}, lo{2, 0};
  AuxTask<double> speed{true, &s, ls}, dir{false, &d, ld}, ov{false, &o, lo};
  const auto r = aux_losses(speed, dir, ov);
  CHECK(r.speed.loss > 0.0);
  CHECK(r.direction.loss == 0.0);
  CHECK(r.overlap.loss == 0.0);
  CHECK(r.direction.grad.isZero(0.0));
  CHECK(r.overlap.grad.rows() == 2);
  CHECK(r.overlap.grad.isZero(0.0));
}

TEST_CASE("total_loss weighting") {
  LossBreakdown c{0.7, 1.3, 0.2, 0.5, 0.9, 0.0};
  LossWeights only_equi{1, 0, 0, 0, 0};
  CHECK(total_loss(only_equi, c).total == 0.7);
  LossWeights none{0, 0, 0, 0, 0};
  CHECK(total_loss(none, c).total == 0.0);
  const auto all = total_loss(LossWeights{}, c);
  CHECK(std::abs(all.total - (0.7 + 1.3 + 0.2 + 0.5 + 0.9)) <= 1e-9);
  CHECK(all.equi == 0.7);
}

TEST_CASE("non-finite codes give a non-finite loss rather than an exception") {
  Md codes = Md::Ones(4, 3);
  codes(2, 1) = std::numeric_limits<double>::quiet_NaN();
  const std::vector<int> ids{0, 0, 1, 1};
  CHECK(std::isnan(instance_loss<double>(codes, ids).loss));
  CHECK(std::isnan(equivariance_loss<double>(Md::Ones(4, 3), ids, 0.1, &codes).loss));
}
