#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mi3d/errors.hpp"
#include "mi3d/ops.hpp"
#include "support/finite_diff.hpp"

using namespace mi3d;
using mi3d::testing::GradCheck;
using mi3d::testing::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("construction and invariants") {
  Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);

  Tensor bad = Tensor::from_values({2}, {1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("backward replays each op exactly once on a diamond graph") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor a = relu(x);
  Tensor b = add(a, a);  // both parents are the same node
  Tensor loss = sum(b);
  const std::size_t ops_run = loss.backward();
  CHECK(ops_run == 3);  // relu, add, sum
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("gradients of unused parameters stay exactly zero") {
  Tensor used = Tensor::from_values({2}, {1.0, -1.0}, true);
  Tensor unused = Tensor::from_values({3}, {5.0, 5.0, 5.0}, true);
  unused.zero_grad();
  Tensor loss = sum(relu(used));
  loss.backward();
  for (double g : unused.grad()) CHECK(g == 0.0);
}

}  // TEST_SUITE

TEST_SUITE("ops") {

TEST_CASE("linear identity and forced example") {
  // x=[[1,2]], W=I, b=0 -> [[1,2]]
  Tensor x = Tensor::from_values({1, 2}, {1, 2});
  Tensor out = linear(x, Tensor::identity(2), Tensor::zeros({2}));
  CHECK(out.at({0, 0}) == 1.0);
  CHECK(out.at({0, 1}) == 2.0);

  // x=[[1,0],[0,1]], W=[[2,0],[0,3]], b=[1,1] -> [[3,1],[1,4]]
  Tensor x2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor w = Tensor::from_values({2, 2}, {2, 0, 0, 3});
  Tensor b = Tensor::from_values({2}, {1, 1});
  Tensor out2 = linear(x2, w, b);
  CHECK(out2.at({0, 0}) == 3.0);
  CHECK(out2.at({0, 1}) == 1.0);
  CHECK(out2.at({1, 0}) == 1.0);
  CHECK(out2.at({1, 1}) == 4.0);
}

TEST_CASE("linear shape error names both shapes") {
  Tensor x = Tensor::from_values({1, 3}, {1, 2, 3});
  try {
    linear(x, Tensor::identity(2), Tensor::zeros({2}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("linear gradient matches finite differences on 3x4 input") {
  Rng rng(31);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  GradCheck{}.run({x, w, b}, [&]() { return sum(linear(x, w, b)); });
}

TEST_CASE("shared mlp equals identity map and commutes with permutation") {
  Rng rng(32);
  Tensor x = random_tensor({2, 5, 3}, rng, false);
  Tensor out = shared_pointwise_mlp(x, Tensor::identity(3), Tensor::zeros({3}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.values()[i] == x.values()[i]);

  // permute-then-apply == apply-then-permute
  Tensor w = random_tensor({3, 4}, rng, false);
  Tensor b = random_tensor({4}, rng, false);
  std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  std::vector<double> permuted(x.size());
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        permuted[(bi * 5 + i) * 3 + c] = x.values()[(bi * 5 + perm[i]) * 3 + c];
      }
    }
  }
  Tensor xp = Tensor::from_values({2, 5, 3}, std::move(permuted));
  Tensor a = shared_pointwise_mlp(xp, w, b);
  Tensor bres = shared_pointwise_mlp(x, w, b);
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(a.at({bi, i, c}) == bres.at({bi, perm[i], c}));
      }
    }
  }
}

TEST_CASE("shared mlp gradient check") {
  Rng rng(33);
  Tensor x = random_tensor({2, 4, 3}, rng);
  Tensor w = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({5}, rng);
  GradCheck{}.run({x, w, b}, [&]() { return sum(shared_pointwise_mlp(x, w, b)); });
}

TEST_CASE("relu and sigmoid values") {
  Tensor x = Tensor::from_values({3}, {-3.0, 0.0, 3.0});
  Tensor r = relu(x);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[2] == 3.0);
  Tensor s = sigmoid(Tensor::from_values({1}, {0.0}));
  CHECK(s.scalar_value() == 0.5);

  // clamp keeps outputs strictly inside (0,1)
  Tensor extreme = sigmoid(Tensor::from_values({2}, {-1000.0, 1000.0}));
  CHECK(extreme.values()[0] == 1e-12);
  CHECK(extreme.values()[1] == 1.0 - 1e-12);
}

TEST_CASE("sigmoid gradient at 0 is 0.25 and matches finite differences") {
  Tensor x = Tensor::scalar(0.0, true);
  Tensor s = sigmoid(x);
  s.backward();
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(34);
  Tensor y = random_tensor({6}, rng);
  GradCheck{}.run({y}, [&]() { return sum(sigmoid(y)); });
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  Rng rng(35);
  std::vector<double> vals(8);
  for (auto& v : vals) {
    v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < 0.05) v += 0.1;  // keep clear of the nondifferentiable point
  }
  Tensor x = Tensor::from_values({8}, std::move(vals), true);
  GradCheck{}.run({x}, [&]() { return sum(relu(x)); });
}

TEST_CASE("batch norm constant channel and exact-identity case") {
  // constant input -> zeros, then scaled by gamma and shifted by beta
  Tensor x = Tensor::full({4, 3}, 7.0);
  Tensor gamma = Tensor::from_values({3}, {2.0, 2.0, 2.0});
  Tensor beta = Tensor::from_values({3}, {0.5, 0.5, 0.5});
  RunningStats stats = RunningStats::init(3);
  Tensor out = batch_norm(x, gamma, beta, stats, Mode::kTrain);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

  // gamma=1, beta=0 on input whose biased variance is exactly 1-eps:
  // sqrt(var + eps) == 1, so the op reproduces its input bitwise-close.
  const double a = std::sqrt(1.0 - kBatchNormEps);
  Tensor x2 = Tensor::from_values({4, 1}, {a, -a, a, -a});
  RunningStats stats2 = RunningStats::init(1);
  Tensor out2 =
      batch_norm(x2, Tensor::full({1}, 1.0), Tensor::zeros({1}), stats2, Mode::kTrain);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(out2.values()[i] - x2.values()[i]) < 1e-9);
  }
}

TEST_CASE("batch norm updates running stats with momentum 0.9") {
  Tensor x = Tensor::from_values({2, 1}, {1.0, 3.0});  // mean 2, var 1
  RunningStats stats = RunningStats::init(1);
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor beta = Tensor::zeros({1});
  batch_norm(x, gamma, beta, stats, Mode::kTrain);
  CHECK(stats.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0).epsilon(1e-12));
  CHECK(stats.var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-12));
}

TEST_CASE("batch norm eval mode uses running statistics") {
  RunningStats stats = RunningStats::init(1);
  stats.mean[0] = 2.0;
  stats.var[0] = 4.0;
  Tensor x = Tensor::from_values({2, 1}, {2.0, 4.0});
  Tensor out = batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), stats, Mode::kEval);
  CHECK(out.values()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(out.values()[1] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batch norm degenerate batch error") {
  Tensor x = Tensor::full({1, 3}, 1.0);
  RunningStats stats = RunningStats::init(3);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, stats, Mode::kTrain), DegenerateBatchError);
}

TEST_CASE("batch norm gradient check on 4x8x3 input") {
  Rng rng(36);
  Tensor x = random_tensor({4, 8, 3}, rng);
  Tensor gamma = random_tensor({3}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({3}, rng);
  GradCheck{}.run({x, gamma, beta}, [&]() {
    RunningStats stats = RunningStats::init(3);  // fresh stats per evaluation
    return sum(batch_norm(x, gamma, beta, stats, Mode::kTrain));
  });
}

TEST_CASE("max pool single point and bitwise permutation invariance") {
  Tensor single = Tensor::from_values({1, 1, 3}, {4.0, -1.0, 0.5});
  Tensor pooled = max_pool_points(single);
  CHECK(pooled.values()[0] == 4.0);
  CHECK(pooled.values()[1] == -1.0);
  CHECK(pooled.values()[2] == 0.5);

  Rng rng(37);
  Tensor x = random_tensor({2, 7, 4}, rng, false);
  Tensor base = max_pool_points(x);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0u);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    std::vector<double> pv(x.size());
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
          pv[(b * 7 + i) * 4 + c] = x.values()[(b * 7 + perm[i]) * 4 + c];
        }
      }
    }
    Tensor pooled_perm = max_pool_points(Tensor::from_values({2, 7, 4}, std::move(pv)));
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(pooled_perm.values()[i] == base.values()[i]);  // bitwise
    }
  }
}

TEST_CASE("max pool gradient is a one-hot indicator of the first argmax") {
  Tensor x = Tensor::from_values({1, 3, 2}, {1.0, 5.0, 9.0, 5.0, 1.0, 5.0}, true);
  // channel 0: max 9 at point 1; channel 1: tie 5.0 at points 0 and 2 -> first wins
  Tensor loss = sum(max_pool_points(x));
  loss.backward();
  const std::vector<double> expected = {0, 1, 1, 0, 0, 0};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(x.grad()[i] == expected[i]);

  Rng rng(38);
  Tensor y = random_tensor({2, 5, 3}, rng);
  GradCheck{}.run({y}, [&]() { return sum(max_pool_points(y)); });
}

TEST_CASE("max pool empty cloud error") {
  CHECK_THROWS_AS(Tensor::zeros({1, 0, 3}), DimensionError);
}

TEST_CASE("dropout p=0 and eval mode are the identity") {
  Rng rng(39);
  Tensor x = random_tensor({4, 4}, rng, false);
  Rng drop_rng(1);
  Tensor same = dropout(x, 0.0, Mode::kTrain, drop_rng);
  CHECK(same.node().get() == x.node().get());  // strict identity, same node
  Tensor same2 = dropout(x, 0.7, Mode::kEval, drop_rng);
  CHECK(same2.node().get() == x.node().get());
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, drop_rng), ParameterError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::kTrain, drop_rng), ParameterError);
}

TEST_CASE("dropout empirical drop fraction over 1e5 elements") {
  Rng rng(40);
  Tensor x = Tensor::full({100000}, 1.0);
  Rng drop_rng(77);
  Tensor out = dropout(x, 0.4, Mode::kTrain, drop_rng);
  std::size_t dropped = 0;
  for (double v : out.values()) {
    if (v == 0.0) {
      ++dropped;
    } else {
      CHECK(v == doctest::Approx(1.0 / 0.6).epsilon(1e-12));  // inverted scaling
    }
  }
  CHECK(std::abs(static_cast<double>(dropped) / 100000.0 - 0.4) < 0.01);
}

TEST_CASE("dropout gradient with a frozen mask") {
  Rng rng(41);
  Tensor x = random_tensor({12}, rng);
  GradCheck{}.run({x}, [&]() {
    Rng drop_rng(5);  // same mask on every evaluation
    return sum(dropout(x, 0.3, Mode::kTrain, drop_rng));
  });
}

TEST_CASE("bce loss examples") {
  // p=0.5, y=1 -> ln 2
  Tensor p = Tensor::from_values({1}, {0.5});
  CHECK(bce_loss(p, {1}).scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // clamped-perfect prediction -> <= 1e-11
  Tensor perfect = Tensor::from_values({2}, {1.0 - 1e-12, 1e-12});
  CHECK(bce_loss(perfect, {1, 0}).scalar_value() <= 1e-11);

  CHECK_THROWS_AS(bce_loss(p, {1, 0}), DimensionError);
}

TEST_CASE("bce loss is non-negative and zero only at clamped-perfect predictions") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const double v = rng.uniform(-8.0, 8.0);
    Tensor p = sigmoid(Tensor::from_values({1}, {v}));
    const int y = rng.uniform() < 0.5 ? 0 : 1;
    const double loss = bce_loss(p, {y}).scalar_value();
    CHECK(loss >= 0.0);
    if (loss == 0.0) {
      FAIL_CHECK("exact zero should not occur away from the clamp");
    }
  }
}

TEST_CASE("bce gradient equals (p-y)/(B p (1-p)) and matches finite differences") {
  Rng rng(43);
  const std::size_t batch = 5;
  std::vector<double> pv(batch);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    pv[i] = rng.uniform(0.05, 0.95);
    labels[i] = rng.uniform() < 0.5 ? 0 : 1;
  }
  Tensor p = Tensor::from_values({batch}, pv, true);
  Tensor loss = bce_loss(p, labels);
  loss.backward();
  for (std::size_t i = 0; i < batch; ++i) {
    const double expected =
        (pv[i] - labels[i]) / (static_cast<double>(batch) * pv[i] * (1.0 - pv[i]));
    CHECK(p.grad()[i] == doctest::Approx(expected).epsilon(1e-10));
  }
  GradCheck{}.run({p}, [&]() { return bce_loss(p, labels); });
}

TEST_CASE("bmm, matmul, reshape, slice and concat gradients") {
  Rng rng(44);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor t = random_tensor({2, 4, 4}, rng);
  GradCheck{}.run({x, t}, [&]() { return sum(bmm(x, t)); });

  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  GradCheck{}.run({a, b}, [&]() { return sum(matmul(a, b)); });

  Tensor c = random_tensor({2, 3, 5}, rng);
  GradCheck{}.run({c}, [&]() { return sum(slice_channels(c, 1, 4)); });

  Tensor d = random_tensor({2, 3, 2}, rng);
  Tensor e = random_tensor({2, 3, 3}, rng);
  GradCheck{}.run({d, e}, [&]() { return sum(concat_channels(d, e)); });

  Tensor f = random_tensor({6}, rng);
  GradCheck{}.run({f}, [&]() { return sum(reshape(f, {2, 3})); });
}

TEST_CASE("bmm applies per-sample transforms") {
  Tensor x = Tensor::from_values({1, 2, 2}, {1, 0, 0, 1});
  Tensor t = Tensor::from_values({1, 2, 2}, {2, 0, 0, 3});
  Tensor out = bmm(x, t);
  CHECK(out.at({0, 0, 0}) == 2.0);
  CHECK(out.at({0, 1, 1}) == 3.0);
}

}  // TEST_SUITE
