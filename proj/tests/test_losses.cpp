#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "okdd/gradcheck.hpp"
#include "okdd/ops.hpp"
#include "okdd/rng.hpp"
#include "okdd/tensor.hpp"

using okdd::Tensor;

namespace {

// direct evaluation of the temperature softmax in extended precision
std::vector<double> softmax_oracle(const std::vector<double>& logits, double T) {
  std::vector<long double> e(logits.size());
  long double denom = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(logits[i]) / T);
    denom += e[i];
  }
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(e[i] / denom);
  return out;
}

std::vector<double> random_prob_row(okdd::Rng& rng, int classes) {
  std::vector<double> p(classes);
  double s = 0.0;
  for (double& v : p) {
    v = rng.uniform(0.05, 1.0);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("softmax basics") {
  SECTION("symmetric logits give the uniform distribution") {
    Tensor q = okdd::softmax(Tensor::of({1, 3}, {0, 0, 0}), 3.0);
    for (double v : q.values()) REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
  }
  SECTION("infinite-temperature limit flattens") {
    Tensor q = okdd::softmax(Tensor::of({1, 2}, {5, -5}), 1e6);
    REQUIRE(q.values()[0] == Catch::Approx(0.5).margin(1e-5));
    REQUIRE(q.values()[1] == Catch::Approx(0.5).margin(1e-5));
  }
  SECTION("matches direct evaluation at T=1") {
    std::vector<double> logits = {1, 2, 3};
    Tensor q = okdd::softmax(Tensor::of({1, 3}, logits), 1.0);
    auto expect = softmax_oracle(logits, 1.0);
    for (int j = 0; j < 3; ++j) REQUIRE(q.values()[j] == Catch::Approx(expect[j]).margin(1e-15));
  }
  SECTION("stabilized against large logits") {
    Tensor q = okdd::softmax(Tensor::of({1, 2}, {700, -700}), 1.0);
    REQUIRE(std::isfinite(q.values()[0]));
    REQUIRE(q.values()[0] == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("rejects bad inputs") {
    REQUIRE_THROWS_AS(okdd::softmax(Tensor::of({1, 2}, {1, 2}), 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(okdd::softmax(Tensor::of({1, 2}, {1, 2}), -1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(
        okdd::softmax(Tensor::of({1, 2}, {std::numeric_limits<double>::infinity(), 0}), 1.0),
        std::invalid_argument);
  }
}

TEST_CASE("softmax rows sum to one for T in {1, 3, 20}") {
  okdd::Rng rng(11);
  for (double T : {1.0, 3.0, 20.0}) {
    std::vector<double> logits(6 * 10);
    for (double& v : logits) v = rng.uniform(-30, 30);
    Tensor q = okdd::softmax(Tensor::of({6, 10}, logits), T);
    for (int i = 0; i < 6; ++i) {
      double s = 0.0;
      for (int j = 0; j < 10; ++j) s += q.at({i, j});
      REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("raising the temperature weakly flattens the maximum") {
  okdd::Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(8);
    for (double& v : logits) v = rng.uniform(-5, 5);
    Tensor x = Tensor::of({1, 8}, logits);
    double prev_max = 2.0;
    for (double T : {1.0, 2.0, 3.0, 10.0, 20.0}) {
      Tensor q = okdd::softmax(x, T);
      double mx = 0.0;
      for (double v : q.values()) mx = std::max(mx, v);
      REQUIRE(mx <= prev_max + 1e-12);
      prev_max = mx;
    }
  }
}

TEST_CASE("cross entropy examples") {
  SECTION("one-hot at the true label is zero") {
    Tensor q = Tensor::of({1, 3}, {0, 0, 1});
    std::vector<int> y = {2};
    REQUIRE(okdd::cross_entropy(q, y).item() == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("hand value") {
    Tensor q = Tensor::of({1, 3}, {0.25, 0.25, 0.5});
    std::vector<int> y = {2};
    REQUIRE(okdd::cross_entropy(q, y).item() == Catch::Approx(-std::log(0.5)).margin(1e-14));
  }
  SECTION("uniform rows give ln C") {
    for (int classes : {2, 5, 10}) {
      std::vector<double> row(classes, 1.0 / classes);
      Tensor q = Tensor::of({1, classes}, row);
      std::vector<int> y = {classes - 1};
      REQUIRE(okdd::cross_entropy(q, y).item() ==
              Catch::Approx(std::log(static_cast<double>(classes))).margin(1e-12));
    }
  }
  SECTION("clamped at the floor instead of -inf") {
    Tensor q = Tensor::of({1, 2}, {0.0, 1.0});
    std::vector<int> y = {0};
    const double v = okdd::cross_entropy(q, y).item();
    REQUIRE(std::isfinite(v));
    REQUIRE(v == Catch::Approx(-std::log(1e-12)));
  }
  SECTION("label range checked") {
    Tensor q = Tensor::of({1, 2}, {0.5, 0.5});
    std::vector<int> y = {2};
    REQUIRE_THROWS_AS(okdd::cross_entropy(q, y), std::invalid_argument);
  }
  SECTION("batch mean") {
    Tensor q = Tensor::of({2, 2}, {0.5, 0.5, 0.25, 0.75});
    std::vector<int> y = {0, 1};
    REQUIRE(okdd::cross_entropy(q, y).item() ==
            Catch::Approx(0.5 * (-std::log(0.5) - std::log(0.75))).margin(1e-14));
  }
}

TEST_CASE("kl divergence examples") {
  SECTION("identical distributions give zero") {
    okdd::Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      auto row = random_prob_row(rng, 5);
      Tensor p = Tensor::of({1, 5}, row);
      Tensor p2 = Tensor::of({1, 5}, row);
      REQUIRE(okdd::kl_divergence(p, p2).item() == 0.0);
    }
  }
  SECTION("hand value ln 2") {
    Tensor t = Tensor::of({1, 2}, {1, 0});
    Tensor q = Tensor::of({1, 2}, {0.5, 0.5});
    REQUIRE(okdd::kl_divergence(t, q).item() == Catch::Approx(std::log(2.0)).margin(1e-14));
  }
  SECTION("nonnegative on random valid rows") {
    okdd::Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      Tensor t = Tensor::of({1, 4}, random_prob_row(rng, 4));
      Tensor q = Tensor::of({1, 4}, random_prob_row(rng, 4));
      REQUIRE(okdd::kl_divergence(t, q).item() >= 0.0);
    }
  }
  SECTION("zero iff the rows coincide") {
    okdd::Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      auto a = random_prob_row(rng, 4);
      auto b = random_prob_row(rng, 4);
      Tensor t = Tensor::of({1, 4}, a);
      Tensor q = Tensor::of({1, 4}, b);
      const double kl = okdd::kl_divergence(t, q).item();
      double linf = 0.0;
      for (int j = 0; j < 4; ++j) linf = std::max(linf, std::abs(a[j] - b[j]));
      if (linf < 1e-9)
        REQUIRE(std::abs(kl) < 1e-12);
      else
        REQUIRE(kl > 0.0);
    }
  }
}

TEST_CASE("loss gradients match central differences") {
  okdd::Rng rng(21);
  SECTION("cross entropy through temperature softmax") {
    std::vector<double> logits(3 * 4);
    for (double& v : logits) v = rng.uniform(-2, 2);
    Tensor z = Tensor::of({3, 4}, logits, true);
    std::vector<int> y = {0, 2, 3};
    auto f = [&](const Tensor& t) {
      return okdd::cross_entropy(okdd::softmax(t, 3.0), y);
    };
    REQUIRE(okdd::finite_difference_check(f, z) < 1e-4);
  }
  SECTION("kl through softmax, both arguments") {
    std::vector<double> a(2 * 4), b(2 * 4);
    for (double& v : a) v = rng.uniform(-2, 2);
    for (double& v : b) v = rng.uniform(-2, 2);
    Tensor za = Tensor::of({2, 4}, a, true);
    Tensor zb = Tensor::of({2, 4}, b, false);
    auto fq = [&](const Tensor& t) {
      return okdd::kl_divergence(okdd::softmax(zb, 2.0), okdd::softmax(t, 2.0));
    };
    REQUIRE(okdd::finite_difference_check(fq, za) < 1e-4);
    Tensor zc = Tensor::of({2, 4}, b, true);
    auto ft = [&](const Tensor& t) {
      return okdd::kl_divergence(okdd::softmax(t, 2.0), okdd::softmax(za, 2.0));
    };
    REQUIRE(okdd::finite_difference_check(ft, zc) < 1e-4);
  }
  SECTION("finite differences on plain sum are near exact") {
    Tensor x = Tensor::of({5}, {1, 2, 3, 4, 5}, true);
    auto f = [](const Tensor& t) { return okdd::sum(t); };
    REQUIRE(okdd::finite_difference_check(f, x) < 1e-9);
  }
}
