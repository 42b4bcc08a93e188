#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vle/core.hpp"

using namespace vle;

TEST_CASE("mse examples") {
  std::mt19937_64 rng(3);
  const auto a = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(Tensor<float>({2, 2}, 1.0f), Tensor<float>({2, 2}, 0.0f)) == 1.0);
  CHECK(mse(Tensor<float>({2}, {1, 2}), Tensor<float>({2}, {3, 0})) == doctest::Approx((4.0 + 4.0) / 2.0));
}

TEST_CASE("mse errors") {
  CHECK_THROWS_AS(mse(Tensor<float>({2}), Tensor<float>({3})), ContractError);
  Tensor<float> bad({2}, 0.0f);
  bad[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(mse(bad, Tensor<float>({2})), NumericError);
  bad[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(mse(bad, Tensor<float>({2})), NumericError);
}

TEST_CASE("mse is symmetric, nonnegative and zero only on equal inputs") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto a = oracle::random_tensor<float>({1, 2, 3, 3}, rng, -2, 2);
    auto b = oracle::random_tensor<float>({1, 2, 3, 3}, rng, -2, 2);
    CHECK(mse(a, b) == mse(b, a));
    CHECK(mse(a, b) > 0.0);
    CHECK(mse(a, a) == 0.0);
    b = a;
    b[static_cast<int64_t>(rng() % 18)] += 1e-3f;
    CHECK(mse(a, b) > 0.0);
  }
}

TEST_CASE("accumulate builds running sums") {
  const Tensor<float> o1({1, 3, 4, 4}, 0.25f);
  ReconstructionTrace t;
  t = accumulate(t, o1);
  CHECK(t.size() == 1);
  CHECK(t.step(1).cumulative == o1);

  std::mt19937_64 rng(5);
  const auto a = oracle::random_tensor<float>({1, 3, 4, 4}, rng), b = oracle::random_tensor<float>({1, 3, 4, 4}, rng);
  ReconstructionTrace u = accumulate(accumulate(ReconstructionTrace{}, a), b);
  CHECK(u.step(2).cumulative == add(a, b));

  ReconstructionTrace q;
  for (int i = 0; i < 3; ++i) q = accumulate(q, o1);
  for (float v : q.step(3).cumulative.vec()) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("accumulate keeps additivity bitwise for random outputs") {
  std::mt19937_64 rng(9);
  ReconstructionTrace t;
  std::vector<Tensor<float>> outs;
  for (int n = 1; n <= 8; ++n) {
    outs.push_back(oracle::random_tensor<float>({2, 3, 8, 8}, rng, -1, 1));
    t = accumulate(t, outs.back());
    Tensor<float> sum = outs.front();
    for (size_t k = 1; k < outs.size(); ++k) sum = add(sum, outs[k]);
    CHECK(max_abs_diff(t.step(n).cumulative, sum) == 0.0);
  }
}

TEST_CASE("accumulate mask contract") {
  const Tensor<float> o({1, 3, 4, 4}, 0.1f);
  const Tensor<float> m({1, 1, 4, 4}, 0.5f);
  CHECK_THROWS_AS(accumulate(ReconstructionTrace(Variant::vanilla), o, std::optional<Tensor<float>>(m)), ContractError);
  CHECK_THROWS_AS(accumulate(ReconstructionTrace(Variant::masked), o), ContractError);
  ReconstructionTrace t(Variant::masked);
  t = accumulate(t, o, std::optional<Tensor<float>>(m));
  t = accumulate(t, o, std::optional<Tensor<float>>(m));
  for (float v : t.step(2).cumulative_mask->vec()) CHECK(v == 1.0f);
  CHECK_THROWS_AS(accumulate(t, o, std::optional<Tensor<float>>(Tensor<float>({1, 2, 4, 4}))), ContractError);
}

TEST_CASE("image batch invariants") {
  CHECK_NOTHROW(ImageBatch(Tensor<float>({1, 3, 16, 16}, 0.5f)));
  CHECK_THROWS_AS(ImageBatch(Tensor<float>({1, 3, 12, 16}, 0.5f)), ContractError);
  CHECK_THROWS_AS(ImageBatch(Tensor<float>({0, 3, 16, 16})), ContractError);
  CHECK_THROWS_AS(ImageBatch(Tensor<float>({1, 3, 8, 8}, 1.5f)), ContractError);
  Tensor<float> bad({1, 3, 8, 8}, 0.5f);
  bad[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(ImageBatch{bad}, NumericError);
}

TEST_CASE("token element count is 1/64 of the image under the default stride") {
  for (int64_t h : {8, 16, 32, 64})
    for (int64_t w : {8, 24, 40}) {
      const int64_t image = 3 * h * w;
      const int64_t token = 3 * (h / kDefaultStride) * (w / kDefaultStride);
      CHECK(token * kCompressionRatio == image);
    }
}
