#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vle/analysis.hpp"
#include "vle/metrics.hpp"

using namespace vle;

TEST_CASE("ssim identity and constant images") {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor<float>({2, 3, 16, 16}, rng);
  CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
  const double C1 = 1e-4;
  for (auto [a, b] : std::vector<std::pair<float, float>>{{0.2f, 0.6f}, {0.9f, 0.1f}, {0.5f, 0.5f}}) {
    const double expected = (2.0 * a * b + C1) / (double(a) * a + double(b) * b + C1);
    CHECK(ssim(Tensor<float>({1, 1, 12, 12}, a), Tensor<float>({1, 1, 12, 12}, b)) ==
          doctest::Approx(expected).epsilon(1e-9));
  }
  CHECK_THROWS_AS(ssim(Tensor<float>({1, 1, 8, 8}), Tensor<float>({1, 1, 8, 8})), ContractError);
  CHECK_THROWS_AS(ssim(Tensor<float>({1, 1, 16, 16}), Tensor<float>({1, 1, 12, 16})), ContractError);
}

TEST_CASE("ssim matches the direct windowed oracle") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto x = oracle::random_tensor<float>({1, 3, 16, 16}, rng, -0.1, 1.1);
    auto y = x;
    for (auto& v : y.vec()) v += float(std::uniform_real_distribution<double>(-0.2, 0.2)(rng));
    CHECK(std::abs(ssim(x, y) - oracle::ssim_direct(oracle::from(x), oracle::from(y))) <= 1e-6);
  }
}

TEST_CASE("entropy of reference images") {
  CHECK(shannon_entropy(Tensor<float>({1, 3, 8, 8}, 0.4f)) == 0.0);
  Tensor<float> half({1, 1, 8, 8});
  for (int64_t i = 0; i < 32; ++i) half[i] = 1.0f;
  CHECK(shannon_entropy(half) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor<float> uniform({1, 1, 16, 16});
  for (int64_t i = 0; i < 256; ++i) uniform[i] = float(i) / 255.0f;
  CHECK(shannon_entropy(uniform) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(shannon_entropy(Tensor<float>({3, 8, 8}, 0.1f)) == 0.0);
}

TEST_CASE("ladder entropy rises with the number of levels") {
  const Dataset ladder = quantization_ladder(1, 32, 4);
  double prev = -1.0;
  for (size_t i = 0; i < ladder.size(); ++i) {
    const double h = shannon_entropy(ladder.images[i]);
    CHECK(h > prev);
    CHECK(h == doctest::Approx(double(i + 1)).epsilon(1e-9));
    prev = h;
  }
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 8, 16, 32}, c{5, 4, 3, 2, 1};
  CHECK(*spearman(a, b) == doctest::Approx(1.0));
  CHECK(*spearman(a, c) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2, 3};
  // Pearson of average ranks (1.5,1.5,3.5,3.5,5) with (1..5).
  CHECK(*spearman(a, ties) == doctest::Approx(0.9486832980505138));
  CHECK_FALSE(spearman(a, std::vector<double>(5, 2.0)).has_value());
  CHECK_FALSE(spearman(std::vector<double>{1}, std::vector<double>{2}).has_value());
}

TEST_CASE("eval of an untrained codec reports the image power") {
  const Dataset data = synthetic_blobs(3, 32, 1);
  const auto params = init_codec_params<float>(CodecConfig{}, 2);
  BoundCodec<float> codec(params, false);
  const auto rows = eval_table(codec, Variant::vanilla, data, {1, 2, 4}, 2);
  REQUIRE(rows.size() == 9);
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& img = data.images[i / 3];
    CHECK(rows[i].image_id == data.ids[i / 3]);
    CHECK(rows[i].n_tokens == std::vector<int>{1, 2, 4}[i % 3]);
    CHECK(rows[i].mse == doctest::Approx(mse(img, Tensor<float>::zeros_like(img))).epsilon(1e-9));
  }
}

TEST_CASE("fig1 with the stub decays geometrically") {
  Dataset data;
  data.image_size = 8;
  for (int i = 0; i < 3; ++i) {
    data.ids.push_back("one" + std::to_string(i));
    data.images.emplace_back(Shape{1, 3, 8, 8}, 1.0f);
  }
  const ScaledIdentityCodec<float> stub(0.5f);
  const std::vector<NamedModel> models{{"stub", &stub, Variant::vanilla}};
  const auto rows = fig1_analysis(models, data, 6);
  CHECK(rows.size() == 18);
  const auto means = mean_mse_by_n(rows, "stub");
  REQUIRE(means.size() == 6);
  for (int n = 1; n <= 6; ++n) CHECK(std::abs(means[n - 1] - std::pow(0.25, n)) <= 1e-6);
}

TEST_CASE("fig2 with the stub") {
  Dataset data;
  data.image_size = 8;
  for (float level : {0.2f, 0.5f, 1.0f}) {
    data.ids.push_back("c" + std::to_string(level));
    data.images.emplace_back(Shape{1, 3, 8, 8}, level);
  }
  const ScaledIdentityCodec<float> stub(0.5f);
  const Fig2Result r = fig2_analysis(stub, Variant::vanilla, data, 1e-3, 8);
  REQUIRE(r.rows.size() == 3);
  // mse_n = 0.25^n * v^2; first n with that below 1e-3.
  for (size_t i = 0; i < 3; ++i) {
    const double p = double(data.images[i][0]) * data.images[i][0];
    int n = 1;
    while (std::pow(0.25, n) * p > 1e-3) ++n;
    CHECK(r.rows[i].tokens_to_threshold == n);
    CHECK(r.rows[i].entropy_bits == 0.0);
  }
  CHECK(r.reached == 3);
  CHECK_FALSE(r.spearman.has_value());
}

TEST_CASE("csv writers") {
  std::ostringstream os;
  write_eval_csv({{"a", 2, 0.123456789, 0.5}}, os);
  CHECK(os.str() == "image_id,n,mse,ssim\na,2,0.123457,0.5\n");
  std::ostringstream f1;
  write_fig1_csv({{"m", 1, "a", 1e-7}}, f1);
  CHECK(f1.str() == "model,n,image_id,mse\nm,1,a,1e-07\n");
  std::ostringstream f2;
  Fig2Result r;
  r.rows.push_back({"a", 3.0, 4, 0.01});
  write_fig2_csv(r, f2);
  CHECK(f2.str() == "image_id,entropy_bits,tokens_to_threshold\na,3,4\n");
  CHECK(csv_float(1.0 / 3.0) == "0.333333");
}
