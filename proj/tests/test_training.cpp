#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vle/training.hpp"

using namespace vle;

namespace {

// Upper 1% points of the chi-square distribution for df = 1..12.
constexpr double kChi2Critical01[] = {6.635, 9.210, 11.345, 13.277, 15.086, 16.812,
                                      18.475, 20.090, 21.666, 23.209, 24.725, 26.217};

double chi_square(const std::vector<int64_t>& counts, const std::vector<double>& probs, int64_t total, int& df) {
  // Merge adjacent bins until every expected count is at least 5.
  std::vector<double> e, o;
  double ae = 0, ao = 0;
  for (size_t k = 0; k < probs.size(); ++k) {
    ae += probs[k] * double(total);
    ao += double(counts[k]);
    if (ae >= 5.0) {
      e.push_back(ae);
      o.push_back(ao);
      ae = ao = 0;
    }
  }
  if (!e.empty()) {
    e.back() += ae;
    o.back() += ao;
  }
  double chi = 0;
  for (size_t k = 0; k < e.size(); ++k) chi += (o[k] - e[k]) * (o[k] - e[k]) / e[k];
  df = int(e.size()) - 1;
  return chi;
}

TrainConfig small_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.n_min = v == Variant::masked ? 2 : 1;
  c.n_cap = 3;
  c.codec = testing::tiny_codec(v == Variant::masked);
  c.image_size = 8;
  c.batch_size = 4;
  c.total_steps = 6;
  c.optimizer.lr = 1e-3;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("sampler degenerate cases") {
  TokenSampler a(1, 8, 3.2, 3.2, 0.0, 100, 1);
  for (int i = 0; i < 100; ++i) CHECK(a.sample(i) == 3);
  TokenSampler b(1, 8, 0.4, 0.4, 0.0, 100, 1);
  for (int i = 0; i < 100; ++i) CHECK(b.sample(i) == 1);
  TokenSampler c(2, 4, 9.0, 9.0, 0.0, 100, 1);
  CHECK(c.sample(0) == 4);
  CHECK_THROWS_AS(TokenSampler(3, 2, 1, 1, 1, 1, 1), ContractError);
}

TEST_CASE("sampler mean schedule is linear") {
  const TokenSampler s(1, 5, 1.0, 5.0, 1.0, 100, 0);
  CHECK(s.mean_at(0) == 1.0);
  CHECK(s.mean_at(50) == doctest::Approx(3.0));
  CHECK(s.mean_at(100) == 5.0);
  CHECK(s.mean_at(1000) == 5.0);
  CHECK(TokenSampler(1, 5, 1.0, 5.0, 1.0, 0, 0).mean_at(0) == 5.0);
}

TEST_CASE("sampler draws follow the clamped folded normal") {
  for (auto [mu, sigma, lo, hi] : std::vector<std::tuple<double, double, int, int>>{
           {2.0, 1.0, 1, 8}, {0.3, 1.5, 1, 6}, {3.5, 0.7, 2, 5}, {5.0, 2.0, 1, 12}}) {
    TokenSampler s(lo, hi, mu, mu, sigma, 0, 42);
    const int64_t N = 100000;
    std::vector<int64_t> counts(size_t(hi - lo + 1), 0);
    double sum = 0, sumsq = 0;
    for (int64_t i = 0; i < N; ++i) {
      const int k = s.sample(0);
      REQUIRE(k >= lo);
      REQUIRE(k <= hi);
      ++counts[size_t(k - lo)];
      sum += k;
      sumsq += double(k) * k;
    }
    const auto p = oracle::folded_normal_bins(mu, sigma, lo, hi);
    int df = 0;
    const double chi = chi_square(counts, p, N, df);
    INFO("mu=", mu, " sigma=", sigma, " chi2=", chi, " df=", df);
    REQUIRE(df >= 1);
    CHECK(chi < kChi2Critical01[df - 1]);

    double mean = 0;
    for (size_t k = 0; k < p.size(); ++k) mean += p[k] * double(lo + int(k));
    const double m = sum / N, se = std::sqrt((sumsq / N - m * m) / N);
    CHECK(std::abs(m - mean) <= 3 * se);
  }
}

TEST_CASE("sampler state round-trips") {
  TokenSampler a(1, 8, 2, 6, 1.5, 50, 3);
  for (int i = 0; i < 10; ++i) a.sample(i);
  TokenSampler b(1, 8, 2, 6, 1.5, 50, 99);
  b.set_rng_state(a.rng_state());
  for (int i = 10; i < 40; ++i) CHECK(a.sample(i) == b.sample(i));
  CHECK_THROWS_AS(b.set_rng_state("garbage"), FormatError);
}

TEST_CASE("config validation") {
  TrainConfig c = small_config(Variant::masked);
  c.n_min = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Variant::vanilla);
  c.n_cap = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Variant::vanilla);
  c.image_size = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Variant::vanilla);
  c.codec.mask_enabled = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  try {
    TrainConfig m = small_config(Variant::masked);
    m.n_min = 1;
    m.validate();
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("n_min") != std::string::npos);
  }
}

TEST_CASE("config key/value round trip") {
  TrainConfig c = small_config(Variant::masked);
  c.sampler.sigma = 0.3;
  c.optimizer.lr = 1.0 / 3.0;
  const TrainConfig d = TrainConfig::from_key_values(c.to_key_values());
  CHECK(d.to_key_values() == c.to_key_values());
  CHECK(d.codec == c.codec);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"n_cap", "x"}}), ConfigError);
  const TrainConfig m = TrainConfig::from_key_values({{"variant", "masked"}});
  CHECK(m.n_min == 2);
  CHECK(m.codec.mask_enabled);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"variant", "masked"}, {"n_min", "1"}}).validate(), ConfigError);
}

TEST_CASE("learning rate schedules") {
  TrainConfig c = small_config(Variant::vanilla);
  c.optimizer.lr = 0.01;
  c.total_steps = 100;
  CHECK(c.lr_at(0) == 0.01);
  CHECK(c.lr_at(99) == 0.01);
  c = TrainConfig::from_key_values({{"optimizer.schedule", "cosine"}}, c);
  CHECK(c.lr_at(0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(c.lr_at(50) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(c.lr_at(25) == doctest::Approx(0.005 * (1.0 + std::sqrt(0.5))).epsilon(1e-12));
  CHECK(c.lr_at(100) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(c.to_key_values().at("optimizer.schedule") == "cosine");
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"optimizer.schedule", "step"}}), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto p = init_codec_params<float>(testing::tiny_codec(false), 1);
  const auto before = p.tensors;
  auto adam = init_adam(p.tensors);
  AdamConfig cfg;
  cfg.lr = 0.0;
  std::mt19937_64 rng(1);
  const ImageBatch batch(oracle::random_tensor<float>({2, 3, 8, 8}, rng), 4);
  for (int i = 0; i < 3; ++i) train_step(p, adam, cfg, batch, 2, Variant::vanilla);
  CHECK(p.tensors == before);
  CHECK(adam.step == 3);
}

TEST_CASE("gradient clipping rescales by the global norm") {
  ParamSet<float> p, g, gs;
  p.add("a", Tensor<float>({2}, {0.5f, -1.0f}));
  p.add("b", Tensor<float>({1}, {0.25f}));
  g.add("a", Tensor<float>({2}, {0.2f, -0.4f}));
  g.add("b", Tensor<float>({1}, {0.4f}));
  const float scale = float(0.1 / 0.6);
  gs.add("a", Tensor<float>({2}, {0.2f * scale, -0.4f * scale}));
  gs.add("b", Tensor<float>({1}, {0.4f * scale}));
  ParamSet<float> q = p, r = p;
  AdamState s1 = init_adam(p), s2 = init_adam(p), s3 = init_adam(p);
  AdamConfig clipped, plain, loose;
  clipped.lr = plain.lr = loose.lr = 0.1;
  clipped.clip_norm = 0.1;
  loose.clip_norm = 10.0;
  for (int t = 0; t < 3; ++t) {
    adam_update(p, g, s1, clipped);
    adam_update(q, gs, s2, plain);
  }
  CHECK(p == q);
  CHECK(s1.v == s2.v);
  ParamSet<float> r2 = r;
  AdamState s4 = init_adam(r);
  adam_update(r, g, s3, loose);
  adam_update(r2, g, s4, plain);
  CHECK(r == r2);
}

TEST_CASE("adam update matches a scalar reference") {
  ParamSet<float> p, g;
  p.add("w", Tensor<float>({2}, {0.5f, -1.0f}));
  g.add("w", Tensor<float>({2}, {0.2f, -0.4f}));
  AdamState s = init_adam(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  double ref[2] = {0.5, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    adam_update(p, g, s, cfg);
    for (int i = 0; i < 2; ++i) {
      const double gi = g.get("w")[i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref[i]);
    }
  }
  CHECK(p.get("w")[0] == doctest::Approx(ref[0]).epsilon(1e-5));
  CHECK(p.get("w")[1] == doctest::Approx(ref[1]).epsilon(1e-5));
}

TEST_CASE("overfitting one small image lowers the loss") {
  CodecConfig cc = testing::tiny_codec(false);
  auto p = init_codec_params<float>(cc, 3);
  auto adam = init_adam(p.tensors);
  AdamConfig cfg;
  cfg.lr = 3e-3;
  std::mt19937_64 rng(2);
  const ImageBatch batch(oracle::random_tensor<float>({1, 3, 4, 4}, rng), 4);
  const double first = train_step(p, adam, cfg, batch, 2, Variant::vanilla).total;
  double last = first;
  for (int i = 0; i < 200; ++i) last = train_step(p, adam, cfg, batch, 2, Variant::vanilla).total;
  CHECK(last < 0.5 * first);
}

TEST_CASE("masked train step runs and lowers the loss") {
  auto p = init_codec_params<float>(testing::tiny_codec(true), 3);
  auto adam = init_adam(p.tensors);
  AdamConfig cfg;
  cfg.lr = 3e-3;
  std::mt19937_64 rng(4);
  const ImageBatch batch(oracle::random_tensor<float>({2, 3, 8, 8}, rng), 4);
  const double first = train_step(p, adam, cfg, batch, 2, Variant::masked).total;
  double last = first;
  for (int i = 0; i < 60; ++i) last = train_step(p, adam, cfg, batch, 2, Variant::masked).total;
  CHECK(last < first);
}

TEST_CASE("non-finite loss is reported") {
  auto p = init_codec_params<float>(testing::tiny_codec(false), 3);
  p.tensors.get("dec.out.w")[0] = std::numeric_limits<float>::infinity();
  auto adam = init_adam(p.tensors);
  const ImageBatch batch(Tensor<float>({1, 3, 8, 8}, 0.5f), 4);
  CHECK_THROWS_AS(train_step(p, adam, AdamConfig{}, batch, 2, Variant::vanilla), NumericError);
}

TEST_CASE("batch indices cover each epoch once") {
  std::map<size_t, int> seen;
  for (int64_t step = 0; step < 5; ++step)
    for (size_t i : batch_indices(7, step, 4, 20)) ++seen[i];
  CHECK(seen.size() == 20);
  for (auto& [k, n] : seen) CHECK(n == 1);
  CHECK(batch_indices(7, 3, 4, 20) == batch_indices(7, 3, 4, 20));
  CHECK_FALSE(batch_indices(7, 0, 4, 20) == batch_indices(8, 0, 4, 20));
}

TEST_CASE("training is deterministic and resumable") {
  const Dataset data = synthetic_blobs(12, 8, 5);
  for (Variant v : {Variant::vanilla, Variant::masked}) {
    TrainConfig c = small_config(v);
    if (v == Variant::masked) c.lr_schedule = LrSchedule::cosine;
    std::ostringstream log1, log2;
    TrainHooks h1, h2;
    h1.log = &log1;
    h2.log = &log2;
    const Checkpoint a = train(c, data, std::nullopt, h1);
    const Checkpoint b = train(c, data, std::nullopt, h2);
    CHECK(a.params.tensors == b.params.tensors);
    CHECK(log1.str() == log2.str());
    CHECK(a.global_step == 6);

    TrainHooks stop;
    stop.stop_after = 2;
    const Checkpoint half = train(c, data, std::nullopt, stop);
    CHECK(half.global_step == 2);
    const Checkpoint resumed = train(c, data, half);
    CHECK(resumed.params.tensors == a.params.tensors);
    CHECK(resumed.adam.m == a.adam.m);
    CHECK(resumed.adam.v == a.adam.v);
    CHECK(resumed.sampler_rng == a.sampler_rng);
  }
}

TEST_CASE("zero total steps returns the initialization") {
  TrainConfig c = small_config(Variant::vanilla);
  c.total_steps = 0;
  const Checkpoint ck = train(c, synthetic_blobs(4, 8, 1));
  CHECK(ck.params.tensors == init_codec_params<float>(c.codec, c.seed).tensors);
  CHECK(ck.global_step == 0);
}

TEST_CASE("masked training rejects n_min below two") {
  TrainConfig c = small_config(Variant::masked);
  c.n_min = 1;
  CHECK_THROWS_AS(train(c, synthetic_blobs(4, 8, 1)), ConfigError);
}

TEST_CASE("single-token vanilla training is a plain autoencoder") {
  TrainConfig c = small_config(Variant::vanilla);
  c.n_min = c.n_cap = 1;
  c.sampler.sigma = 2.0;
  const Dataset data = synthetic_blobs(8, 8, 4);
  std::ostringstream log;
  TrainHooks h;
  h.log = &log;
  train(c, data, std::nullopt, h);
  std::istringstream in(log.str());
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string step, n, total, terms;
    std::getline(fields, step, ',');
    std::getline(fields, n, ',');
    std::getline(fields, total, ',');
    std::getline(fields, terms);
    CHECK(n == "1");
    CHECK(terms.rfind("1:" + total + ":", 0) == 0);
    ++rows;
  }
  CHECK(rows == 6);

  auto p = init_codec_params<float>(c.codec, 1);
  auto adam = init_adam(p.tensors);
  const ImageBatch batch = data.batch(std::vector<size_t>{0, 1});
  const double expected = mse(batch.tensor(), decode(p, encode(p, batch.tensor())));
  CHECK(train_step(p, adam, AdamConfig{}, batch, 1, Variant::vanilla).total == doctest::Approx(expected).epsilon(1e-6));
}
