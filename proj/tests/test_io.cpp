#include <fstream>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tempdir.hpp"
#include "vle/checkpoint.hpp"
#include "vle/dataset.hpp"

using namespace vle;
using testing::TempDir;

namespace {

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f << bytes;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Checkpoint trained_checkpoint(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.n_min = v == Variant::masked ? 2 : 1;
  c.n_cap = 3;
  c.codec = testing::tiny_codec(v == Variant::masked);
  c.image_size = 8;
  c.batch_size = 2;
  c.total_steps = 3;
  c.optimizer.lr = 1e-3;
  return train(c, synthetic_blobs(6, 8, 2));
}

}  // namespace

TEST_CASE("ingestion skips undecodable files") {
  TempDir dir("ingest");
  const Dataset src = synthetic_blobs(3, 16, 1);
  std::filesystem::create_directories(dir.path() / "sub");
  write_png(src.images[0], dir.str("a.png"));
  write_png(src.images[1], dir.str("b.png"));
  write_png(src.images[2], dir.str("sub/c.png"));
  write_bytes(dir.str("broken.png"), "not really a png");
  write_bytes(dir.str("notes.txt"), "ignored");
  const Dataset d = ingest_dataset(dir.str(), 16, 3, 2);
  CHECK(d.size() == 3);
  CHECK(d.skipped == 1);
  for (const auto& img : d.images) {
    CHECK(img.shape() == Shape{1, 3, 16, 16});
    for (float v : img.vec()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  const Dataset again = ingest_dataset(dir.str(), 16, 3, 1);
  CHECK(again.ids == d.ids);
  for (size_t i = 0; i < d.size(); ++i) CHECK(again.images[i] == d.images[i]);
  const Dataset resized = ingest_dataset(dir.str(), 8, 3);
  CHECK(resized.images[0].shape() == Shape{1, 3, 8, 8});
}

TEST_CASE("ingestion order depends only on the seed") {
  TempDir dir("order");
  const Dataset src = synthetic_blobs(8, 8, 1);
  write_dataset(src, dir.str());
  const auto a = ingest_dataset(dir.str(), 8, 11).ids;
  CHECK(a == ingest_dataset(dir.str(), 8, 11).ids);
  bool differs = false;
  for (uint64_t s = 12; s < 20 && !differs; ++s) differs = ingest_dataset(dir.str(), 8, s).ids != a;
  CHECK(differs);
}

TEST_CASE("ingestion of an empty directory fails") {
  TempDir dir("empty");
  write_bytes(dir.str("x.png"), "garbage");
  CHECK_THROWS_AS(ingest_dataset(dir.str(), 8, 0), FormatError);
}

TEST_CASE("sixteen-bit sources are scaled by their depth") {
  TempDir dir("deep");
  cv::Mat m(8, 8, CV_16UC3, cv::Scalar(65535, 32768, 0));
  cv::imwrite(dir.str("deep.png"), m);
  cv::Mat g(8, 8, CV_8UC1, cv::Scalar(51));
  cv::imwrite(dir.str("gray.png"), g);
  const Tensor<float> t = read_image(dir.str("deep.png"), 8);
  CHECK(t.at(0, 0, 3, 3) == doctest::Approx(0.0));      
  CHECK(t.at(0, 1, 3, 3) == doctest::Approx(32768.0 / 65535.0));
  CHECK(t.at(0, 2, 3, 3) == doctest::Approx(1.0));
  const Tensor<float> u = read_image(dir.str("gray.png"), 8);
  for (int c = 0; c < 3; ++c) CHECK(u.at(0, c, 1, 1) == doctest::Approx(0.2));
}

TEST_CASE("png round trip is exact on 8-bit levels") {
  TempDir dir("png");
  Tensor<float> img({1, 3, 8, 8});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = float(i % 256) / 255.0f;
  write_png(img, dir.str("x.png"));
  const Tensor<float> back = read_image(dir.str("x.png"), 8);
  CHECK(max_abs_diff(img, back) < 1e-6);
}

TEST_CASE("synthetic datasets are seeded and in range") {
  const Dataset a = synthetic_blobs(5, 16, 9), b = synthetic_blobs(5, 16, 9);
  for (size_t i = 0; i < 5; ++i) CHECK(a.images[i] == b.images[i]);
  const Dataset ladder = quantization_ladder(2, 16, 1);
  CHECK(ladder.size() == 2 * 8);
  CHECK(ladder.ids.front() == "k2_0");
  CHECK(ladder.ids.back() == "k256_1");
}

TEST_CASE("dataset batching and slicing") {
  const Dataset d = synthetic_blobs(6, 8, 1);
  const std::vector<size_t> idx{4, 1};
  const ImageBatch b = d.batch(idx);
  CHECK(b.tensor().shape() == Shape{2, 3, 8, 8});
  CHECK(b.tensor().slice_batch(0, 1) == d.images[4]);
  const Dataset s = d.slice(2, 5);
  CHECK(s.size() == 3);
  CHECK(s.ids[0] == d.ids[2]);
  Dataset m = s;
  m.append(d.slice(0, 1));
  CHECK(m.size() == 4);
}

TEST_CASE("checkpoint round trip is bitwise") {
  TempDir dir("ckpt");
  for (Variant v : {Variant::vanilla, Variant::masked}) {
    const Checkpoint ck = trained_checkpoint(v);
    const std::string path = dir.str("a.vlec");
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.params.tensors == ck.params.tensors);
    CHECK(back.adam.m == ck.adam.m);
    CHECK(back.adam.v == ck.adam.v);
    CHECK(back.adam.step == ck.adam.step);
    CHECK(back.global_step == ck.global_step);
    CHECK(back.sampler_rng == ck.sampler_rng);
    CHECK(back.config.to_key_values() == ck.config.to_key_values());

    const Tensor<float> x = synthetic_blobs(2, 8, 3).batch(std::vector<size_t>{0, 1}).tensor();
    BoundCodec<float> m1(ck.params, false), m2(back.params, false);
    const auto t1 = run(v, m1, x, 3), t2 = run(v, m2, x, 3);
    for (int n = 1; n <= 3; ++n) CHECK(t1.step(n).cumulative == t2.step(n).cumulative);

    save_checkpoint(back, dir.str("b.vlec"));
    CHECK(read_bytes(path) == read_bytes(dir.str("b.vlec")));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir("bad");
  const std::string path = dir.str("a.vlec");
  save_checkpoint(trained_checkpoint(Variant::vanilla), path);
  const std::string bytes = read_bytes(path);

  write_bytes(dir.str("trunc.vlec"), bytes.substr(0, bytes.size() / 2));
  try {
    load_checkpoint(dir.str("trunc.vlec"));
    FAIL("truncated checkpoint loaded");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("corrupt") != std::string::npos);
  }

  std::string v2 = bytes;
  v2[4] = 2;
  write_bytes(dir.str("v2.vlec"), v2);
  try {
    load_checkpoint(dir.str("v2.vlec"));
    FAIL("future version loaded");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("format_version") != std::string::npos);
  }

  std::string magic = bytes;
  magic[0] = 'X';
  write_bytes(dir.str("magic.vlec"), magic);
  CHECK_THROWS_AS(load_checkpoint(dir.str("magic.vlec")), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir.str("missing.vlec")), FormatError);
  write_bytes(dir.str("tail.vlec"), bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(load_checkpoint(dir.str("tail.vlec")), FormatError);
}

TEST_CASE("key/value parsing") {
  const KeyValues kv = parse_key_values(
      "# comment\nvariant = \"masked\"\nn_cap=6 # trailing\n[sampler]\nsigma = 0.5\n[codec]\nlevels = 2\n");
  CHECK(kv.at("variant") == "masked");
  CHECK(kv.at("n_cap") == "6");
  CHECK(kv.at("sampler.sigma") == "0.5");
  CHECK(kv.at("codec.levels") == "2");
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
  CHECK_THROWS_AS(kv_int("n_cap", "3.5"), ConfigError);
  CHECK_THROWS_AS(kv_bool("detach_steps", "maybe"), ConfigError);
  CHECK(kv_double("x", "1e-3") == 1e-3);
}
