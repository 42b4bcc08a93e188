#include "vle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <random>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace vle {

namespace fs = std::filesystem;

ImageBatch Dataset::batch(std::span<const size_t> indices) const {
  require(!indices.empty(), "empty batch");
  std::vector<Tensor<float>> parts;
  parts.reserve(indices.size());
  for (size_t i : indices) {
    require(i < images.size(), "dataset index out of range");
    parts.push_back(images[i]);
  }
  return ImageBatch(stack_batch(parts), 1);
}

ImageBatch Dataset::image(size_t i) const {
  const size_t idx[] = {i};
  return batch(idx);
}

Dataset Dataset::slice(size_t begin, size_t end) const {
  require(begin <= end && end <= size(), "dataset slice out of range");
  Dataset d;
  d.image_size = image_size;
  d.channels = channels;
  d.ids.assign(ids.begin() + begin, ids.begin() + end);
  d.images.assign(images.begin() + begin, images.begin() + end);
  return d;
}

void Dataset::append(const Dataset& other) {
  if (images.empty()) {
    image_size = other.image_size;
    channels = other.channels;
  }
  require(other.images.empty() || (other.image_size == image_size && other.channels == channels),
          "cannot append datasets of different image geometry");
  ids.insert(ids.end(), other.ids.begin(), other.ids.end());
  images.insert(images.end(), other.images.begin(), other.images.end());
  skipped += other.skipped;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Empty tensor when the file cannot be decoded.
Tensor<float> decode_file(const std::string& path, int size) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) return {};
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: scale = 1.0; break;
    default: return {};
  }
  cv::Mat f;
  raw.convertTo(f, CV_32F, scale);
  cv::Mat rgb;
  switch (f.channels()) {
    case 1: cv::cvtColor(f, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(f, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(f, rgb, cv::COLOR_BGRA2RGB); break;
    default: return {};
  }
  if (rgb.rows != size || rgb.cols != size) {
    const int interp = (rgb.rows > size || rgb.cols > size) ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(size, size), 0, 0, interp);
    rgb = resized;
  }
  Tensor<float> out({1, 3, size, size});
  for (int y = 0; y < size; ++y) {
    const auto* row = rgb.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = std::clamp(row[x][c], 0.0f, 1.0f);
  }
  return out;
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("VLE_NUM_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

double gauss2(double dx, double dy, double sigma) { return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)); }

}  // namespace

Tensor<float> read_image(const std::string& path, int image_size) {
  require(image_size >= 1, "image_size must be >= 1");
  Tensor<float> t = decode_file(path, image_size);
  if (t.empty()) throw FormatError("cannot decode image " + path);
  return t;
}

Dataset ingest_dataset(const std::string& root, int image_size, uint64_t seed, int workers) {
  require(image_size >= 1, "image_size must be >= 1");
  if (!fs::is_directory(root)) throw FormatError("dataset root " + root + " is not a directory");
  std::vector<std::string> rel;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && is_image_file(e.path())) rel.push_back(fs::relative(e.path(), root).generic_string());
  std::sort(rel.begin(), rel.end());
  std::mt19937_64 rng(seed);
  std::shuffle(rel.begin(), rel.end(), rng);

  std::vector<Tensor<float>> decoded(rel.size());
  const int nw = std::max(1, std::min<int>(worker_count(workers), static_cast<int>(rel.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < nw; ++w)
    pool.emplace_back([&, w] {
      for (size_t i = static_cast<size_t>(w); i < rel.size(); i += static_cast<size_t>(nw))
        decoded[i] = decode_file((fs::path(root) / rel[i]).string(), image_size);
    });
  for (auto& t : pool) t.join();

  Dataset d;
  d.image_size = image_size;
  for (size_t i = 0; i < rel.size(); ++i) {
    if (decoded[i].empty()) {
      ++d.skipped;
      continue;
    }
    d.ids.push_back(rel[i]);
    d.images.push_back(std::move(decoded[i]));
  }
  if (d.images.empty()) throw FormatError("no decodable images under " + root);
  return d;
}

Dataset synthetic_blobs(size_t count, int image_size, uint64_t seed) {
  require(image_size >= 1, "image_size must be >= 1");
  Dataset d;
  d.image_size = image_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double S = image_size;
  for (size_t i = 0; i < count; ++i) {
    Tensor<float> img({1, 3, image_size, image_size});
    double bg[3];
    for (double& c : bg) c = 0.15 + 0.7 * u(rng);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) img.at(0, c, y, x) = float(bg[c]);
    const int blobs = 1 + static_cast<int>(u(rng) * 3.0);
    for (int b = 0; b < blobs; ++b) {
      const double cx = u(rng) * S, cy = u(rng) * S;
      const double sigma = S * (0.06 + 0.14 * u(rng));
      double col[3];
      for (double& c : col) c = u(rng);
      for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
          const double a = gauss2(x + 0.5 - cx, y + 0.5 - cy, sigma);
          for (int c = 0; c < 3; ++c) {
            float& v = img.at(0, c, y, x);
            v = float(std::clamp(v * (1.0 - a) + col[c] * a, 0.0, 1.0));
          }
        }
    }
    d.ids.push_back("blob_" + std::to_string(i));
    d.images.push_back(std::move(img));
  }
  return d;
}

Dataset quantization_ladder(int per_level, int image_size, uint64_t seed) {
  require(per_level >= 1 && image_size >= 1, "quantization_ladder: bad arguments");
  Dataset d;
  d.image_size = image_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int64_t N = int64_t{image_size} * image_size;
  for (int k = 2; k <= 256; k *= 2) {
    for (int i = 0; i < per_level; ++i) {
      // Smooth random field, then rank-equalized onto k consecutive levels.
      std::vector<double> field(static_cast<size_t>(N), 0.0);
      for (int b = 0; b < 4; ++b) {
        const double cx = u(rng) * image_size, cy = u(rng) * image_size;
        const double sigma = image_size * (0.15 + 0.25 * u(rng));
        const double amp = u(rng) < 0.5 ? -1.0 : 1.0;
        for (int y = 0; y < image_size; ++y)
          for (int x = 0; x < image_size; ++x)
            field[static_cast<size_t>(y * image_size + x)] += amp * gauss2(x - cx, y - cy, sigma);
      }
      // Tiny ramp breaks ties deterministically.
      for (int64_t p = 0; p < N; ++p) field[static_cast<size_t>(p)] += 1e-9 * double(p);
      std::vector<int64_t> order(static_cast<size_t>(N));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return field[a] < field[b]; });
      Tensor<float> img({1, 3, image_size, image_size});
      const int base = 128 - k / 2;
      for (int64_t r = 0; r < N; ++r) {
        const int64_t level = r * k / N;
        const float v = float(double(base + level) / 255.0);
        const int64_t p = order[static_cast<size_t>(r)];
        for (int c = 0; c < 3; ++c) img.at(0, c, p / image_size, p % image_size) = v;
      }
      d.ids.push_back("k" + std::to_string(k) + "_" + std::to_string(i));
      d.images.push_back(std::move(img));
    }
  }
  return d;
}

void write_png(const Tensor<float>& image, const std::string& path) {
  const Shape& s = image.shape();
  const bool batched = s.size() == 4;
  require((s.size() == 3 || (batched && s[0] == 1)), "write_png expects (C,H,W) or (1,C,H,W)");
  const int64_t C = s[batched ? 1 : 0], H = s[batched ? 2 : 1], W = s[batched ? 3 : 2];
  require(C == 1 || C == 3, "write_png supports 1 or 3 channels");
  cv::Mat m(static_cast<int>(H), static_cast<int>(W), C == 1 ? CV_8UC1 : CV_8UC3);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < C; ++c) {
        const float v = std::clamp(image[(c * H + y) * W + x], 0.0f, 1.0f);
        const auto byte = static_cast<uint8_t>(std::lround(v * 255.0f));
        // OpenCV stores BGR.
        m.ptr<uint8_t>(static_cast<int>(y))[x * C + (C == 3 ? 2 - c : 0)] = byte;
      }
  if (!cv::imwrite(path, m)) throw FormatError("cannot write " + path);
}

void write_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(dir);
  for (size_t i = 0; i < data.size(); ++i) write_png(data.images[i], (fs::path(dir) / (data.ids[i] + ".png")).string());
}

}  // namespace vle
