#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vle/core.hpp"

namespace vle {

/// In-memory image collection; each image is stored as a (1, C, S, S) tensor
/// in [0, 1].
struct Dataset {
  int image_size = 0;
  int channels = 3;
  std::vector<std::string> ids;
  std::vector<Tensor<float>> images;
  int64_t skipped = 0;  // undecodable files encountered during ingestion

  size_t size() const { return images.size(); }
  ImageBatch batch(std::span<const size_t> indices) const;
  ImageBatch image(size_t i) const;
  /// Images [begin, end) as a new dataset.
  Dataset slice(size_t begin, size_t end) const;
  void append(const Dataset& other);
};

/// Decodes every PNG/JPEG under `root` (recursively), resizes to
/// image_size x image_size, scales to [0, 1] by the source bit depth, and
/// orders the result by a seeded shuffle of the sorted relative paths.
/// Files that fail to decode are skipped and counted. Decoding runs on
/// `workers` threads (0: VLE_NUM_WORKERS or 1). Throws FormatError when no
/// image could be decoded.
Dataset ingest_dataset(const std::string& root, int image_size, uint64_t seed, int workers = 0);

/// Seeded Gaussian blobs on flat colored backgrounds.
Dataset synthetic_blobs(size_t count, int image_size, uint64_t seed);

/// Gray images with exactly k equally populated consecutive 8-bit levels
/// centred on mid-gray, k = 2, 4, ..., 256; `per_level` images for each k.
/// Ids are "k<levels>_<i>".
Dataset quantization_ladder(int per_level, int image_size, uint64_t seed);

/// Writes a (C,H,W) or (1,C,H,W) image (clamped to [0,1]) as 8-bit PNG.
void write_png(const Tensor<float>& image, const std::string& path);
/// Writes every image as <dir>/<id>.png.
void write_dataset(const Dataset& data, const std::string& dir);
/// Reads one image into (1, 3, size, size); throws FormatError if undecodable.
Tensor<float> read_image(const std::string& path, int image_size);

}  // namespace vle
