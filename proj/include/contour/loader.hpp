#pragma once

// Decoded dataset splits and the training batch stream.
//
// Batch k holds stream positions [k·B, (k+1)·B). Position p belongs to epoch
// p / n and takes element perm_e[p % n], where perm_e is a Fisher-Yates
// shuffle keyed by (seed, e). Batches are therefore a pure function of
// (set, seed, k); workers only change when they are built, never what they
// contain.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "contour/tensor.hpp"

namespace contour {

struct ImageSet {
  std::int64_t size = 0;             // square side
  std::vector<std::uint8_t> pixels;  // count × size × size × 3, RGB
  std::vector<int> labels;           // 1 positive, 0 negative
  std::vector<std::int64_t> ids;     // index record idx

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t sample_bytes() const { return size * size * 3; }
};

/// Decodes the records of one split ("train" or "val") in index order with
/// `workers` threads. limit > 0 keeps only the first `limit` records.
ImageSet load_split(const std::filesystem::path& dir, const std::string& split, int workers = 1,
                    std::int64_t limit = 0);

/// Pixels scaled to [0, 1], shape (ids.size(), size, size, 3).
Tensor<float> to_tensor(const ImageSet& set, std::span<const std::int64_t> rows, std::span<const int> flips = {});

struct LoaderConfig {
  std::int64_t batch = 32;
  std::uint64_t seed = 0;
  int workers = 2;               // 0 builds batches on the calling thread
  std::int64_t queue_capacity = 4;
  bool flips = false;            // online h/v/hv flips, drawn per stream position
};

struct Batch {
  std::int64_t index = 0;
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::int64_t> rows;
};

/// Fisher-Yates permutation of [0, n) for one epoch.
std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t seed, std::int64_t epoch);

Batch make_batch(const ImageSet& set, const LoaderConfig& cfg, std::int64_t k);

/// Prefetches batches 0, 1, 2, ... into a bounded reorder buffer.
class BatchLoader {
 public:
  BatchLoader(const ImageSet& set, LoaderConfig cfg);
  ~BatchLoader();
  BatchLoader(const BatchLoader&) = delete;
  BatchLoader& operator=(const BatchLoader&) = delete;

  Batch next();

 private:
  void work();

  const ImageSet& set_;
  LoaderConfig cfg_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::int64_t, Batch> ready_;
  std::int64_t consumed_ = 0;
  std::atomic<std::int64_t> claimed_{0};
  bool stop_ = false;
  std::exception_ptr failure_;
  std::vector<std::thread> threads_;
};

}  // namespace contour
