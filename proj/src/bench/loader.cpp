#include "contour/loader.hpp"

#include <algorithm>
#include <exception>

#include "contour/dataset.hpp"
#include "contour/errors.hpp"
#include "contour/rng.hpp"

namespace contour {

ImageSet load_split(const std::filesystem::path& dir, const std::string& split, int workers, std::int64_t limit) {
  std::vector<IndexRecord> records;
  for (IndexRecord& r : read_index(dir)) {
    if (r.split == split) records.push_back(std::move(r));
  }
  if (limit > 0 && static_cast<std::int64_t>(records.size()) > limit) records.resize(static_cast<std::size_t>(limit));
  if (records.empty()) throw FormatError("split '" + split + "' of " + dir.string() + " is empty");

  ImageSet set;
  set.size = decode_png(read_file(dir / records[0].path)).width();
  const std::int64_t n = static_cast<std::int64_t>(records.size());
  set.pixels.resize(static_cast<std::size_t>(n * set.sample_bytes()));
  set.labels.resize(records.size());
  set.ids.resize(records.size());

  std::exception_ptr failure;
  std::mutex failure_mu;
  auto decode_range = [&](int w, int stride) {
    try {
      for (std::int64_t i = w; i < n; i += stride) {
        const IndexRecord& r = records[static_cast<std::size_t>(i)];
        const Image img = decode_png(read_file(dir / r.path));
        if (img.width() != set.size || img.height() != set.size) {
          throw FormatError(r.path + ": expected " + std::to_string(set.size) + " px square image");
        }
        std::copy(img.bytes().begin(), img.bytes().end(), set.pixels.begin() + i * set.sample_bytes());
        set.labels[static_cast<std::size_t>(i)] = static_cast<int>(r.label);
        set.ids[static_cast<std::size_t>(i)] = r.idx;
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const int stride = std::max(workers, 1);
  std::vector<std::thread> pool;
  for (int w = 1; w < stride; ++w) pool.emplace_back(decode_range, w, stride);
  decode_range(0, stride);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return set;
}

Tensor<float> to_tensor(const ImageSet& set, std::span<const std::int64_t> rows, std::span<const int> flips) {
  const std::int64_t s = set.size;
  Tensor<float> out(Shape(static_cast<std::int64_t>(rows.size()), s, s, 3));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint8_t* src = set.pixels.data() + rows[i] * set.sample_bytes();
    float* dst = out.data() + static_cast<std::int64_t>(i) * set.sample_bytes();
    const int f = flips.empty() ? 0 : flips[i];
    const bool h = f & 1, v = f & 2;
    for (std::int64_t y = 0; y < s; ++y) {
      const std::int64_t sy = v ? s - 1 - y : y;
      for (std::int64_t x = 0; x < s; ++x) {
        const std::int64_t sx = h ? s - 1 - x : x;
        for (std::int64_t c = 0; c < 3; ++c) dst[(y * s + x) * 3 + c] = src[(sy * s + sx) * 3 + c] / 255.0f;
      }
    }
  }
  return out;
}

std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch), 0xba7c));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
  return perm;
}

Batch make_batch(const ImageSet& set, const LoaderConfig& cfg, std::int64_t k) {
  const std::int64_t n = set.count();
  if (n == 0) throw ShapeError("cannot batch an empty image set");
  Batch b;
  b.index = k;
  std::vector<int> flips;
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm;
  for (std::int64_t p = k * cfg.batch; p < (k + 1) * cfg.batch; ++p) {
    if (p / n != cached_epoch) {
      cached_epoch = p / n;
      perm = epoch_permutation(n, cfg.seed, cached_epoch);
    }
    const std::int64_t row = perm[static_cast<std::size_t>(p % n)];
    b.rows.push_back(row);
    b.labels.push_back(set.labels[static_cast<std::size_t>(row)]);
    if (cfg.flips) {
      CounterRng r(derive_seed(cfg.seed, static_cast<std::uint64_t>(p), 0xf11b));
      flips.push_back(static_cast<int>(r.uniform_int(0, 3)));
    }
  }
  b.images = to_tensor(set, b.rows, flips);
  return b;
}

BatchLoader::BatchLoader(const ImageSet& set, LoaderConfig cfg) : set_(set), cfg_(cfg) {
  if (cfg_.batch < 1) throw ConfigError("batch size must be positive");
  if (cfg_.queue_capacity < 1) throw ConfigError("loader queue capacity must be positive");
  if (set_.count() == 0) throw ShapeError("cannot batch an empty image set");
  for (int w = 0; w < cfg_.workers; ++w) threads_.emplace_back(&BatchLoader::work, this);
}

BatchLoader::~BatchLoader() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void BatchLoader::work() {
  for (;;) {
    const std::int64_t k = claimed_.fetch_add(1);
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || k < consumed_ + cfg_.queue_capacity; });
      if (stop_) return;
    }
    Batch b;
    try {
      b = make_batch(set_, cfg_, k);
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!failure_) failure_ = std::current_exception();
      stop_ = true;
      cv_.notify_all();
      return;
    }
    {
      std::lock_guard lock(mu_);
      ready_.emplace(k, std::move(b));
    }
    cv_.notify_all();
  }
}

Batch BatchLoader::next() {
  if (threads_.empty()) return make_batch(set_, cfg_, consumed_++);
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return failure_ || ready_.count(consumed_) > 0; });
  if (failure_) std::rethrow_exception(failure_);
  auto node = ready_.extract(consumed_);
  ++consumed_;
  lock.unlock();
  cv_.notify_all();
  return std::move(node.mapped());
}

}  // namespace contour
