#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "declab/common.hpp"

namespace declab {

// Synthetic copy-heavy stream: each position repeats a recent token with
// probability repeat_rate (uniform over the trailing window), otherwise draws
// fresh from the vocabulary. Position 0 is always fresh.
struct CorpusConfig {
  int64_t vocab = 512;
  int64_t count = 20'000'000;
  double repeat_rate = 0.3;
  int64_t window = 64;
  void validate() const;
};

std::vector<int32_t> generate_corpus(const CorpusConfig& cfg, uint64_t seed);

struct TokenFile {
  int64_t vocab = 0;
  std::vector<int32_t> tokens;
};

void save_tokens(const std::string& path, int64_t vocab, std::span<const int32_t> tokens);
TokenFile load_tokens(const std::string& path);

struct Batch {
  int64_t batch_size = 0;
  int64_t seq_len = 0;
  std::vector<int32_t> inputs;   // batch_size * seq_len
  std::vector<int32_t> targets;  // same layout, shifted one token ahead
};

struct BatchConfig {
  int64_t seq_len = 0;
  int64_t batch_size = 0;
  double val_frac = 0.02;  // trailing fraction of the stream held out
  uint64_t seed = 0;       // train window shuffling
  void validate() const;
};

// Non-overlapping windows of seq_len+1 tokens (the +1 feeds the targets).
// Train windows are drawn in a fresh Fisher-Yates permutation per epoch and
// batches may straddle an epoch boundary; validation windows are served in
// stream order from the held-out tail. Nothing crosses the split point.
class BatchStream {
 public:
  BatchStream(std::vector<int32_t> tokens, int64_t vocab, BatchConfig cfg);

  int64_t train_window_count() const { return train_windows_; }
  int64_t val_window_count() const { return val_windows_; }
  int64_t val_batch_count() const { return val_windows_ / cfg_.batch_size; }
  int64_t epoch() const { return epoch_; }

  Batch next_train();
  Batch val_batch(int64_t index) const;

 private:
  void fill_window(Batch& b, int64_t slot, int64_t start) const;
  void reshuffle();

  std::vector<int32_t> tokens_;
  BatchConfig cfg_;
  int64_t train_len_ = 0;   // tokens in the train region
  int64_t val_start_ = 0;   // offset of the held-out tail
  int64_t train_windows_ = 0;
  int64_t val_windows_ = 0;
  std::vector<int64_t> order_;  // permuted train window ids
  size_t cursor_ = 0;
  int64_t epoch_ = 0;
  Rng rng_;
};

}  // namespace declab
