#include "declab/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace declab {

void CorpusConfig::validate() const {
  if (vocab < 2) throw ConfigError("corpus vocab must be >= 2");
  if (count < 1) throw ConfigError("corpus count must be >= 1");
  if (window < 1) throw ConfigError("corpus window must be >= 1");
  if (repeat_rate < 0.0 || repeat_rate > 1.0)
    throw ConfigError("repeat_rate must be in [0,1]");
}

std::vector<int32_t> generate_corpus(const CorpusConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<int32_t> t(static_cast<size_t>(cfg.count));
  t[0] = static_cast<int32_t>(rng.uniform_below(static_cast<uint64_t>(cfg.vocab)));
  for (int64_t i = 1; i < cfg.count; ++i) {
    if (rng.uniform() < cfg.repeat_rate) {
      int64_t reach = std::min(i, cfg.window);
      int64_t back = static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(reach)));
      t[static_cast<size_t>(i)] = t[static_cast<size_t>(i - 1 - back)];
    } else {
      t[static_cast<size_t>(i)] =
          static_cast<int32_t>(rng.uniform_below(static_cast<uint64_t>(cfg.vocab)));
    }
  }
  return t;
}

namespace {
constexpr char kToksMagic[8] = {'D', 'L', 'A', 'B', 'T', 'O', 'K', 'S'};
constexpr uint32_t kToksVersion = 1;
}

void save_tokens(const std::string& path, int64_t vocab, std::span<const int32_t> tokens) {
  if (vocab < 2) throw DataError("token file vocab must be >= 2");
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] < 0 || tokens[i] >= vocab)
      throw DataError("token out of range at position " + std::to_string(i));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open token file for writing: " + path);
  os.write(kToksMagic, 8);
  uint32_t ver = kToksVersion;
  uint32_t v = static_cast<uint32_t>(vocab);
  uint64_t n = tokens.size();
  os.write(reinterpret_cast<const char*>(&ver), 4);
  os.write(reinterpret_cast<const char*>(&v), 4);
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(reinterpret_cast<const char*>(tokens.data()),
           static_cast<std::streamsize>(tokens.size() * sizeof(int32_t)));
  if (!os) throw FormatError("token file write failed: " + path);
}

TokenFile load_tokens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open token file: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kToksMagic, 8) != 0)
    throw FormatError("not a token file: " + path);
  uint32_t ver = 0, vocab = 0;
  uint64_t count = 0;
  if (!is.read(reinterpret_cast<char*>(&ver), 4) || !is.read(reinterpret_cast<char*>(&vocab), 4) ||
      !is.read(reinterpret_cast<char*>(&count), 8))
    throw FormatError("token file truncated: " + path);
  if (ver != kToksVersion) throw FormatError("unsupported token file version");
  if (vocab < 2) throw FormatError("token file has invalid vocab");
  TokenFile f;
  f.vocab = vocab;
  f.tokens.resize(count);
  if (!is.read(reinterpret_cast<char*>(f.tokens.data()),
               static_cast<std::streamsize>(count * sizeof(int32_t))))
    throw FormatError("token file truncated: " + path);
  for (size_t i = 0; i < f.tokens.size(); ++i)
    if (f.tokens[i] < 0 || f.tokens[i] >= static_cast<int32_t>(vocab))
      throw FormatError("token file has out-of-range id at position " + std::to_string(i));
  return f;
}

void BatchConfig::validate() const {
  if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (val_frac < 0.0 || val_frac >= 1.0) throw ConfigError("val_frac must be in [0,1)");
}

BatchStream::BatchStream(std::vector<int32_t> tokens, int64_t vocab, BatchConfig cfg)
    : tokens_(std::move(tokens)), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  if (vocab < 2) throw DataError("vocab must be >= 2");
  for (size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] < 0 || tokens_[i] >= vocab)
      throw DataError("token out of range at position " + std::to_string(i));
  int64_t total = static_cast<int64_t>(tokens_.size());
  int64_t val_len = static_cast<int64_t>(static_cast<double>(total) * cfg_.val_frac);
  train_len_ = total - val_len;
  val_start_ = train_len_;
  auto windows_in = [&](int64_t len) { return len >= cfg_.seq_len + 1 ? (len - 1) / cfg_.seq_len : 0; };
  train_windows_ = windows_in(train_len_);
  val_windows_ = windows_in(val_len);
  if (train_windows_ < 1) throw DataError("stream too short for a single train window");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_.resize(static_cast<size_t>(train_windows_));
  for (int64_t i = 0; i < train_windows_; ++i) order_[static_cast<size_t>(i)] = i;
  for (int64_t i = train_windows_ - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng_.uniform_below(static_cast<uint64_t>(i + 1)));
    std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
  }
  cursor_ = 0;
}

void BatchStream::fill_window(Batch& b, int64_t slot, int64_t start) const {
  int64_t n = cfg_.seq_len;
  for (int64_t j = 0; j < n; ++j) {
    b.inputs[static_cast<size_t>(slot * n + j)] = tokens_[static_cast<size_t>(start + j)];
    b.targets[static_cast<size_t>(slot * n + j)] = tokens_[static_cast<size_t>(start + j + 1)];
  }
}

Batch BatchStream::next_train() {
  Batch b;
  b.batch_size = cfg_.batch_size;
  b.seq_len = cfg_.seq_len;
  b.inputs.resize(static_cast<size_t>(cfg_.batch_size * cfg_.seq_len));
  b.targets.resize(b.inputs.size());
  for (int64_t s = 0; s < cfg_.batch_size; ++s) {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    int64_t w = order_[cursor_++];
    fill_window(b, s, w * cfg_.seq_len);
  }
  return b;
}

Batch BatchStream::val_batch(int64_t index) const {
  if (index < 0 || index >= val_batch_count())
    throw UsageError("validation batch index out of range");
  Batch b;
  b.batch_size = cfg_.batch_size;
  b.seq_len = cfg_.seq_len;
  b.inputs.resize(static_cast<size_t>(cfg_.batch_size * cfg_.seq_len));
  b.targets.resize(b.inputs.size());
  for (int64_t s = 0; s < cfg_.batch_size; ++s) {
    int64_t w = index * cfg_.batch_size + s;
    fill_window(b, s, val_start_ + w * cfg_.seq_len);
  }
  return b;
}

}  // namespace declab
