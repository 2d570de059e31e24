#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spectral {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training or evaluation batch: `inputs` and `targets` are batch x seq
/// row-major token ids, targets shifted one position ahead.
struct Batch {
  std::int64_t batch = 0;
  std::int64_t seq = 0;
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::int64_t> offsets;  // start of each window in the encoded corpus

  friend bool operator==(const Batch&, const Batch&) = default;
};

/// Character-level corpus. Characters are Unicode code points decoded from
/// UTF-8; the vocabulary is sorted by code point.
class CharCorpus {
 public:
  static CharCorpus from_text(std::string_view utf8_text, double train_fraction = 0.9);
  static CharCorpus load(const std::filesystem::path& path, double train_fraction = 0.9);

  std::int64_t size() const { return static_cast<std::int64_t>(encoded_.size()); }
  std::int64_t vocab_size() const { return static_cast<std::int64_t>(vocab_.size()); }
  const std::vector<char32_t>& vocab() const { return vocab_; }
  const std::vector<std::int32_t>& encoded() const { return encoded_; }
  /// floor(train_fraction * size()); train is [0, split), val is [split, size()).
  std::int64_t split() const { return split_; }
  std::span<const std::int32_t> train() const;
  std::span<const std::int32_t> val() const;

  std::vector<std::int32_t> encode(std::string_view utf8_text) const;
  std::string decode(std::span<const std::int32_t> ids) const;

 private:
  std::vector<char32_t> vocab_;
  std::vector<std::int32_t> encoded_;
  std::int64_t split_ = 0;
};

enum class Segment { train, val };

/// Deterministic batch source over one corpus segment. Batch number `counter`
/// depends only on (seed, counter): each window start is a uniform draw from
/// [0, len - seq - 1] using a generator seeded with derive_seed(seed, counter).
class BatchStream {
 public:
  BatchStream(const CharCorpus& corpus, Segment segment, std::int64_t batch_size, std::int64_t seq,
              std::uint64_t seed);

  Batch next();
  /// Batch number `counter` without advancing the stream.
  Batch at(std::uint64_t counter) const;
  std::uint64_t counter() const { return counter_; }

 private:
  std::span<const std::int32_t> tokens_;
  std::int64_t base_offset_;
  std::int64_t batch_size_;
  std::int64_t seq_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// The fixed held-out set: `count` batches from the validation segment under
/// a dedicated seed, drawn once and reused at every evaluation.
std::vector<Batch> val_eval_batches(const CharCorpus& corpus, std::uint64_t seed, std::int64_t count = 50,
                                    std::int64_t batch_size = 32, std::int64_t seq = 128);

}  // namespace spectral
