#include "spectral/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "spectral/rng.hpp"

namespace spectral {

namespace {

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3;
      cp = lead & 0x07;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + static_cast<std::size_t>(extra) >= text.size()) {
      throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
      if ((cont & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace

CharCorpus CharCorpus::from_text(std::string_view utf8_text, double train_fraction) {
  if (utf8_text.empty()) throw DataError("corpus is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("train fraction must lie in (0, 1)");
  const auto chars = decode_utf8(utf8_text);
  CharCorpus corpus;
  corpus.vocab_ = chars;
  std::sort(corpus.vocab_.begin(), corpus.vocab_.end());
  corpus.vocab_.erase(std::unique(corpus.vocab_.begin(), corpus.vocab_.end()), corpus.vocab_.end());
  corpus.encoded_.reserve(chars.size());
  for (char32_t c : chars) {
    const auto it = std::lower_bound(corpus.vocab_.begin(), corpus.vocab_.end(), c);
    corpus.encoded_.push_back(static_cast<std::int32_t>(it - corpus.vocab_.begin()));
  }
  corpus.split_ = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(chars.size())));
  return corpus;
}

CharCorpus CharCorpus::load(const std::filesystem::path& path, double train_fraction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw DataError("corpus '" + path.string() + "' is empty");
  return from_text(text, train_fraction);
}

std::span<const std::int32_t> CharCorpus::train() const {
  return std::span<const std::int32_t>(encoded_).first(static_cast<std::size_t>(split_));
}

std::span<const std::int32_t> CharCorpus::val() const {
  return std::span<const std::int32_t>(encoded_).subspan(static_cast<std::size_t>(split_));
}

std::vector<std::int32_t> CharCorpus::encode(std::string_view utf8_text) const {
  std::vector<std::int32_t> ids;
  for (char32_t c : decode_utf8(utf8_text)) {
    const auto it = std::lower_bound(vocab_.begin(), vocab_.end(), c);
    if (it == vocab_.end() || *it != c) {
      throw DataError("character U+" + std::to_string(static_cast<std::uint32_t>(c)) + " is not in the vocabulary");
    }
    ids.push_back(static_cast<std::int32_t>(it - vocab_.begin()));
  }
  return ids;
}

std::string CharCorpus::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id < 0 || id >= vocab_size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    append_utf8(out, vocab_[static_cast<std::size_t>(id)]);
  }
  return out;
}

BatchStream::BatchStream(const CharCorpus& corpus, Segment segment, std::int64_t batch_size, std::int64_t seq,
                         std::uint64_t seed)
    : tokens_(segment == Segment::train ? corpus.train() : corpus.val()),
      base_offset_(segment == Segment::train ? 0 : corpus.split()),
      batch_size_(batch_size),
      seq_(seq),
      seed_(seed) {
  if (batch_size < 1 || seq < 1) throw DataError("batch size and sequence length must be positive");
  if (static_cast<std::int64_t>(tokens_.size()) <= seq + 1) {
    throw DataError("segment of " + std::to_string(tokens_.size()) + " tokens is too short for windows of " +
                    std::to_string(seq + 1));
  }
}

Batch BatchStream::at(std::uint64_t counter) const {
  Rng rng(derive_seed(seed_, counter));
  const auto span = static_cast<std::uint64_t>(tokens_.size()) - static_cast<std::uint64_t>(seq_);
  Batch b;
  b.batch = batch_size_;
  b.seq = seq_;
  b.inputs.resize(static_cast<std::size_t>(batch_size_ * seq_));
  b.targets.resize(b.inputs.size());
  b.offsets.resize(static_cast<std::size_t>(batch_size_));
  for (std::int64_t r = 0; r < batch_size_; ++r) {
    // start in [0, len - seq - 1] so the shifted target window fits
    const auto start = static_cast<std::int64_t>(rng.uniform_below(span));
    b.offsets[static_cast<std::size_t>(r)] = base_offset_ + start;
    std::copy_n(tokens_.begin() + start, seq_, b.inputs.begin() + r * seq_);
    std::copy_n(tokens_.begin() + start + 1, seq_, b.targets.begin() + r * seq_);
  }
  return b;
}

Batch BatchStream::next() { return at(counter_++); }

std::vector<Batch> val_eval_batches(const CharCorpus& corpus, std::uint64_t seed, std::int64_t count,
                                    std::int64_t batch_size, std::int64_t seq) {
  BatchStream stream(corpus, Segment::val, batch_size, seq, seed);
  std::vector<Batch> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(stream.next());
  return out;
}

}  // namespace spectral
