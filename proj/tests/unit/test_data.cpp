#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "spectral/data.hpp"

using namespace spectral;

namespace {

std::string synthetic_text(std::size_t n) {
  std::string s;
  s.reserve(n);
  std::uint64_t x = 12345;
  for (std::size_t i = 0; i < n; ++i) {
    x = x * 6364136223846793005ULL + 1442695040888963407ULL;
    s.push_back("abcdefgh ij\n"[(x >> 33) % 12]);
  }
  return s;
}

}  // namespace

TEST_CASE("tiny corpus vocabulary and encoding") {
  const auto c = CharCorpus::from_text("abab");
  REQUIRE(c.vocab_size() == 2);
  CHECK(c.vocab()[0] == U'a');
  CHECK(c.vocab()[1] == U'b');
  CHECK(c.encoded() == std::vector<std::int32_t>{0, 1, 0, 1});
  CHECK(c.split() == 3);  // floor(0.9 * 4)
}

TEST_CASE("decode inverts encode, including multi-byte characters") {
  const std::string text = "To be, or not to be: caf\xC3\xA9 \xE2\x80\x94 \xF0\x9F\x8E\xAD!\n";
  const auto c = CharCorpus::from_text(text);
  CHECK(c.decode(c.encoded()) == text);
  CHECK(c.decode(c.encode("be caf\xC3\xA9")) == "be caf\xC3\xA9");
  CHECK(c.size() == 31);
  for (std::size_t i = 1; i < c.vocab().size(); ++i) CHECK(c.vocab()[i - 1] < c.vocab()[i]);
}

TEST_CASE("train and val are contiguous and disjoint") {
  const auto c = CharCorpus::from_text(synthetic_text(1001));
  CHECK(c.split() == 900);
  CHECK(c.train().size() == 900);
  CHECK(c.val().size() == 101);
  CHECK(c.train().data() + c.train().size() == c.val().data());
}

TEST_CASE("corpus errors") {
  CHECK_THROWS_AS(CharCorpus::from_text(""), DataError);
  CHECK_THROWS_AS(CharCorpus::from_text("ab\xC3"), DataError);
  CHECK_THROWS_AS(CharCorpus::from_text("\xFF"), DataError);
  CHECK_THROWS_AS(CharCorpus::load("/nonexistent/corpus.txt"), DataError);
  const auto c = CharCorpus::from_text("abc");
  CHECK_THROWS_AS(c.encode("z"), DataError);
  CHECK_THROWS_AS(c.decode(std::vector<std::int32_t>{3}), DataError);

  const auto path = std::filesystem::temp_directory_path() / "spectral_test_empty.txt";
  std::ofstream(path).close();
  CHECK_THROWS_AS(CharCorpus::load(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("batch streams are deterministic and in bounds") {
  const auto c = CharCorpus::from_text(synthetic_text(20000));
  BatchStream a(c, Segment::train, 32, 128, 77);
  BatchStream b(c, Segment::train, 32, 128, 77);
  BatchStream other(c, Segment::train, 32, 128, 78);
  for (int i = 0; i < 5; ++i) {
    const Batch x = a.next();
    CHECK(x == b.next());
    CHECK_FALSE(x == other.next());
    CHECK(x == a.at(static_cast<std::uint64_t>(i)));
    REQUIRE(x.inputs.size() == 32u * 128u);
    for (std::int64_t r = 0; r < 32; ++r) {
      const auto off = x.offsets[static_cast<std::size_t>(r)];
      CHECK(off >= 0);
      CHECK(off + 128 + 1 <= c.split());
      for (std::int64_t t = 0; t < 128; ++t) {
        const auto idx = static_cast<std::size_t>(r * 128 + t);
        CHECK(x.inputs[idx] == c.encoded()[static_cast<std::size_t>(off + t)]);
        CHECK(x.targets[idx] == c.encoded()[static_cast<std::size_t>(off + t + 1)]);
      }
    }
  }
  CHECK(a.counter() == 5);
}

TEST_CASE("val batches stay inside the val segment") {
  const auto c = CharCorpus::from_text(synthetic_text(20000));
  const auto batches = val_eval_batches(c, 5);
  REQUIRE(batches.size() == 50);
  CHECK(batches == val_eval_batches(c, 5));
  for (const auto& b : batches) {
    for (auto off : b.offsets) {
      CHECK(off >= c.split());
      CHECK(off + 128 + 1 <= c.size());
    }
  }
}

TEST_CASE("window starts are uniform") {
  // 10,000 draws over 265 possible starts; each bin count is
  // binomial(N, 1/265).
  const auto c = CharCorpus::from_text(synthetic_text(300));
  const std::int64_t seq = 5;
  const auto len = static_cast<std::int64_t>(c.train().size());  // 270
  const std::int64_t starts = len - seq;
  BatchStream stream(c, Segment::train, 1, seq, 4);
  std::vector<int> hist(static_cast<std::size_t>(starts), 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++hist[static_cast<std::size_t>(stream.next().offsets[0])];
  const double p = 1.0 / static_cast<double>(starts);
  const double mean = draws * p;
  const double sd = std::sqrt(draws * p * (1 - p));
  int outside = 0;
  for (int h : hist) outside += std::abs(h - mean) > 3 * sd ? 1 : 0;
  // ~0.27% of bins may fall outside 3 sigma by chance
  CHECK(outside <= 3);
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - mean) * (h - mean) / mean;
  // dof = 264; threshold is mean + 4 sd of chi-square
  CHECK(chi2 < (starts - 1) + 4 * std::sqrt(2.0 * (starts - 1)));
}

TEST_CASE("segments too short for one window are rejected") {
  const auto c = CharCorpus::from_text(synthetic_text(100));
  CHECK_THROWS_AS(BatchStream(c, Segment::val, 1, 9, 1), DataError);
  CHECK_NOTHROW(BatchStream(c, Segment::val, 1, 8, 1));
  CHECK_THROWS_AS(BatchStream(c, Segment::train, 0, 8, 1), DataError);
}
